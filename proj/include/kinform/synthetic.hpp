#pragma once

// Latent-factor family generator.
//
//   family latent   z_f ~ N(0, sigma_pop^2 I)
//   member latent   m   = z_f + offset(role) + N(0, sigma_kin^2 I)
//   observation     x   = m + N(0, sigma_obs^2 I)
//
// Embedding mode stores x directly; pixel mode renders x through a fixed
// bank of smooth colour patterns into an 8-bit RGB crop.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "kinform/dataset.hpp"
#include "kinform/rng.hpp"

namespace kinform {

struct CountRange {
  int min = 0;
  int max = 0;
};

enum class ImbalanceProfile { Uniform, RfiwLike };
enum class ImageMode { Embedding, Pixels };

inline std::string_view profile_name(ImbalanceProfile p) {
  return p == ImbalanceProfile::RfiwLike ? "rfiw-like" : "uniform";
}

inline ImbalanceProfile parse_profile(std::string_view s) {
  if (s == "rfiw-like") return ImbalanceProfile::RfiwLike;
  if (s == "uniform") return ImbalanceProfile::Uniform;
  throw ConfigError("unknown imbalance profile '" + std::string(s) + "' (uniform | rfiw-like)");
}

struct SyntheticConfig {
  std::size_t n_families = 100;
  // Members per role, indexed by Role (F, M, S, D, GF, GM).
  std::array<CountRange, 6> members_per_role = {{{1, 1}, {1, 1}, {0, 3}, {0, 3}, {0, 0}, {0, 0}}};
  CountRange images_per_member = {1, 4};
  std::size_t latent_dim = 16;
  double sigma_kin = 0.5;
  double sigma_pop = 1.0;
  double sigma_obs = 0.3;
  double role_offset = 0.5;
  ImbalanceProfile imbalance = ImbalanceProfile::Uniform;
  /// rfiw-like: log-std of the per-family activity multiplier.
  double activity_log_std = 1.4;
  int max_images_per_member = 400;
  ImageMode mode = ImageMode::Embedding;
  std::size_t image_side = 16;

  void validate() const {
    if (n_families == 0) throw ConfigError("synthetic: n_families must be positive");
    if (latent_dim == 0) throw ConfigError("synthetic: latent_dim must be positive");
    for (const auto& r : members_per_role) {
      if (r.min < 0 || r.max < r.min) throw ConfigError("synthetic: invalid members-per-role range");
    }
    if (images_per_member.min < 1 || images_per_member.max < images_per_member.min) {
      throw ConfigError("synthetic: invalid images-per-member range");
    }
    if (!(sigma_kin >= 0.0 && sigma_pop > 0.0 && sigma_obs >= 0.0)) {
      throw ConfigError("synthetic: noise levels must be non-negative");
    }
    if (!(sigma_kin < sigma_pop)) {
      throw ConfigError("synthetic: sigma_kin must be smaller than sigma_pop");
    }
    if (mode == ImageMode::Pixels && image_side < 4) throw ConfigError("synthetic: image_side too small");
  }
};

namespace detail {

/// Smooth colour patterns, one per latent dimension, each of size side*side*3.
inline std::vector<std::vector<double>> render_basis(std::size_t latent_dim, std::size_t side,
                                                     std::uint64_t seed) {
  Rng rng = make_rng(seed, "render-basis");
  std::vector<std::vector<double>> basis(latent_dim, std::vector<double>(side * side * 3));
  for (auto& b : basis) {
    const double fy = uniform(rng, -2.0, 2.0), fx = uniform(rng, -2.0, 2.0);
    std::array<double, 3> phase, gain;
    for (int c = 0; c < 3; ++c) {
      phase[c] = uniform(rng, 0.0, 2 * std::numbers::pi);
      gain[c] = uniform(rng, 0.5, 1.0);
    }
    double norm = 0;
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        for (int c = 0; c < 3; ++c) {
          const double t = 2 * std::numbers::pi * (fy * y + fx * x) / static_cast<double>(side);
          const double v = gain[c] * std::sin(t + phase[c]);
          b[(y * side + x) * 3 + c] = v;
          norm += v * v;
        }
    norm = std::sqrt(norm / static_cast<double>(b.size()));
    for (auto& v : b) v /= norm;
  }
  return basis;
}

inline PixelImage render(const std::vector<double>& latent, const std::vector<std::vector<double>>& basis,
                         std::size_t side) {
  PixelImage img;
  img.width = img.height = static_cast<std::uint32_t>(side);
  img.pixels.resize(side * side * 3);
  const double gain = 48.0 / std::sqrt(static_cast<double>(latent.size()));
  for (std::size_t p = 0; p < img.pixels.size(); ++p) {
    double v = 0;
    for (std::size_t i = 0; i < latent.size(); ++i) v += latent[i] * basis[i][p];
    img.pixels[p] = static_cast<std::uint8_t>(std::clamp(std::lround(127.5 + gain * v), 0L, 255L));
  }
  return img;
}

}  // namespace detail

inline Dataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset ds;
  Rng rng = make_rng(seed, "synthetic");
  const std::size_t dim = cfg.latent_dim;

  std::array<std::vector<double>, 6> offsets;
  {
    Rng orng = make_rng(seed, "role-offsets");
    for (auto& o : offsets) {
      o.resize(dim);
      for (auto& v : o) v = cfg.role_offset * normal(orng);
    }
  }
  std::vector<std::vector<double>> basis;
  if (cfg.mode == ImageMode::Pixels) basis = detail::render_basis(dim, cfg.image_side, seed);

  const double mean_images = 0.5 * (cfg.images_per_member.min + cfg.images_per_member.max);
  static constexpr std::array<Role, 6> kRoles = {Role::F, Role::M, Role::S, Role::D, Role::GF, Role::GM};

  for (std::size_t f = 0; f < cfg.n_families; ++f) {
    Family fam;
    fam.id = "F" + std::to_string(f + 1);
    std::vector<double> z(dim);
    for (auto& v : z) v = cfg.sigma_pop * normal(rng);
    const double activity = cfg.imbalance == ImbalanceProfile::RfiwLike
                                ? std::exp(cfg.activity_log_std * normal(rng))
                                : 1.0;
    int serial = 0;
    for (std::size_t r = 0; r < kRoles.size(); ++r) {
      const auto range = cfg.members_per_role[r];
      const long count = uniform_int(rng, range.min, range.max);
      for (long k = 0; k < count; ++k) {
        Member mem;
        mem.id = fam.id + "_MID" + std::to_string(++serial);
        mem.family = ds.families.size();
        mem.role = kRoles[r];
        std::vector<double> latent(dim);
        for (std::size_t i = 0; i < dim; ++i) latent[i] = z[i] + offsets[r][i] + cfg.sigma_kin * normal(rng);

        long n_images;
        if (cfg.imbalance == ImbalanceProfile::RfiwLike) {
          const double jitter = std::exp(0.3 * normal(rng));
          n_images = std::lround(mean_images * activity * jitter);
          n_images = std::clamp<long>(n_images, cfg.images_per_member.min, cfg.max_images_per_member);
        } else {
          n_images = uniform_int(rng, cfg.images_per_member.min, cfg.images_per_member.max);
        }
        for (long i = 0; i < n_images; ++i) {
          std::vector<double> obs(dim);
          for (std::size_t j = 0; j < dim; ++j) obs[j] = latent[j] + cfg.sigma_obs * normal(rng);
          ImageRecord rec;
          rec.path = mem.id + "_" + std::to_string(i + 1);
          if (cfg.mode == ImageMode::Embedding) {
            rec.embedding = std::vector<Real>(obs.begin(), obs.end());
          } else {
            rec.pixels = detail::render(obs, basis, cfg.image_side);
          }
          mem.images.push_back(ds.images.size());
          ds.images.push_back(std::move(rec));
        }
        fam.members.push_back(ds.members.size());
        ds.members.push_back(std::move(mem));
      }
    }
    ds.families.push_back(std::move(fam));
  }
  return ds;
}

}  // namespace kinform
