#pragma once

// Families, members, images and kinship-labeled pairs.

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kinform/error.hpp"
#include "kinform/rng.hpp"
#include "kinform/tensor.hpp"

namespace kinform {

enum class KinshipClass : std::uint8_t { BB, SS, SIBS, FD, FS, MD, MS, GFGD, GFGS, GMGD, GMGS };

inline constexpr std::array<KinshipClass, 11> kAllClasses = {
    KinshipClass::BB,   KinshipClass::SS,   KinshipClass::SIBS, KinshipClass::FD,
    KinshipClass::FS,   KinshipClass::MD,   KinshipClass::MS,   KinshipClass::GFGD,
    KinshipClass::GFGS, KinshipClass::GMGD, KinshipClass::GMGS};

/// The trained set, in canonical head order.
inline constexpr std::array<KinshipClass, 7> kTrainedClasses = {
    KinshipClass::BB, KinshipClass::SS, KinshipClass::SIBS, KinshipClass::FD,
    KinshipClass::FS, KinshipClass::MD, KinshipClass::MS};
inline constexpr std::size_t kNumHeads = kTrainedClasses.size();

inline std::string_view class_tag(KinshipClass c) {
  static constexpr std::array<std::string_view, 11> tags = {
      "BB", "SS", "SIBS", "FD", "FS", "MD", "MS", "GFGD", "GFGS", "GMGD", "GMGS"};
  return tags[static_cast<std::size_t>(c)];
}

/// Report-style label ("B-B", "SIBS", "GF-GD").
inline std::string_view class_label(KinshipClass c) {
  static constexpr std::array<std::string_view, 11> labels = {
      "B-B", "S-S", "SIBS", "F-D", "F-S", "M-D", "M-S", "GF-GD", "GF-GS", "GM-GD", "GM-GS"};
  return labels[static_cast<std::size_t>(c)];
}

inline KinshipClass parse_class(std::string_view text) {
  for (KinshipClass c : kAllClasses) {
    if (text == class_tag(c) || text == class_label(c)) return c;
  }
  throw DatasetError("unknown kinship class '" + std::string(text) + "'");
}

/// Gender-symmetric classes share one weighting vector across sides.
inline bool is_symmetric(KinshipClass c) {
  return c == KinshipClass::BB || c == KinshipClass::SS || c == KinshipClass::FS ||
         c == KinshipClass::MD;
}

inline bool is_grandparent_class(KinshipClass c) {
  return static_cast<std::size_t>(c) >= static_cast<std::size_t>(KinshipClass::GFGD);
}

/// Position of `c` in the canonical head order.
inline std::size_t head_index(KinshipClass c) {
  if (is_grandparent_class(c)) {
    throw DatasetError("class " + std::string(class_tag(c)) + " has no trained head");
  }
  return static_cast<std::size_t>(c);
}

enum class Role : std::uint8_t { F, M, S, D, GF, GM, Other };

inline std::string_view role_tag(Role r) {
  static constexpr std::array<std::string_view, 7> tags = {"F", "M", "S", "D", "GF", "GM", "other"};
  return tags[static_cast<std::size_t>(r)];
}

inline Role parse_role(std::string_view text) {
  for (std::size_t i = 0; i < 7; ++i) {
    const Role r = static_cast<Role>(i);
    if (text == role_tag(r)) return r;
  }
  throw DatasetError("unknown role '" + std::string(text) + "'");
}

/// Which roles sit on the left (phi) and right (psi) side of a class.
struct RolePattern {
  Role left;
  Role right;
  bool same_role() const { return left == right; }
};

inline RolePattern role_pattern(KinshipClass c) {
  switch (c) {
    case KinshipClass::BB: return {Role::S, Role::S};
    case KinshipClass::SS: return {Role::D, Role::D};
    case KinshipClass::SIBS: return {Role::S, Role::D};
    case KinshipClass::FD: return {Role::F, Role::D};
    case KinshipClass::FS: return {Role::F, Role::S};
    case KinshipClass::MD: return {Role::M, Role::D};
    case KinshipClass::MS: return {Role::M, Role::S};
    case KinshipClass::GFGD: return {Role::GF, Role::D};
    case KinshipClass::GFGS: return {Role::GF, Role::S};
    case KinshipClass::GMGD: return {Role::GM, Role::D};
    case KinshipClass::GMGS: return {Role::GM, Role::S};
  }
  throw DatasetError("unknown kinship class");
}

struct PixelImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  static constexpr std::uint32_t channels = 3;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved RGB

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const PixelImage&) const = default;
};

/// An aligned face crop, or a precomputed embedding standing in for one.
struct ImageRecord {
  std::optional<PixelImage> pixels;
  std::optional<std::vector<Real>> embedding;
  std::string path;

  bool is_embedding() const { return embedding.has_value(); }
  void validate() const {
    if (pixels.has_value() == embedding.has_value()) {
      throw DatasetError("image record '" + path + "' must hold exactly one of pixels or embedding");
    }
    if (pixels && pixels->pixels.size() != std::size_t{pixels->width} * pixels->height * 3) {
      throw DatasetError("image record '" + path + "' pixel payload does not match its size");
    }
  }
  bool same_content(const ImageRecord& other) const {
    return pixels == other.pixels && embedding == other.embedding;
  }
};

struct Member {
  std::string id;
  std::size_t family = 0;
  Role role = Role::Other;
  std::vector<std::size_t> images;
};

struct Family {
  std::string id;
  std::vector<std::size_t> members;
};

inline constexpr std::size_t kUnknown = std::numeric_limits<std::size_t>::max();

struct PairSample {
  std::size_t image_a = kUnknown;
  std::size_t image_b = kUnknown;
  KinshipClass cls = KinshipClass::BB;
  bool positive = false;
  std::size_t family_a = kUnknown;
  std::size_t family_b = kUnknown;
  std::size_t member_a = kUnknown;
  std::size_t member_b = kUnknown;

  bool operator==(const PairSample&) const = default;
};

/// Images plus the family tree over them. Restricted-protocol pair lists use
/// the image store alone (no families or members).
struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<Member> members;
  std::vector<Family> families;

  void validate() const {
    std::set<std::string> member_ids, family_ids;
    std::vector<int> owner(images.size(), -1);
    for (const auto& img : images) img.validate();
    for (std::size_t f = 0; f < families.size(); ++f) {
      if (!family_ids.insert(families[f].id).second) {
        throw DatasetError("duplicate family id '" + families[f].id + "'");
      }
      for (std::size_t m : families[f].members) {
        if (m >= members.size() || members[m].family != f) {
          throw DatasetError("family '" + families[f].id + "' lists a member it does not own");
        }
      }
    }
    for (std::size_t m = 0; m < members.size(); ++m) {
      const Member& mem = members[m];
      if (!member_ids.insert(mem.id).second) throw DatasetError("duplicate member id '" + mem.id + "'");
      if (mem.family >= families.size()) throw DatasetError("member '" + mem.id + "' has no family");
      const auto& fm = families[mem.family].members;
      if (std::find(fm.begin(), fm.end(), m) == fm.end()) {
        throw DatasetError("member '" + mem.id + "' missing from its family list");
      }
      for (std::size_t i : mem.images) {
        if (i >= images.size()) throw DatasetError("member '" + mem.id + "' references a missing image");
        if (owner[i] != -1) throw DatasetError("image shared between members: " + images[i].path);
        owner[i] = static_cast<int>(m);
      }
    }
  }

  std::vector<std::size_t> members_with_role(std::size_t family, Role role) const {
    std::vector<std::size_t> out;
    for (std::size_t m : families[family].members) {
      if (members[m].role == role) out.push_back(m);
    }
    return out;
  }

  /// Member pairs of `family` that instantiate class `c`, in canonical order.
  std::vector<std::pair<std::size_t, std::size_t>> member_pairs(std::size_t family, KinshipClass c) const {
    const RolePattern pat = role_pattern(c);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const auto left = members_with_role(family, pat.left);
    if (pat.same_role()) {
      for (std::size_t i = 0; i < left.size(); ++i)
        for (std::size_t j = i + 1; j < left.size(); ++j) out.emplace_back(left[i], left[j]);
    } else {
      const auto right = members_with_role(family, pat.right);
      for (std::size_t a : left)
        for (std::size_t b : right) out.emplace_back(a, b);
    }
    return out;
  }

  /// |f_k|: positive image pairs of class `c` within `family`.
  std::size_t pair_count(std::size_t family, KinshipClass c) const {
    std::size_t n = 0;
    for (auto [a, b] : member_pairs(family, c)) n += members[a].images.size() * members[b].images.size();
    return n;
  }

  std::vector<std::size_t> all_family_indices() const {
    std::vector<std::size_t> out(families.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
    return out;
  }

  std::size_t family_image_count(std::size_t family) const {
    std::size_t n = 0;
    for (std::size_t m : families[family].members) n += members[m].images.size();
    return n;
  }

  bool same_content(const Dataset& other) const {
    if (images.size() != other.images.size() || members.size() != other.members.size() ||
        families.size() != other.families.size()) {
      return false;
    }
    for (std::size_t i = 0; i < images.size(); ++i)
      if (!images[i].same_content(other.images[i])) return false;
    for (std::size_t i = 0; i < members.size(); ++i) {
      const auto &a = members[i], &b = other.members[i];
      if (a.id != b.id || a.family != b.family || a.role != b.role || a.images != b.images) return false;
    }
    for (std::size_t i = 0; i < families.size(); ++i) {
      if (families[i].id != other.families[i].id || families[i].members != other.families[i].members) return false;
    }
    return true;
  }
};

/// All within-family positive pairs of class `c` over `families` (all
/// families when empty). Same-role classes emit each unordered member pair
/// once; the left member is the one listed first in the family.
inline std::vector<PairSample> enumerate_positive_pairs(const Dataset& ds, KinshipClass c,
                                                        const std::vector<std::size_t>& families = {}) {
  const auto fams = families.empty() ? ds.all_family_indices() : families;
  std::vector<PairSample> out;
  for (std::size_t f : fams) {
    for (auto [a, b] : ds.member_pairs(f, c)) {
      for (std::size_t ia : ds.members[a].images)
        for (std::size_t ib : ds.members[b].images) {
          out.push_back({ia, ib, c, true, f, f, a, b});
        }
    }
  }
  return out;
}

namespace detail {

struct PoolEntry {
  std::size_t image;
  std::size_t member;
  std::size_t family;
};

inline std::vector<PoolEntry> role_pool(const Dataset& ds, Role role, const std::vector<std::size_t>& fams) {
  std::vector<PoolEntry> pool;
  for (std::size_t f : fams)
    for (std::size_t m : ds.families[f].members)
      if (ds.members[m].role == role)
        for (std::size_t i : ds.members[m].images) pool.push_back({i, m, f});
  return pool;
}

}  // namespace detail

/// One cross-family negative per positive, each matching the positive's role
/// pattern. Draws are uniform over all valid (left image, right image) pairs
/// from different families within `families` (all when empty).
inline std::vector<PairSample> sample_negatives(const std::vector<PairSample>& positives, const Dataset& ds,
                                                std::uint64_t seed,
                                                const std::vector<std::size_t>& families = {}) {
  const auto fams = families.empty() ? ds.all_family_indices() : families;
  std::vector<PairSample> out;
  out.reserve(positives.size());
  std::map<KinshipClass, std::pair<std::vector<detail::PoolEntry>, std::vector<detail::PoolEntry>>> pools;
  std::map<KinshipClass, Rng> rngs;
  for (const PairSample& p : positives) {
    auto it = pools.find(p.cls);
    if (it == pools.end()) {
      const RolePattern pat = role_pattern(p.cls);
      auto left = detail::role_pool(ds, pat.left, fams);
      auto right = detail::role_pool(ds, pat.right, fams);
      std::set<std::size_t> lf, rf;
      for (auto& e : left) lf.insert(e.family);
      for (auto& e : right) rf.insert(e.family);
      const bool possible = !lf.empty() && !rf.empty() &&
                            !(lf.size() == 1 && rf.size() == 1 && *lf.begin() == *rf.begin());
      if (!possible) {
        throw DatasetError("cannot sample " + std::string(class_tag(p.cls)) +
                           " negatives: role pattern is not present in two different families");
      }
      it = pools.emplace(p.cls, std::make_pair(std::move(left), std::move(right))).first;
      rngs.emplace(p.cls, make_rng(seed, "negatives", static_cast<std::uint64_t>(p.cls)));
    }
    const auto& [left, right] = it->second;
    Rng& rng = rngs.at(p.cls);
    while (true) {
      const auto& a = left[uniform_index(rng, left.size())];
      const auto& b = right[uniform_index(rng, right.size())];
      if (a.family == b.family) continue;
      out.push_back({a.image, b.image, p.cls, false, a.family, b.family, a.member, b.member});
      break;
    }
  }
  return out;
}

}  // namespace kinform
