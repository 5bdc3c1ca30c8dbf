#pragma once

// Per-class epoch plans. The adaptive plan caps the number of pairs drawn per
// family at the median family pair count and draws parent-child images
// through per-member cyclic buffers; the uniform plan draws the same total
// uniformly from all positives.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "kinform/dataset.hpp"
#include "kinform/rng.hpp"

namespace kinform {

enum class SamplerKind { Adaptive, Uniform };

inline std::string_view sampler_name(SamplerKind k) { return k == SamplerKind::Adaptive ? "adaptive" : "uniform"; }

inline SamplerKind parse_sampler(std::string_view s) {
  if (s == "adaptive") return SamplerKind::Adaptive;
  if (s == "uniform") return SamplerKind::Uniform;
  throw ConfigError("unknown sampler '" + std::string(s) + "' (adaptive | uniform)");
}

/// Rotating cursor over a list of items. With `reshuffle` set, each cycle
/// (including the first) visits the items in a fresh permutation.
class CyclicBuffer {
 public:
  CyclicBuffer(std::vector<std::size_t> items, bool reshuffle = false, std::uint64_t seed = 0)
      : items_(std::move(items)), reshuffle_(reshuffle), rng_(make_rng(seed, "cyclic-buffer")) {
    if (items_.empty()) throw DatasetError("cyclic buffer over an empty list");
  }

  std::size_t next() {
    if (cursor_ == 0 && reshuffle_) shuffle(items_, rng_);
    const std::size_t v = items_[cursor_];
    if (++cursor_ == items_.size()) {
      cursor_ = 0;
      ++wraps_;
    }
    return v;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t cursor() const { return cursor_; }
  std::size_t wraps() const { return wraps_; }

 private:
  std::vector<std::size_t> items_;
  bool reshuffle_;
  Rng rng_;
  std::size_t cursor_ = 0;
  std::size_t wraps_ = 0;
};

/// Lower median: element (n-1)/2 of the sorted list.
inline std::size_t lower_median(std::vector<std::size_t> values) {
  if (values.empty()) throw DatasetError("median of an empty list");
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

/// Per-family |f_k| for class `c`, restricted to `families` (all when empty).
inline std::vector<std::size_t> family_pair_counts(const Dataset& ds, KinshipClass c,
                                                   const std::vector<std::size_t>& families = {}) {
  const auto fams = families.empty() ? ds.all_family_indices() : families;
  std::vector<std::size_t> out;
  out.reserve(fams.size());
  for (std::size_t f : fams) out.push_back(ds.pair_count(f, c));
  return out;
}

/// Median |f_k| over the families that have at least one pair of class `c`.
inline std::size_t family_cap(const Dataset& ds, KinshipClass c, const std::vector<std::size_t>& families = {}) {
  std::vector<std::size_t> nonzero;
  for (std::size_t n : family_pair_counts(ds, c, families))
    if (n > 0) nonzero.push_back(n);
  if (nonzero.empty()) throw DatasetError("no family has a " + std::string(class_tag(c)) + " pair");
  return lower_median(std::move(nonzero));
}

struct EpochPlan {
  KinshipClass cls = KinshipClass::BB;
  SamplerKind kind = SamplerKind::Adaptive;
  std::uint64_t seed = 0;
  std::size_t cap = 0;
  std::vector<PairSample> pairs;
  /// Pairs drawn per family, indexed like Dataset::families.
  std::vector<std::size_t> drawn;
};

namespace detail {

inline bool uses_cyclic_buffers(KinshipClass c) {
  return c == KinshipClass::FD || c == KinshipClass::FS || c == KinshipClass::MD || c == KinshipClass::MS;
}

/// k distinct indices from [0, n) by partial Fisher-Yates, in draw order.
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace detail

/// Adaptive plan: min(|f_k|, cap) pairs from each family in `families` (all
/// when empty).
inline EpochPlan build_epoch_plan(const Dataset& ds, KinshipClass c, std::size_t cap, std::uint64_t seed,
                                  const std::vector<std::size_t>& families = {}) {
  if (cap == 0) throw ConfigError("sampler cap must be positive");
  EpochPlan plan{c, SamplerKind::Adaptive, seed, cap, {}, std::vector<std::size_t>(ds.families.size(), 0)};
  const auto fams = families.empty() ? ds.all_family_indices() : families;
  for (std::size_t f : fams) {
    const std::size_t total = ds.pair_count(f, c);
    const std::size_t n = std::min(total, cap);
    if (n == 0) continue;
    Rng rng = make_rng(seed, "plan-" + std::string(class_tag(c)), f);
    if (detail::uses_cyclic_buffers(c)) {
      auto mpairs = ds.member_pairs(f, c);
      shuffle(mpairs, rng);
      std::map<std::size_t, CyclicBuffer> buffers;
      auto buffer = [&](std::size_t m) -> CyclicBuffer& {
        auto it = buffers.find(m);
        if (it == buffers.end()) {
          it = buffers.emplace(m, CyclicBuffer(ds.members[m].images, true, derive_seed(seed, "member-buffer", m)))
                   .first;
        }
        return it->second;
      };
      for (std::size_t k = 0; k < n; ++k) {
        const auto [a, b] = mpairs[k % mpairs.size()];
        const std::size_t ia = buffer(a).next();
        const std::size_t ib = buffer(b).next();
        plan.pairs.push_back({ia, ib, c, true, f, f, a, b});
      }
    } else {
      const auto all = enumerate_positive_pairs(ds, c, {f});
      for (std::size_t i : detail::sample_without_replacement(rng, all.size(), n)) plan.pairs.push_back(all[i]);
    }
    plan.drawn[f] = n;
  }
  return plan;
}

/// Uniform plan: the same number of pairs as the adaptive plan with `cap`,
/// drawn uniformly without replacement from all positives.
inline EpochPlan build_uniform_plan(const Dataset& ds, KinshipClass c, std::size_t cap, std::uint64_t seed,
                                    const std::vector<std::size_t>& families = {}) {
  EpochPlan plan{c, SamplerKind::Uniform, seed, cap, {}, std::vector<std::size_t>(ds.families.size(), 0)};
  const auto fams = families.empty() ? ds.all_family_indices() : families;
  std::size_t n = 0;
  for (std::size_t f : fams) n += std::min(ds.pair_count(f, c), cap);
  const auto all = enumerate_positive_pairs(ds, c, fams);
  Rng rng = make_rng(seed, "uniform-plan-" + std::string(class_tag(c)));
  for (std::size_t i : detail::sample_without_replacement(rng, all.size(), n)) {
    plan.pairs.push_back(all[i]);
    ++plan.drawn[all[i].family_a];
  }
  return plan;
}

inline EpochPlan build_plan(SamplerKind kind, const Dataset& ds, KinshipClass c, std::uint64_t seed,
                            const std::vector<std::size_t>& families = {}) {
  const std::size_t cap = family_cap(ds, c, families);
  return kind == SamplerKind::Adaptive ? build_epoch_plan(ds, c, cap, seed, families)
                                       : build_uniform_plan(ds, c, cap, seed, families);
}

/// Canonical byte encoding of a plan, for determinism checks.
inline std::string plan_bytes(const EpochPlan& plan) {
  std::ostringstream os;
  os << class_tag(plan.cls) << ' ' << sampler_name(plan.kind) << ' ' << plan.seed << ' ' << plan.cap << '\n';
  for (const auto& p : plan.pairs) {
    os << p.image_a << ' ' << p.image_b << ' ' << p.family_a << ' ' << p.member_a << ' ' << p.member_b << '\n';
  }
  for (std::size_t d : plan.drawn) os << d << ' ';
  return os.str();
}

// ---------------------------------------------------------------------------
// Balance statistics

struct Summary {
  double max = 0;
  double mean = 0;
  double std = 0;  // population
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  s.max = *std::max_element(v.begin(), v.end());
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(v.size()));
  return s;
}

struct BalanceStats {
  Summary per_family;
  Summary per_member;
};

/// Images per family and per member over `families` (all when empty).
inline BalanceStats balance_stats(const Dataset& ds, const std::vector<std::size_t>& families = {}) {
  const auto fams = families.empty() ? ds.all_family_indices() : families;
  std::vector<double> fam, mem;
  for (std::size_t f : fams) {
    fam.push_back(static_cast<double>(ds.family_image_count(f)));
    for (std::size_t m : ds.families[f].members) mem.push_back(static_cast<double>(ds.members[m].images.size()));
  }
  return {summarize(fam), summarize(mem)};
}

/// Pairs drawn per family and member participations, summed over `plans`.
/// Families and members outside `families` (all when empty) are ignored.
inline BalanceStats balance_stats(const Dataset& ds, const std::vector<EpochPlan>& plans,
                                  const std::vector<std::size_t>& families = {}) {
  const auto fams = families.empty() ? ds.all_family_indices() : families;
  std::vector<double> per_family(ds.families.size(), 0), per_member(ds.members.size(), 0);
  for (const auto& plan : plans)
    for (const auto& p : plan.pairs) {
      per_family[p.family_a] += 1;
      per_member[p.member_a] += 1;
      per_member[p.member_b] += 1;
    }
  std::vector<double> fam, mem;
  for (std::size_t f : fams) {
    fam.push_back(per_family[f]);
    for (std::size_t m : ds.families[f].members) mem.push_back(per_member[m]);
  }
  return {summarize(fam), summarize(mem)};
}

/// Rounded integer with thousands separators: 15132.4 -> "15,132".
inline std::string format_count(double v) {
  const long long n = std::llround(v);
  std::string digits = std::to_string(n < 0 ? -n : n);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return n < 0 ? "-" + out : out;
}

struct BalanceRow {
  std::string label;
  BalanceStats stats;
};

struct BalanceSection {
  std::string title;
  std::vector<BalanceRow> rows;
};

inline std::string balance_report_text(const std::vector<BalanceSection>& sections) {
  auto cell = [](const std::string& s, int w) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%*s", w, s.c_str());
    return std::string(buf);
  };
  std::ostringstream os;
  os << cell("", 6) << " | " << cell("per family", 26) << " | " << cell("per member", 26) << '\n';
  os << cell("fold", 6) << " | " << cell("max", 8) << cell("mean", 9) << cell("std", 9) << " | " << cell("max", 8)
     << cell("mean", 9) << cell("std", 9) << '\n';
  for (const auto& sec : sections) {
    os << "-- " << sec.title << '\n';
    for (const auto& r : sec.rows) {
      const auto& f = r.stats.per_family;
      const auto& m = r.stats.per_member;
      os << cell(r.label, 6) << " | " << cell(format_count(f.max), 8) << cell(format_count(f.mean), 9)
         << cell(format_count(f.std), 9) << " | " << cell(format_count(m.max), 8) << cell(format_count(m.mean), 9)
         << cell(format_count(m.std), 9) << '\n';
    }
  }
  return os.str();
}

inline std::string balance_report_csv(const std::vector<BalanceSection>& sections) {
  std::ostringstream os;
  os.precision(17);
  os << "section,fold,family_max,family_mean,family_std,member_max,member_mean,member_std\n";
  for (const auto& sec : sections)
    for (const auto& r : sec.rows) {
      const auto& f = r.stats.per_family;
      const auto& m = r.stats.per_member;
      os << sec.title << ',' << r.label << ',' << f.max << ',' << f.mean << ',' << f.std << ',' << m.max << ','
         << m.mean << ',' << m.std << '\n';
    }
  return os.str();
}

}  // namespace kinform
