#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "kinform/dataset.hpp"
#include "kinform/io.hpp"
#include "kinform/synthetic.hpp"
#include "test_util.hpp"

using namespace kinform;

namespace {

// Hand-built family: one father with `father_images`, sons with the given
// image counts.
Dataset father_and_sons(std::size_t father_images, std::vector<std::size_t> son_images) {
  Dataset ds;
  ds.families.push_back({"fam", {}});
  auto add_member = [&](const std::string& id, Role role, std::size_t n) {
    Member m{id, 0, role, {}};
    for (std::size_t i = 0; i < n; ++i) {
      m.images.push_back(ds.images.size());
      ImageRecord rec;
      rec.embedding = std::vector<Real>{static_cast<Real>(ds.images.size())};
      ds.images.push_back(rec);
    }
    ds.families[0].members.push_back(ds.members.size());
    ds.members.push_back(m);
  };
  add_member("dad", Role::F, father_images);
  for (std::size_t s = 0; s < son_images.size(); ++s) add_member("son" + std::to_string(s), Role::S, son_images[s]);
  ds.validate();
  return ds;
}

// Independent count: every ordered image pair, classified from scratch.
std::size_t brute_force_pair_count(const Dataset& ds, KinshipClass c) {
  const RolePattern pat = role_pattern(c);
  std::vector<std::size_t> owner(ds.images.size());
  for (std::size_t m = 0; m < ds.members.size(); ++m)
    for (std::size_t i : ds.members[m].images) owner[i] = m;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    for (std::size_t j = 0; j < ds.images.size(); ++j) {
      const Member& a = ds.members[owner[i]];
      const Member& b = ds.members[owner[j]];
      if (owner[i] == owner[j] || a.family != b.family) continue;
      if (a.role != pat.left || b.role != pat.right) continue;
      if (pat.same_role() && owner[i] > owner[j]) continue;
      ++n;
    }
  return n;
}

}  // namespace

TEST(KinshipClass, SymmetryFlags) {
  for (KinshipClass c : {KinshipClass::BB, KinshipClass::SS, KinshipClass::FS, KinshipClass::MD})
    EXPECT_TRUE(is_symmetric(c)) << class_tag(c);
  for (KinshipClass c : {KinshipClass::FD, KinshipClass::MS, KinshipClass::SIBS, KinshipClass::GFGD,
                         KinshipClass::GFGS, KinshipClass::GMGD, KinshipClass::GMGS})
    EXPECT_FALSE(is_symmetric(c)) << class_tag(c);
  EXPECT_EQ(kTrainedClasses.size(), 7u);
}

TEST(KinshipClass, ParsesTagsAndLabels) {
  for (KinshipClass c : kAllClasses) {
    EXPECT_EQ(parse_class(class_tag(c)), c);
    EXPECT_EQ(parse_class(class_label(c)), c);
  }
  EXPECT_THROW(parse_class("XY"), DatasetError);
  EXPECT_THROW(head_index(KinshipClass::GMGS), DatasetError);
}

TEST(EnumeratePairs, FatherSonProduct) {
  Dataset ds = father_and_sons(2, {3});
  auto pairs = enumerate_positive_pairs(ds, KinshipClass::FS);
  EXPECT_EQ(pairs.size(), 6u);
  std::set<std::pair<std::size_t, std::size_t>> distinct;
  for (const auto& p : pairs) {
    EXPECT_TRUE(p.positive);
    EXPECT_EQ(p.family_a, p.family_b);
    EXPECT_EQ(ds.members[p.member_a].role, Role::F);
    EXPECT_EQ(ds.members[p.member_b].role, Role::S);
    distinct.insert({p.image_a, p.image_b});
  }
  EXPECT_EQ(distinct.size(), 6u);
  EXPECT_EQ(ds.pair_count(0, KinshipClass::FS), 6u);
}

TEST(EnumeratePairs, BrothersAreUnordered) {
  Dataset ds = father_and_sons(1, {1, 1});
  EXPECT_EQ(enumerate_positive_pairs(ds, KinshipClass::BB).size(), 1u);
  EXPECT_EQ(enumerate_positive_pairs(ds, KinshipClass::SS).size(), 0u);
}

TEST(EnumeratePairs, MatchesBruteForceOnSyntheticSeed7) {
  SyntheticConfig cfg;
  cfg.members_per_role[static_cast<int>(Role::GF)] = {0, 1};
  cfg.members_per_role[static_cast<int>(Role::GM)] = {0, 1};
  Dataset ds = generate_synthetic(cfg, 7);
  for (KinshipClass c : kAllClasses) {
    const auto pairs = enumerate_positive_pairs(ds, c);
    EXPECT_EQ(pairs.size(), brute_force_pair_count(ds, c)) << class_tag(c);
    std::size_t via_counts = 0;
    for (std::size_t f = 0; f < ds.families.size(); ++f) via_counts += ds.pair_count(f, c);
    EXPECT_EQ(pairs.size(), via_counts) << class_tag(c);
  }
}

TEST(SampleNegatives, CountsAndCrossFamily) {
  SyntheticConfig cfg;
  cfg.n_families = 40;
  Dataset ds = generate_synthetic(cfg, 3);
  auto positives = enumerate_positive_pairs(ds, KinshipClass::FS);
  ASSERT_GE(positives.size(), 100u);
  positives.resize(100);
  auto negatives = sample_negatives(positives, ds, 99);
  ASSERT_EQ(negatives.size(), 100u);
  for (const auto& n : negatives) {
    EXPECT_FALSE(n.positive);
    EXPECT_EQ(n.cls, KinshipClass::FS);
    EXPECT_NE(n.family_a, n.family_b);
    EXPECT_EQ(ds.members[n.member_a].role, Role::F);
    EXPECT_EQ(ds.members[n.member_b].role, Role::S);
  }
  EXPECT_EQ(sample_negatives(positives, ds, 99), negatives);
  EXPECT_NE(sample_negatives(positives, ds, 100), negatives);
}

TEST(SampleNegatives, BalancedPerClass) {
  SyntheticConfig cfg;
  cfg.n_families = 30;
  Dataset ds = generate_synthetic(cfg, 4);
  for (KinshipClass c : kTrainedClasses) {
    auto pos = enumerate_positive_pairs(ds, c);
    if (pos.empty()) continue;
    auto neg = sample_negatives(pos, ds, 1);
    EXPECT_EQ(pos.size(), neg.size()) << class_tag(c);
  }
}

TEST(SampleNegatives, SingleFamilyIsAnError) {
  Dataset ds = father_and_sons(2, {3});
  auto positives = enumerate_positive_pairs(ds, KinshipClass::FS);
  EXPECT_THROW(sample_negatives(positives, ds, 1), DatasetError);
}

TEST(Synthetic, TwoMinimalFamilies) {
  SyntheticConfig cfg;
  cfg.n_families = 2;
  cfg.members_per_role = {{{1, 1}, {1, 1}, {1, 1}, {1, 1}, {0, 0}, {0, 0}}};
  cfg.images_per_member = {1, 1};
  Dataset ds = generate_synthetic(cfg, 1);
  ASSERT_EQ(ds.families.size(), 2u);
  for (std::size_t f = 0; f < 2; ++f) {
    EXPECT_EQ(ds.pair_count(f, KinshipClass::FS), 1u);
    EXPECT_EQ(ds.pair_count(f, KinshipClass::FD), 1u);
    EXPECT_EQ(ds.pair_count(f, KinshipClass::MS), 1u);
    EXPECT_EQ(ds.pair_count(f, KinshipClass::MD), 1u);
    EXPECT_EQ(ds.pair_count(f, KinshipClass::BB), 0u);
  }
}

TEST(Synthetic, RejectsInvalidConfig) {
  SyntheticConfig cfg;
  cfg.sigma_kin = 2.0;
  cfg.sigma_pop = 1.0;
  EXPECT_THROW(generate_synthetic(cfg, 1), ConfigError);
  cfg = {};
  cfg.images_per_member = {3, 2};
  EXPECT_THROW(generate_synthetic(cfg, 1), ConfigError);
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticConfig cfg;
  cfg.n_families = 10;
  EXPECT_TRUE(generate_synthetic(cfg, 5).same_content(generate_synthetic(cfg, 5)));
  EXPECT_FALSE(generate_synthetic(cfg, 5).same_content(generate_synthetic(cfg, 6)));
}

TEST(Synthetic, ZeroKinNoiseMakesSiblingsIdentical) {
  SyntheticConfig cfg;
  cfg.n_families = 5;
  cfg.members_per_role = {{{0, 0}, {0, 0}, {2, 2}, {0, 0}, {0, 0}, {0, 0}}};
  cfg.images_per_member = {1, 1};
  cfg.sigma_kin = 0.0;
  cfg.sigma_obs = 0.0;
  Dataset ds = generate_synthetic(cfg, 9);
  for (const auto& p : enumerate_positive_pairs(ds, KinshipClass::BB)) {
    EXPECT_EQ(*ds.images[p.image_a].embedding, *ds.images[p.image_b].embedding);
  }
  // With observation noise only, the gap is observation-noise sized.
  cfg.sigma_obs = 0.1;
  ds = generate_synthetic(cfg, 9);
  for (const auto& p : enumerate_positive_pairs(ds, KinshipClass::BB)) {
    const auto& a = *ds.images[p.image_a].embedding;
    const auto& b = *ds.images[p.image_b].embedding;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT(std::abs(a[i] - b[i]), 10 * std::sqrt(2.0) * 0.1);
  }
}

TEST(Synthetic, KinAreCloserThanNonKin) {
  SyntheticConfig cfg;
  cfg.n_families = 200;
  Dataset ds = generate_synthetic(cfg, 21);
  auto dist = [&](const PairSample& p) {
    const auto& a = *ds.images[p.image_a].embedding;
    const auto& b = *ds.images[p.image_b].embedding;
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  std::vector<double> kin, non;
  for (KinshipClass c : kTrainedClasses) {
    auto pos = enumerate_positive_pairs(ds, c);
    auto neg = sample_negatives(pos, ds, 2);
    for (const auto& p : pos) kin.push_back(dist(p));
    for (const auto& p : neg) non.push_back(dist(p));
  }
  ASSERT_GE(kin.size(), 1000u);
  auto mean_se = [](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= v.size();
    double var = 0;
    for (double x : v) var += (x - m) * (x - m);
    var /= (v.size() - 1);
    return std::make_pair(m, std::sqrt(var / v.size()));
  };
  auto [mk, sk] = mean_se(kin);
  auto [mn, sn] = mean_se(non);
  EXPECT_GT(mn - mk, 3.0 * std::sqrt(sk * sk + sn * sn)) << "kin " << mk << " non-kin " << mn;
}

TEST(Synthetic, PixelModeRendersCrops) {
  SyntheticConfig cfg;
  cfg.n_families = 3;
  cfg.mode = ImageMode::Pixels;
  cfg.image_side = 12;
  Dataset ds = generate_synthetic(cfg, 2);
  for (const auto& img : ds.images) {
    ASSERT_TRUE(img.pixels.has_value());
    EXPECT_EQ(img.pixels->width, 12u);
    EXPECT_EQ(img.pixels->pixels.size(), 12u * 12u * 3u);
  }
}

TEST(Io, PairListParses) {
  test::TempDir dir;
  Dataset ds = father_and_sons(1, {2});
  io::write_family_tree(ds, dir.path());
  {
    std::ofstream os(dir.path() / "pairs.csv");
    os << "image_a,image_b,class,label\n"
       << "images/dad_1.ktns,images/son0_1.ktns,FS,1\n"
       << "images/dad_1.ktns,images/son0_2.ktns,F-S,1\n"
       << "images/son0_1.ktns,images/dad_1.ktns,MD,0\n";
  }
  auto list = io::load_pair_list(dir.path() / "pairs.csv");
  ASSERT_EQ(list.pairs.size(), 3u);
  EXPECT_EQ(list.pairs[0].cls, KinshipClass::FS);
  EXPECT_EQ(list.pairs[1].cls, KinshipClass::FS);
  EXPECT_EQ(list.pairs[2].cls, KinshipClass::MD);
  EXPECT_FALSE(list.pairs[2].positive);
  EXPECT_EQ(list.images.images.size(), 3u);
  EXPECT_EQ(list.pairs[0].image_a, list.pairs[2].image_b);
}

TEST(Io, PairListErrorsCarryLineNumbers) {
  test::TempDir dir;
  {
    std::ofstream os(dir.path() / "bad.csv");
    os << "a.ppm,b.ppm,FS,1\n"
       << "a.ppm,b.ppm,XX,1\n";
  }
  try {
    io::load_pair_list(dir.path() / "bad.csv");
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  {
    std::ofstream os(dir.path() / "missing.csv");
    os << "a.ppm,b.ppm,FS,1\n";
  }
  try {
    io::load_pair_list(dir.path() / "missing.csv");
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("a.ppm"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("b.ppm"), std::string::npos);
  }
  EXPECT_THROW(io::load_pair_list(dir.path() / "nope.csv"), IoError);
}

TEST(Io, FamilyTreeRejectsDuplicateMember) {
  test::TempDir dir;
  Dataset ds = father_and_sons(1, {1});
  io::write_family_tree(ds, dir.path());
  {
    std::ofstream os(dir.path() / "families.tsv", std::ios::app);
    os << "other\tdad\tF\timages/dad_1.ktns\n";
  }
  EXPECT_THROW(io::load_family_tree(dir.path() / "families.tsv"), DatasetError);
}

TEST(Io, FamilyTreeRoundTrip) {
  test::TempDir dir;
  SyntheticConfig cfg;
  cfg.n_families = 6;
  Dataset ds = generate_synthetic(cfg, 12);
  io::write_family_tree(ds, dir.path() / "emb");
  Dataset back = io::load_family_tree(dir.path() / "emb" / "families.tsv");
  EXPECT_TRUE(back.same_content(ds));

  cfg.mode = ImageMode::Pixels;
  cfg.image_side = 8;
  Dataset px = generate_synthetic(cfg, 12);
  io::write_family_tree(px, dir.path() / "px");
  EXPECT_TRUE(io::load_family_tree(dir.path() / "px" / "families.tsv").same_content(px));
}

TEST(Io, LoadersAreDeterministic) {
  test::TempDir dir;
  SyntheticConfig cfg;
  cfg.n_families = 4;
  io::write_family_tree(generate_synthetic(cfg, 1), dir.path());
  auto a = io::load_family_tree(dir.path() / "families.tsv");
  auto b = io::load_family_tree(dir.path() / "families.tsv");
  EXPECT_TRUE(a.same_content(b));
}

TEST(Synthetic, RfiwLikeProfileIsHeavyTailed) {
  SyntheticConfig cfg;
  cfg.n_families = 300;
  cfg.imbalance = ImbalanceProfile::RfiwLike;
  Dataset ds = generate_synthetic(cfg, 42);
  std::vector<double> counts;
  for (std::size_t f = 0; f < ds.families.size(); ++f) counts.push_back(static_cast<double>(ds.family_image_count(f)));
  double max = 0, mean = 0;
  for (double c : counts) {
    max = std::max(max, c);
    mean += c;
  }
  mean /= counts.size();
  double var = 0;
  for (double c : counts) var += (c - mean) * (c - mean);
  const double std_dev = std::sqrt(var / counts.size());
  // Reference values from the generator at seed 42.
  EXPECT_EQ(max, 1548);
  EXPECT_NEAR(mean, 40.75, 1e-9);
  EXPECT_NEAR(std_dev, 116.178344, 1e-5);
  EXPECT_GT(std_dev / mean, 1.0);
}
