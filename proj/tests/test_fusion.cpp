#include <gtest/gtest.h>

#include <cstring>

#include "kinform/fusion.hpp"
#include "kinform/gradcheck.hpp"

using namespace kinform;

namespace {

Tensor random_vector(Rng& rng, std::size_t n, bool rg = false) {
  std::vector<Real> v(n);
  for (auto& x : v) x = static_cast<Real>(normal(rng));
  return Tensor({n}, std::move(v), rg);
}

// Randomizes every head parameter, including weighting vectors.
void randomize(HeadParams& h, std::uint64_t seed) {
  Rng rng = make_rng(seed, "randomize-head");
  for (auto& t : h.named())
    for (auto& v : t.tensor.data()) v = static_cast<Real>(0.5 * normal(rng));
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.numel() == b.numel() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(Real)) == 0;
}

}  // namespace

TEST(Weighting, OnesAreIdentity) {
  FusionConfig cfg;
  for (TieMode tie : {TieMode::Tied, TieMode::Untied}) {
    auto h = init_head(KinshipClass::FD, tie, cfg, 1);
    Rng rng = make_rng(1, "w");
    Tensor a = random_vector(rng, 16), b = random_vector(rng, 16);
    auto w = apply_weighting(a, b, h);
    EXPECT_TRUE(same_bits(w.a, a));
    EXPECT_TRUE(same_bits(w.b, b));
  }
}

TEST(Weighting, TiedSwapSwapsOutputs) {
  auto h = init_head(KinshipClass::BB, FusionConfig{}, 1);
  ASSERT_EQ(h.tie, TieMode::Tied);
  EXPECT_TRUE(h.w_phi.same_storage(h.w_psi));
  randomize(h, 3);
  Rng rng = make_rng(2, "w");
  Tensor a = random_vector(rng, 16), b = random_vector(rng, 16);
  auto ab = apply_weighting(a, b, h);
  auto ba = apply_weighting(b, a, h);
  EXPECT_TRUE(same_bits(ab.a, ba.b));
  EXPECT_TRUE(same_bits(ab.b, ba.a));
}

TEST(Weighting, UntiedScalesEachSide) {
  FusionConfig cfg;
  cfg.d = 4;
  auto h = init_head(KinshipClass::FD, cfg, 1);
  ASSERT_EQ(h.tie, TieMode::Untied);
  for (auto& v : h.w_phi.data()) v = 2;
  for (auto& v : h.w_psi.data()) v = 3;
  auto w = apply_weighting(Tensor::ones({4}), Tensor::ones({4}), h);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(w.a[i], 2);
    EXPECT_EQ(w.b[i], 3);
  }
  EXPECT_THROW(apply_weighting(Tensor::ones({5}), Tensor::ones({5}), h), ShapeError);
  EXPECT_THROW(apply_weighting(Tensor::ones({4}), Tensor::ones({5}), h), ShapeError);
}

TEST(Weighting, DefaultTieModes) {
  for (KinshipClass c : kTrainedClasses) {
    EXPECT_EQ(default_tie_mode(c), is_symmetric(c) ? TieMode::Tied : TieMode::Untied);
    EXPECT_EQ(tie_mode_for(c, WeightingMode::Symmetric), TieMode::Tied);
    EXPECT_EQ(tie_mode_for(c, WeightingMode::None), TieMode::None);
  }
}

TEST(FuseScore, ZeroParamsGiveHalf) {
  Rng rng = make_rng(4, "z");
  for (FusionKind kind : {FusionKind::Conv, FusionKind::Concat})
    for (TieMode tie : {TieMode::Tied, TieMode::Untied, TieMode::None}) {
      FusionConfig cfg;
      cfg.kind = kind;
      auto h = init_head(KinshipClass::MS, tie, cfg, 1);
      zero_head(h);
      EXPECT_EQ(head_score(random_vector(rng, 16), random_vector(rng, 16), h).item(), 0.5);
    }
}

TEST(FuseScore, TiedHeadsAreOrderSymmetric) {
  FusionConfig cfg;
  int checked = 0;
  for (KinshipClass c : {KinshipClass::BB, KinshipClass::SS, KinshipClass::FS, KinshipClass::MD}) {
    auto h = init_head(c, cfg, 10);
    for (int i = 0; i < 250; ++i) {
      if (i % 25 == 0) randomize(h, 100 * static_cast<int>(c) + i);
      Rng rng = make_rng(i, "pair", static_cast<std::uint64_t>(c));
      Tensor a = random_vector(rng, 16), b = random_vector(rng, 16);
      EXPECT_TRUE(same_bits(head_score(a, b, h), head_score(b, a, h)));
      ++checked;
    }
  }
  EXPECT_EQ(checked, 1000);
}

TEST(FuseScore, UntiedHeadsAreOrderSensitive) {
  FusionConfig cfg;
  for (KinshipClass c : {KinshipClass::FD, KinshipClass::MS, KinshipClass::SIBS}) {
    auto h = init_head(c, cfg, 5);
    randomize(h, 6);
    Rng rng = make_rng(7, "pair");
    int differing = 0;
    for (int i = 0; i < 20; ++i) {
      Tensor a = random_vector(rng, 16), b = random_vector(rng, 16);
      if (head_score(a, b, h).item() != head_score(b, a, h).item()) ++differing;
    }
    EXPECT_GT(differing, 0) << class_tag(c);
  }
}

TEST(FuseScore, OutputIsProbability) {
  FusionConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto h = init_head(KinshipClass::FD, cfg, seed);
    randomize(h, seed);
    Rng rng = make_rng(seed, "p");
    const Real p = head_score(random_vector(rng, 16), random_vector(rng, 16), h).item();
    EXPECT_GE(p, 0);
    EXPECT_LE(p, 1);
  }
}

TEST(FuseScore, GradientMatchesFiniteDifferences) {
  FusionConfig conv;
  FusionConfig concat = conv;
  concat.kind = FusionKind::Concat;
  const std::vector<std::pair<KinshipClass, TieMode>> heads = {
      {KinshipClass::BB, TieMode::Tied}, {KinshipClass::FD, TieMode::Untied}, {KinshipClass::MS, TieMode::None}};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto [cls, tie] = heads[seed % 3];
    auto h = init_head(cls, tie, seed % 4 == 3 ? concat : conv, seed);
    Rng rng = make_rng(seed, "grad");
    for (auto& t : h.named())
      if (t.name.find("score_bias") != std::string::npos || t.name.find(".b") != std::string::npos)
        for (auto& v : t.tensor.data()) v = static_cast<Real>(0.1 * normal(rng));
    Tensor a = random_vector(rng, 16, true), b = random_vector(rng, 16, true);
    const Real label = static_cast<Real>(seed % 2);
    auto params = h.named();
    params.push_back({"a", a});
    params.push_back({"b", b});
    GradCheckOptions opt;
    opt.max_elements = 40;
    opt.seed = seed;
    auto report = grad_check([&] { return bce(head_score(a, b, h), label); }, params, 1e-5, 1e-4, opt);
    EXPECT_TRUE(report.passed()) << "seed " << seed << " rel " << report.max_rel_error();
  }
}

TEST(FuseScore, TraceMatchesLayerTable) {
  NoGradScope no_grad;
  const FusionConfig cfg = FusionConfig::paper_shaped();
  auto h = init_head(KinshipClass::FD, cfg, 1);
  Rng rng = make_rng(1, "t");
  FusionTrace trace;
  fuse_score(apply_weighting(random_vector(rng, 512), random_vector(rng, 512), h), h, &trace);
  const auto expected = fusion_shape_trace(cfg);
  ASSERT_EQ(trace.size(), expected.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    EXPECT_EQ(trace[i].layer, expected[i].layer);
    EXPECT_EQ(trace[i].input, expected[i].input) << trace[i].layer;
    EXPECT_EQ(trace[i].output, expected[i].output) << trace[i].layer;
    EXPECT_EQ(trace[i].activation, expected[i].activation) << trace[i].layer;
  }
  EXPECT_EQ(trace[0].input, (Shape{512, 2}));
  EXPECT_EQ(trace[0].output, (Shape{512, 512}));
  for (std::size_t i = 1; i <= 8; ++i) {
    EXPECT_EQ(trace[i].layer, "1D Conv" + std::to_string(i));
    EXPECT_EQ(trace[i].output, (Shape{512, 512}));
  }
  EXPECT_EQ(trace[9].layer, "1D Conv9");
  EXPECT_EQ(trace[9].input, (Shape{512, 1024}));
  EXPECT_EQ(trace[9].output, (Shape{512, 1}));
}

TEST(ParameterCounts, ConcatBaseline) {
  FusionConfig cfg = FusionConfig::paper_shaped();
  cfg.kind = FusionKind::Concat;
  auto h = init_head(KinshipClass::FD, cfg, 1);
  EXPECT_EQ(h.fusion_parameter_count(), 1025u);
  EXPECT_EQ(h.parameter_count(), 1025u + 2 * 512 + 1);
}

TEST(ParameterCounts, ConvHeadClosedForm) {
  for (auto [d, C] : {std::pair<std::size_t, std::size_t>{512, 512}, {16, 16}, {16, 8}}) {
    FusionConfig cfg{d, C, 8, FusionKind::Conv};
    auto untied = init_head(KinshipClass::FD, cfg, 1);
    auto tied = init_head(KinshipClass::BB, cfg, 1);
    // input mix (2 -> C) + 8 hidden (C -> C) + output (2C -> 1), each with bias.
    const std::size_t fusion = (2 * C + C) + 8 * (C * C + C) + (2 * C + 1);
    EXPECT_EQ(untied.fusion_parameter_count(), fusion);
    EXPECT_EQ(untied.parameter_count(), fusion + 2 * d + 1);
    // Tied heads keep one mixing column and one weighting vector.
    EXPECT_EQ(tied.fusion_parameter_count(), fusion - C);
    EXPECT_EQ(tied.parameter_count(), fusion - C + d + 1);
  }
  FusionConfig paper = FusionConfig::paper_shaped();
  EXPECT_EQ(init_head(KinshipClass::FD, paper, 1).fusion_parameter_count(), 2103809u);
}

TEST(CosineSimilarity, Basics) {
  std::vector<Real> a = {1, 0}, b = {0, 2}, c = {3, 0}, z = {0, 0};
  EXPECT_EQ(cosine_similarity(a, b), 0);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, c), 1);
  EXPECT_EQ(cosine_similarity(a, z), 0);
}
