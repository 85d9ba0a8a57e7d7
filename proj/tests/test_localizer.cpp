#include <cmath>

#include <gtest/gtest.h>

#include "voxelbridge/localizer.hpp"

namespace vb = voxelbridge;

namespace {

vb::EncoderConfig small_encoder(int layers) {
  vb::EncoderConfig c;
  c.n_layers = layers;
  c.hidden = 16;
  c.n_heads = 2;
  c.patch_dim = 8;
  c.pos_table_size = 8;
  c.d_c = 12;
  c.d_v = 4;
  c.head_hidden = 16;
  return c;
}

std::vector<float> target(int d, std::uint64_t seed) {
  vb::Rng rng(seed);
  std::vector<float> t(d);
  for (auto& x : t) x = static_cast<float>(rng.normal());
  return t;
}

vb::PatchedSignal single_patch_signal(std::uint32_t cell) {
  vb::PatchedSignal s;
  s.spec.r = 2;
  s.spec.canonical = {5, 4, 4};
  s.index_map.grid_dims = s.spec.grid();
  s.index_map.retained = {cell};
  s.values.assign(8, 1.0f);
  s.provenance = "vol";
  return s;
}

}  // namespace

TEST(Gradcam, LinearToyClosedForm) {
  vb::Rng rng(1);
  vb::ad::Matrix<double> A(5, 4), G(5, 4);
  Eigen::RowVectorXd w(4);
  for (auto i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
  for (auto i = 0; i < w.size(); ++i) w(i) = rng.normal();
  G.rowwise() = w;  // score = sum_t A_t . w has the same gradient at every token
  const auto rel = vb::gradcam_relevance(A, G);
  for (int t = 0; t < 5; ++t) EXPECT_NEAR(rel[t], std::max(0.0, A.row(t).dot(w)), 1e-6);
}

TEST(Gradcam, NonnegativeAndScaleInvariant) {
  vb::Encoder<double> enc(small_encoder(2), 3);
  const auto b = vb::make_gradient_problem(enc.config(), 4, 1, 6).inputs[0];
  const auto t = target(12, 5);
  auto scaled = t;
  for (auto& x : scaled) x *= 7.5f;
  for (int layer = 0; layer <= 2; ++layer) {
    const auto a = vb::gradcam(enc, b, t, layer), c = vb::gradcam(enc, b, scaled, layer);
    ASSERT_EQ(a.relevance.size(), 6u);
    for (std::size_t i = 0; i < a.relevance.size(); ++i) {
      EXPECT_GE(a.relevance[i], 0.0);
      EXPECT_NEAR(a.relevance[i], c.relevance[i], 1e-6);
    }
  }
}

TEST(Gradcam, DetachedScoreGivesZero) {
  vb::Encoder<double> enc(small_encoder(2), 3);
  const auto b = vb::make_gradient_problem(enc.config(), 4, 1, 6).inputs[0];
  const auto r = vb::gradcam(enc, b, target(12, 5), std::nullopt, true);
  for (double x : r.relevance) EXPECT_EQ(x, 0.0);
}

TEST(Gradcam, Errors) {
  vb::Encoder<double> enc(small_encoder(1), 3);
  const auto b = vb::make_gradient_problem(enc.config(), 4, 1, 3).inputs[0];
  EXPECT_THROW(vb::gradcam(enc, b, std::vector<float>(12, 0.0f)), vb::Error);
  EXPECT_THROW(vb::gradcam(enc, b, target(11, 1)), vb::Error);
  EXPECT_THROW(vb::gradcam(enc, b, target(12, 1), 2), vb::Error);
}

TEST(Gradcam, JointPermutationInvariance) {
  vb::Encoder<double> enc(small_encoder(1), 6);
  const auto b = vb::make_gradient_problem(enc.config(), 7, 1, 5).inputs[0];
  auto p = b;
  std::swap(p.index_map.retained[1], p.index_map.retained[3]);
  for (int k = 0; k < 8; ++k) std::swap(p.values[8 + k], p.values[24 + k]);
  const auto t = target(12, 8);
  const auto a = vb::gradcam(enc, b, t).relevance, c = vb::gradcam(enc, p, t).relevance;
  EXPECT_NEAR(a[0], c[0], 1e-9);
  EXPECT_NEAR(a[1], c[3], 1e-9);
  EXPECT_NEAR(a[2], c[2], 1e-9);
  EXPECT_NEAR(a[3], c[1], 1e-9);
  EXPECT_NEAR(a[4], c[4], 1e-9);
}

TEST(Fusion, SinglePatchIsConstantCube) {
  const auto s = single_patch_signal(1);  // grid (3,2,2): cell 1 covers x in [2,4)
  const auto h = vb::fuse_relevance({{s, {0.3}}}, "zebra");
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 5; ++i) EXPECT_EQ(h.values.at(i, j, k), (i >= 2 && i < 4 && j < 2 && k < 2) ? 1.0f : 0.0f);
  EXPECT_EQ(h.scales_used, std::vector<int>{2});
}

TEST(Fusion, EqualScalesEqualOne) {
  vb::PatchedSignal s = single_patch_signal(0);
  s.index_map.retained = {0, 4, 7};
  s.values.assign(24, 0.5f);
  const std::vector<double> rel{0.2, 0.9, 0.4};
  const auto one = vb::fuse_relevance({{s, rel}}, "c");
  const auto three = vb::fuse_relevance({{s, rel}, {s, rel}, {s, rel}}, "c");
  EXPECT_EQ(one.values.data, three.values.data);
}

TEST(Fusion, MixedSourcesRejected) {
  auto a = single_patch_signal(0), b = single_patch_signal(0);
  b.provenance = "other";
  EXPECT_THROW(vb::fuse_relevance({{a, {1.0}}, {b, {1.0}}}, "c"), vb::Error);
}

TEST(Nullify, ThresholdAboveMaxLeavesVolume) {
  vb::BrainVolume v({4, 4, 4}, 2.0f), h({4, 4, 4}, 0.5f);
  EXPECT_EQ(vb::nullify_at(v, h, 0.75).data, v.data);
}

TEST(Nullify, SingleCubeAtMedian) {
  vb::BrainVolume v({4, 4, 4}, 2.0f), h({4, 4, 4});
  for (int k = 0; k < 2; ++k)
    for (int j = 2; j < 4; ++j)
      for (int i = 0; i < 2; ++i) h.at(i, j, k) = 1.0f;
  const auto r = vb::nullify(v, h, 50);
  EXPECT_EQ(r.zeroed, 8u);
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) EXPECT_EQ(r.volume.at(i, j, k), h.at(i, j, k) == 1.0f ? 0.0f : 2.0f);
}

TEST(Nullify, EmptyHeatmapIsFlagged) {
  vb::BrainVolume v({3, 3, 3}, 1.0f), h({3, 3, 3});
  const auto r = vb::nullify(v, h, 90);
  EXPECT_TRUE(r.empty_heatmap);
  EXPECT_EQ(r.volume.data, v.data);
  EXPECT_THROW(vb::nullify(v, h, 100), vb::Error);
}

TEST(Nullify, PercentileOverNonzero) {
  vb::BrainVolume h({5, 1, 1});
  h.data = {0.0f, 1.0f, 2.0f, 3.0f, 5.0f};
  EXPECT_DOUBLE_EQ(*vb::nonzero_percentile(h, 50), 2.5);
  EXPECT_DOUBLE_EQ(*vb::nonzero_percentile(h, 90), 4.4);
}

TEST(Export, MassInBox) {
  vb::BrainVolume h({4, 4, 4}, 1.0f);
  EXPECT_DOUBLE_EQ(vb::mass_in_box(h, {{0, 0, 0}, {2, 2, 2}}), 0.125);
}
