#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "voxelbridge/preprocess.hpp"
#include "voxelbridge/rng.hpp"

namespace vb = voxelbridge;

namespace {

// Eight-corner weighted sum per output voxel, align-corners-false with edge
// clamping. Kept apart from the separable production kernel.
double corner_sum(const vb::BrainVolume& v, vb::Dims3 out, int i, int j, int k) {
  const int o[3] = {i, j, k};
  int lo[3], hi[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    const double scale = static_cast<double>(v.dims[a]) / out[a];
    double s = (o[a] + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    if (s > v.dims[a] - 1) s = v.dims[a] - 1;
    lo[a] = static_cast<int>(s);
    hi[a] = lo[a] + 1 < v.dims[a] ? lo[a] + 1 : lo[a];
    t[a] = s - lo[a];
  }
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int x = c & 1 ? hi[0] : lo[0], y = c & 2 ? hi[1] : lo[1], z = c & 4 ? hi[2] : lo[2];
    const double w = (c & 1 ? t[0] : 1 - t[0]) * (c & 2 ? t[1] : 1 - t[1]) * (c & 4 ? t[2] : 1 - t[2]);
    acc += w * v.at(x, y, z);
  }
  return acc;
}

vb::BrainVolume random_volume(vb::Dims3 d, std::uint64_t seed) {
  vb::Rng rng(seed);
  vb::BrainVolume v(d);
  for (auto& x : v.data) x = static_cast<float>(rng.normal());
  return v;
}

}  // namespace

TEST(Resize, IdentityDims) {
  const auto v = random_volume({5, 4, 3}, 1);
  EXPECT_EQ(vb::trilinear_resize(v, v.dims).data, v.data);
}

TEST(Resize, ConstantStaysConstant) {
  const vb::BrainVolume v({4, 5, 6}, 3.5f);
  for (const auto& d : {vb::Dims3{7, 3, 9}, vb::Dims3{1, 1, 1}, vb::Dims3{13, 17, 2}}) {
    const auto r = vb::trilinear_resize(v, d);
    EXPECT_TRUE(std::all_of(r.data.begin(), r.data.end(), [](float x) { return x == 3.5f; }));
  }
}

TEST(Resize, MatchesCornerSumOracle) {
  const auto v = random_volume({8, 9, 7}, 2);
  const vb::Dims3 out{16, 18, 14};
  const auto r = vb::trilinear_resize(v, out);
  double worst = 0.0;
  for (int k = 0; k < out.z; ++k)
    for (int j = 0; j < out.y; ++j)
      for (int i = 0; i < out.x; ++i) worst = std::max(worst, std::abs(r.at(i, j, k) - corner_sum(v, out, i, j, k)));
  EXPECT_LT(worst, 1e-6);
}

TEST(Resize, DownsampleMatchesOracle) {
  const auto v = random_volume({11, 6, 9}, 3);
  const vb::Dims3 out{4, 13, 5};
  const auto r = vb::trilinear_resize(v, out);
  for (int k = 0; k < out.z; ++k)
    for (int j = 0; j < out.y; ++j)
      for (int i = 0; i < out.x; ++i) EXPECT_NEAR(r.at(i, j, k), corner_sum(v, out, i, j, k), 1e-6);
}

TEST(Normalize, HandZScores) {
  vb::BrainVolume v({3, 1, 1});
  v.data = {1, 2, 3};
  const auto n = vb::normalize(v, vb::VoxelMask(v.dims, true));
  EXPECT_NEAR(n.data[0], -1.224744871, 1e-6);
  EXPECT_NEAR(n.data[1], 0.0, 1e-7);
  EXPECT_NEAR(n.data[2], 1.224744871, 1e-6);
}

TEST(Normalize, IdempotentAndConstant) {
  const auto v = random_volume({6, 5, 4}, 4);
  const vb::VoxelMask all(v.dims, true);
  const auto once = vb::normalize(v, all), twice = vb::normalize(once, all);
  for (std::size_t i = 0; i < once.data.size(); ++i) EXPECT_NEAR(once.data[i], twice.data[i], 1e-6);
  const auto c = vb::normalize(vb::BrainVolume(v.dims, 2.0f), all);
  EXPECT_TRUE(std::all_of(c.data.begin(), c.data.end(), [](float x) { return x == 0.0f; }));
}

TEST(Normalize, StatisticsFromMaskOnly) {
  vb::BrainVolume v({4, 1, 1});
  v.data = {1, 3, 100, -50};
  vb::VoxelMask m(v.dims);
  m.bits[0] = m.bits[1] = 1;
  const auto n = vb::normalize(v, m);
  EXPECT_NEAR(n.data[0], -1.0, 1e-6);
  EXPECT_NEAR(n.data[1], 1.0, 1e-6);
  EXPECT_NEAR(n.data[2], 98.0, 1e-4);
}

TEST(Patchify, CanonicalGridArithmetic) {
  vb::PatchSpec s;
  EXPECT_EQ(s.padded(), (vb::Dims3{84, 112, 84}));
  EXPECT_EQ(s.grid(), (vb::Dims3{6, 8, 6}));
  EXPECT_EQ(s.grid().count(), 288u);
  EXPECT_EQ(s.patch_dim(), 2744u);
  EXPECT_EQ(vb::plan_patches(s, vb::VoxelMask(s.canonical, true)).size(), 288u);
  vb::VoxelMask one(s.canonical);
  one.bits[0] = 1;
  const auto m = vb::plan_patches(s, one);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.retained[0], 0u);
}

TEST(Patchify, RoundTripAndSingleCube) {
  vb::PatchSpec s;
  s.r = 4;
  s.canonical = {10, 7, 9};
  const auto v = random_volume(s.canonical, 5);
  EXPECT_EQ(vb::depatchify(vb::patchify(v, s, vb::VoxelMask(s.canonical, true))).data, v.data);

  vb::VoxelMask one(s.canonical);
  one.bits[s.canonical.index(5, 1, 2)] = 1;
  const auto back = vb::depatchify(vb::patchify(v, s, one));
  for (int k = 0; k < 9; ++k)
    for (int j = 0; j < 7; ++j)
      for (int i = 0; i < 10; ++i)
        EXPECT_EQ(back.at(i, j, k), (i >= 4 && i < 8 && j < 4 && k < 4) ? v.at(i, j, k) : 0.0f);
}

TEST(Patchify, RetainThresholdAndEmpty) {
  vb::PatchSpec s;
  s.r = 2;
  s.canonical = {4, 2, 2};
  vb::VoxelMask m(s.canonical);
  m.bits[0] = 1;
  m.bits[2] = m.bits[3] = 1;
  s.retain_threshold = 2;
  const auto map = vb::plan_patches(s, m);
  ASSERT_EQ(map.size(), 1u);
  EXPECT_EQ(map.retained[0], 1u);
  EXPECT_THROW(vb::patchify(vb::BrainVolume(s.canonical), s, vb::VoxelMask(s.canonical)), vb::Error);
}

TEST(Mixup, EndpointsAndConvexCombination) {
  vb::PatchSpec s;
  s.r = 1;
  s.canonical = {2, 1, 1};
  vb::BrainVolume a(s.canonical, 4.0f), b(s.canonical, 8.0f);
  const vb::VoxelMask all(s.canonical, true);
  const auto pa = vb::patchify(a, s, all), pb = vb::patchify(b, s, all);
  EXPECT_EQ(vb::mixup(pa, pb, 1.0).values, pa.values);
  EXPECT_EQ(vb::mixup(pa, pb, 0.0).values, pb.values);
  EXPECT_EQ(vb::mixup(pa, pb, 0.25).values, (std::vector<float>{7.0f, 7.0f}));
  auto other = pb;
  other.index_map.retained = {1};
  other.values.resize(1);
  EXPECT_THROW(vb::mixup(pa, other, 0.5), vb::Error);
}

TEST(UnionMask, Cases) {
  const vb::Dims3 d{10, 10, 1};
  vb::VoxelMask a(d), b(d);
  for (int i = 0; i < 10; ++i) a.bits[i] = 1;
  for (int i = 50; i < 70; ++i) b.bits[i] = 1;
  EXPECT_EQ(vb::build_union_mask({a}), a);
  EXPECT_EQ(vb::build_union_mask({a, b}).count(), 30u);
  EXPECT_EQ(vb::build_union_mask({a, a}), a);
  EXPECT_THROW(vb::build_union_mask({}), vb::Error);
}
