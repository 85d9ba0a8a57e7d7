#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "voxelbridge/preprocess.hpp"
#include "voxelbridge/rng.hpp"
#include "voxelbridge/synthetic.hpp"
#include "voxelbridge/volume.hpp"

namespace vb = voxelbridge;
namespace fs = std::filesystem;

namespace {

vb::ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const vb::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return vb::ErrorKind::usage;
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("vb_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Nvol, PayloadIsXFastestLittleEndian) {
  vb::BrainVolume v({2, 2, 2});
  for (int i = 0; i < 8; ++i) v.data[i] = static_cast<float>(i);
  const auto bytes = vb::encode_nvol(v);
  const std::string header = "NVOL1\ndims 2 2 2\ndtype f32le\norder x-fastest\n---\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  ASSERT_EQ(bytes.size(), header.size() + 32);
  for (int i = 0; i < 8; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + header.size() + 4 * i);
    const std::uint32_t u = p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    EXPECT_EQ(f, static_cast<float>(i));
  }
  EXPECT_EQ(v.at(1, 0, 0), 1.0f);
  EXPECT_EQ(v.at(0, 1, 0), 2.0f);
  EXPECT_EQ(v.at(0, 0, 1), 4.0f);
}

TEST(Nvol, RoundTripIsBitExact) {
  const auto dir = scratch("nvol_rt");
  vb::Rng rng(11);
  for (int n = 0; n < 10; ++n) {
    vb::BrainVolume v({1 + static_cast<int>(rng.below(9)), 1 + static_cast<int>(rng.below(9)), 1 + static_cast<int>(rng.below(9))});
    for (auto& x : v.data) x = static_cast<float>(rng.normal() * 100.0);
    const auto p = dir / ("v" + std::to_string(n) + ".nvol");
    vb::write_volume(v, p);
    const auto back = vb::read_volume(p);
    ASSERT_EQ(back.dims, v.dims);
    EXPECT_EQ(std::memcmp(back.data.data(), v.data.data(), v.data.size() * 4), 0);
    EXPECT_EQ(vb::encode_nvol(back), vb::encode_nvol(v));
  }
}

TEST(Nvol, Rejections) {
  vb::BrainVolume v({2, 2, 2});
  v.data[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_EQ(kind_of([&] { vb::encode_nvol(v); }), vb::ErrorKind::non_finite);

  v.data[3] = 0.0f;
  auto bytes = vb::encode_nvol(v);
  EXPECT_EQ(kind_of([&] { vb::decode_nvol(bytes.substr(0, bytes.size() - 4)); }), vb::ErrorKind::payload_mismatch);

  auto bad = bytes;
  bad[4] = '2';
  EXPECT_EQ(kind_of([&] { vb::decode_nvol(bad); }), vb::ErrorKind::bad_magic);

  auto nan = bytes;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + nan.size() - 4, &q, 4);
  EXPECT_EQ(kind_of([&] { vb::decode_nvol(nan); }), vb::ErrorKind::non_finite);

  EXPECT_EQ(kind_of([&] { vb::read_volume("/nonexistent/x.nvol"); }), vb::ErrorKind::io);
}

TEST(Npat, RoundTrip) {
  vb::PatchSpec spec;
  spec.r = 3;
  spec.canonical = {7, 5, 4};
  vb::VoxelMask mask(spec.canonical);
  mask.bits[0] = mask.bits[spec.canonical.index(6, 4, 3)] = 1;
  vb::Rng rng(3);
  vb::BrainVolume v(spec.canonical);
  for (auto& x : v.data) x = static_cast<float>(rng.normal());
  const auto p = vb::patchify(v, spec, mask);
  const auto back = vb::decode_npat(vb::encode_npat(p));
  EXPECT_EQ(back.index_map, p.index_map);
  EXPECT_EQ(back.spec.canonical, spec.canonical);
  EXPECT_EQ(back.values, p.values);
  EXPECT_TRUE(vb::encode_npat(p).starts_with("NPAT1\ngrid 3 2 2\nr 3\npad 2 1 2\nretained 2 0 11\n---\n"));
}

TEST(Synthetic, FullMaskCoversGrid) {
  EXPECT_EQ(vb::ellipsoid_mask({5, 6, 7}, 1.0).count(), 210u);
}

TEST(Synthetic, MaskCountIsFloorOfFraction) {
  vb::SyntheticWorldParams p;
  const auto w = vb::generate_synthetic_world(p);
  EXPECT_EQ(w.mask_voxels, 1296u);
  EXPECT_EQ(w.mask.count(), 1296u);
}

TEST(Synthetic, SameSeedSameWorld) {
  vb::SyntheticWorldParams p;
  p.seed = 42;
  const auto a = vb::generate_synthetic_world(p), b = vb::generate_synthetic_world(p);
  ASSERT_EQ(a.proj_c.size(), b.proj_c.size());
  EXPECT_EQ(std::memcmp(a.proj_c.data(), b.proj_c.data(), a.proj_c.size() * sizeof(double)), 0);
  EXPECT_EQ(a.loading, b.loading);
  p.seed = 43;
  EXPECT_NE(vb::generate_synthetic_world(p).proj_c, a.proj_c);
}

TEST(Synthetic, ZeroNoiseTrialsAgree) {
  vb::SyntheticWorldParams p;
  p.noise_sigma = 0.0;
  const auto w = vb::generate_synthetic_world(p);
  const auto t0 = vb::sample_synthetic_trial(w, 77, 0), t1 = vb::sample_synthetic_trial(w, 77, 1);
  for (auto idx : w.mask_index) EXPECT_EQ(t0.volume.data[idx], t1.volume.data[idx]);
}

TEST(Synthetic, DistinctStimuliAreUncorrelated) {
  vb::SyntheticWorldParams p;
  p.noise_sigma = 0.0;
  const auto w = vb::generate_synthetic_world(p);
  ASSERT_GE(w.mask_voxels, 1000u);
  double sum = 0.0;
  for (int pair = 0; pair < 50; ++pair) {
    const auto a = vb::masked_signal(w, vb::draw_latent(w, 5000 + 2 * pair));
    const auto b = vb::masked_signal(w, vb::draw_latent(w, 5001 + 2 * pair));
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= a.size(), mb /= b.size();
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    sum += sab / std::sqrt(saa * sbb);
  }
  EXPECT_LT(std::abs(sum / 50.0), 0.1);
}

TEST(Synthetic, TrialAveragingCutsNoiseVariance) {
  vb::SyntheticWorldParams p;
  p.noise_sigma = 1.0;
  const auto w = vb::generate_synthetic_world(p);
  double single = 0.0, averaged = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto u = vb::draw_latent(w, 100 + s);
    const auto clean = vb::masked_signal(w, u);
    std::vector<vb::BrainVolume> trials;
    for (int t = 0; t < 3; ++t) trials.push_back(vb::render_trial(w, u, 100 + s, t));
    const auto avg = vb::average_volumes(trials);
    for (std::size_t m = 0; m < w.mask_voxels; ++m) {
      const auto idx = w.mask_index[m];
      single += std::pow(trials[0].data[idx] - clean[m], 2);
      averaged += std::pow(avg.data[idx] - clean[m], 2);
    }
  }
  EXPECT_NEAR(averaged / single, 1.0 / 3.0, 0.2 / 3.0);
}
