#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "voxelbridge/encoder.hpp"
#include "voxelbridge/metrics.hpp"
#include "voxelbridge/reconstructor.hpp"

namespace vb = voxelbridge;

namespace {

std::vector<float> normals(std::size_t n, std::uint64_t seed) {
  vb::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

vb::EncoderConfig small_encoder() {
  vb::EncoderConfig c;
  c.n_layers = 1;
  c.hidden = 16;
  c.n_heads = 2;
  c.patch_dim = 8;
  c.pos_table_size = 6;
  c.d_c = 64;
  c.d_v = 256;
  c.head_hidden = 16;
  return c;
}

}  // namespace

TEST(Bundle, BetaEndpoints) {
  const auto zv = normals(256, 1), zc = normals(64, 2);
  const auto sigma = vb::latent_noise(256, 9);
  EXPECT_EQ(vb::make_bundle(zv, zc, "", 0.0, 9).init_latent, zv);
  EXPECT_EQ(vb::make_bundle(zv, zc, "", 1.0, 9).init_latent, sigma);
  EXPECT_EQ(vb::make_bundle(normals(256, 3), zc, "", 1.0, 9).init_latent, sigma);
  EXPECT_THROW(vb::make_bundle(zv, zc, "", 1.01, 9), vb::Error);
  EXPECT_THROW(vb::make_bundle(zv, zc, "", -0.1, 9), vb::Error);
}

TEST(Bundle, MixedVariance) {
  const std::vector<float> zero(4096, 0.0f);
  const auto b = vb::make_bundle(zero, normals(64, 2), "", 0.93, 17);
  const auto sigma = vb::latent_noise(4096, 17);
  double mean = 0.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    EXPECT_FLOAT_EQ(b.init_latent[i], static_cast<float>(0.93 * sigma[i]));
    mean += b.init_latent[i];
  }
  mean /= 4096.0;
  double var = 0.0;
  for (float x : b.init_latent) var += (x - mean) * (x - mean);
  var /= 4095.0;
  EXPECT_NEAR(var, 0.8649, 0.05 * 0.8649);
}

TEST(Decoder, DeterministicAndSensitiveToCondition) {
  const vb::DecoderSpec spec;
  const auto b = vb::make_bundle(normals(256, 1), normals(64, 2), "", 0.5, 3);
  EXPECT_EQ(vb::reconstruct(spec, b), vb::reconstruct(spec, b));
  auto c = b;
  c.clip_cond[5] += 0.5f;
  EXPECT_NE(vb::reconstruct(spec, b), vb::reconstruct(spec, c));
  EXPECT_NEAR(vb::StandinDecoder(spec, 64).clip_lipschitz(), spec.lipschitz, 1e-9);
}

TEST(Decoder, LatentShareFallsWithBeta) {
  const vb::DecoderSpec spec;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto zv = normals(256, 10 + seed), zc = normals(64, 20 + seed);
    vb::ConditioningBundle ref;
    ref.init_latent = zv;
    ref.clip_cond.assign(64, 0.0f);
    const auto zv_only = vb::reconstruct(spec, ref);
    double prev = 2.0;
    for (double beta : {0.0, 0.5, 1.0}) {
      const double r = vb::pixcorr(vb::reconstruct(spec, vb::make_bundle(zv, zc, "", beta, 99 + seed)), zv_only);
      EXPECT_LT(r, prev) << "seed " << seed << " beta " << beta;
      prev = r;
    }
  }
}

TEST(Pipeline, WithoutLanguageModelStillDecodes) {
  vb::Encoder<float> enc(small_encoder(), 4);
  const auto s = vb::make_gradient_problem(enc.config(), 5, 1, 3).inputs[0];
  const auto r = vb::recon_pipeline(enc, nullptr, vb::DecoderSpec{}, s, 0.93, 6);
  EXPECT_EQ(r.prompt, "");
  EXPECT_EQ(r.image.width, 64);
  EXPECT_EQ(r.image.height, 64);
}

TEST(Pipeline, SeededRunsWriteIdenticalFiles) {
  vb::Encoder<float> enc(small_encoder(), 4);
  const auto s = vb::make_gradient_problem(enc.config(), 5, 1, 3).inputs[0];
  const auto dir = std::filesystem::temp_directory_path() / "vb_test_recon";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  for (int run = 0; run < 2; ++run)
    vb::write_ppm(vb::recon_pipeline(enc, nullptr, vb::DecoderSpec{}, s, 0.93, 6).image,
                  dir / (std::to_string(run) + ".ppm"));
  EXPECT_EQ(vb::io::read_file(dir / "0.ppm"), vb::io::read_file(dir / "1.ppm"));
  const auto other = vb::recon_pipeline(enc, nullptr, vb::DecoderSpec{}, s, 0.93, 7).image;
  EXPECT_NE(vb::encode_ppm(other), vb::io::read_file(dir / "0.ppm"));
}

TEST(Ppm, RoundTripAndHeader) {
  vb::Image img(3, 2);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<float>(i) / 17.0f;
  const auto bytes = vb::encode_ppm(img);
  EXPECT_TRUE(bytes.starts_with("P6\n3 2\n255\n"));
  EXPECT_EQ(bytes.size(), 11u + 18u);
  const auto back = vb::decode_ppm(bytes);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) EXPECT_NEAR(back.rgb[i], img.rgb[i], 0.5 / 255.0 + 1e-7);
  EXPECT_EQ(vb::encode_ppm(back), bytes);
}
