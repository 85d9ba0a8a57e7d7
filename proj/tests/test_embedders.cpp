#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "voxelbridge/embedders.hpp"
#include "voxelbridge/rng.hpp"

namespace vb = voxelbridge;

namespace {

vb::Image noise_image(int w, int h, vb::Rng& rng) {
  vb::Image img(w, h);
  for (auto& x : img.rgb) x = static_cast<float>(rng.uniform());
  return img;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
  return ab / std::sqrt(aa * bb);
}

vb::EmbedderSpec text(int dim = 64) { return {vb::EmbedderKind::text_embedding, dim, 0, ""}; }

}  // namespace

TEST(ImageEmbedder, DeterministicAndUnitNorm) {
  vb::Rng rng(1);
  const auto img = noise_image(40, 30, rng);
  const vb::EmbedderSpec spec{vb::EmbedderKind::image_embedding, 64, 3, ""};
  const auto a = vb::embed_image(spec, img), b = vb::embed_image(spec, img);
  EXPECT_EQ(a, b);
  double n = 0;
  for (float x : a) n += x * x;
  EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
}

TEST(ImageEmbedder, UnrelatedImagesAreNearlyOrthogonal) {
  int within = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    vb::Rng rng(vb::derive_seed(trial, "test/images"));
    const vb::EmbedderSpec spec{vb::EmbedderKind::image_embedding, 64, static_cast<std::uint64_t>(trial), ""};
    const auto a = vb::embed_image(spec, noise_image(16, 16, rng));
    const auto b = vb::embed_image(spec, noise_image(16, 16, rng));
    within += std::abs(cosine(a, b)) < 0.5;
  }
  EXPECT_GE(within, 990);
}

TEST(ImageEmbedder, LatentKindIsNotNormalized) {
  vb::Rng rng(2);
  const auto img = noise_image(16, 16, rng);
  const auto z = vb::embed_image({vb::EmbedderKind::image_latent, 32, 0, ""}, img);
  ASSERT_EQ(z.size(), 32u);
  double n = 0;
  for (float x : z) n += x * x;
  EXPECT_GT(std::abs(std::sqrt(n) - 1.0), 1e-3);
}

TEST(TextEmbedder, CaseFoldedAndDeterministic) {
  EXPECT_EQ(vb::embed_text(text(), "zebra"), vb::embed_text(text(), "zebra"));
  EXPECT_EQ(vb::embed_text(text(), "zebra"), vb::embed_text(text(), "Zebra"));
  EXPECT_LT(cosine(vb::embed_text(text(), "zebra"), vb::embed_text(text(), "train")), 0.9);
}

TEST(TextEmbedder, Errors) {
  EXPECT_THROW(vb::embed_text(text(), ""), vb::Error);
  EXPECT_THROW(vb::embed_text({vb::EmbedderKind::image_embedding, 64, 0, ""}, "zebra"), vb::Error);
  try {
    vb::embed_text({vb::EmbedderKind::text_embedding, 8, 0, "/nonexistent/adapter"}, "zebra");
    FAIL();
  } catch (const vb::Error& e) {
    EXPECT_EQ(e.kind(), vb::ErrorKind::capability);
  }
}

TEST(Adapter, ContractRoundTrip) {
  const auto script = std::filesystem::temp_directory_path() / "vb_test_adapter.sh";
  {
    std::ofstream f(script);
    f << "#!/bin/sh\ncat > /dev/null\nhead -c $(( $2 * 4 )) /dev/zero\n";
  }
  std::filesystem::permissions(script, std::filesystem::perms::owner_all);
  const auto v = vb::embed_text({vb::EmbedderKind::text_embedding, 5, 0, script.string()}, "zebra");
  EXPECT_EQ(v, std::vector<float>(5, 0.0f));
}
