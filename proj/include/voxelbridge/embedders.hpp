#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "voxelbridge/binary_io.hpp"
#include "voxelbridge/error.hpp"
#include "voxelbridge/image.hpp"
#include "voxelbridge/rng.hpp"

namespace voxelbridge {

enum class EmbedderKind { image_embedding, image_latent, text_embedding };

inline std::string_view to_string(EmbedderKind k) {
  switch (k) {
    case EmbedderKind::image_embedding: return "image_embedding";
    case EmbedderKind::image_latent: return "image_latent";
    case EmbedderKind::text_embedding: return "text_embedding";
  }
  return "?";
}

/// `adapter` empty means the deterministic stand-in seeded by `seed`;
/// otherwise it names an executable implementing the adapter contract.
struct EmbedderSpec {
  EmbedderKind kind = EmbedderKind::image_embedding;
  int dim = 64;
  std::uint64_t seed = 0;
  std::string adapter;

  bool external() const { return !adapter.empty(); }
};

inline void l2_normalize(std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += double(x) * x;
  s = std::sqrt(s);
  if (s > 0.0)
    for (auto& x : v) x = static_cast<float>(x / s);
}

// ---- external adapters ------------------------------------------------------

/// Runs `<adapter> <args>` with `payload` on stdin and returns its stdout.
/// Calls are serialized process-wide; any failure is a capability error.
inline std::string run_adapter_raw(const std::string& adapter, const std::string& args, std::string_view payload) {
  static std::mutex gate;
  std::lock_guard lock(gate);
  require(std::filesystem::exists(adapter), ErrorKind::capability, "adapter not found: " + adapter);
  const auto tmp = std::filesystem::temp_directory_path() /
                   ("voxelbridge-adapter-" + std::to_string(::getpid()) + ".in");
  io::write_file(tmp, payload);
  const std::string cmd = "'" + adapter + "' " + args + " < '" + tmp.string() + "'";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    std::filesystem::remove(tmp);
    fail(ErrorKind::capability, "cannot start adapter " + adapter);
  }
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  const int status = ::pclose(pipe);
  std::filesystem::remove(tmp);
  require(status != -1 && WIFEXITED(status) && WEXITSTATUS(status) == 0, ErrorKind::capability,
          "adapter " + adapter + " failed");
  return out;
}

/// Embedding adapter contract: `<adapter> <kind> <dim>`, payload on stdin,
/// exactly dim float32 LE values on stdout.
inline std::vector<float> run_adapter(const std::string& adapter, std::string_view kind, int dim,
                                      std::string_view payload) {
  const auto out = run_adapter_raw(adapter, std::string(kind) + " " + std::to_string(dim), payload);
  require(out.size() == static_cast<std::size_t>(dim) * 4, ErrorKind::capability,
          "adapter " + adapter + " returned " + std::to_string(out.size()) + " bytes, expected " +
              std::to_string(dim * 4));
  auto v = io::decode_f32le(out);
  for (float x : v) require(std::isfinite(x), ErrorKind::non_finite, "adapter emitted a non-finite value");
  return v;
}

// ---- stand-ins --------------------------------------------------------------

inline constexpr int kStandinSide = 16;

/// Seeded dim x 768 projection of a 16x16 RGB thumbnail, centred at 0.5.
class StandinImageEmbedder {
 public:
  StandinImageEmbedder(int dim, std::uint64_t seed) : dim_(dim) {
    require(dim > 0, ErrorKind::invalid_argument, "embedder dim must be positive");
    Rng rng(derive_seed(seed, "embed/image"));
    const int in = kStandinSide * kStandinSide * 3;
    proj_.resize(static_cast<std::size_t>(dim) * in);
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& x : proj_) x = rng.normal() * s;
  }

  std::vector<float> operator()(const Image& img) const {
    require(!img.empty(), ErrorKind::invalid_argument, "cannot embed an empty image");
    const auto thumb = resize_bilinear(img, kStandinSide, kStandinSide);
    const std::size_t in = thumb.rgb.size();
    std::vector<float> out(static_cast<std::size_t>(dim_));
    for (std::size_t r = 0; r < out.size(); ++r) {
      double acc = 0.0;
      const double* w = proj_.data() + r * in;
      for (std::size_t i = 0; i < in; ++i) acc += w[i] * (thumb.rgb[i] - 0.5);
      out[r] = static_cast<float>(acc);
    }
    return out;
  }

 private:
  int dim_;
  std::vector<double> proj_;
};

/// Signed hashed character trigrams of the case-folded text, L2-normalized.
inline std::vector<float> standin_text_embedding(std::string_view text, int dim) {
  require(!text.empty(), ErrorKind::invalid_argument, "cannot embed empty text");
  require(dim > 0, ErrorKind::invalid_argument, "embedder dim must be positive");
  std::string folded(text);
  for (auto& c : folded) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::vector<float> v(static_cast<std::size_t>(dim), 0.0f);
  const std::size_t grams = folded.size() < 3 ? 1 : folded.size() - 2;
  for (std::size_t i = 0; i < grams; ++i) {
    const auto h = splitmix64(fnv1a64(std::string_view(folded).substr(i, 3)));
    v[h % static_cast<std::uint64_t>(dim)] += (h >> 63) ? -1.0f : 1.0f;
  }
  l2_normalize(v);
  return v;
}

inline std::vector<float> embed_image(const EmbedderSpec& spec, const Image& img) {
  require(spec.kind != EmbedderKind::text_embedding, ErrorKind::invalid_argument, "text embedder used on an image");
  std::vector<float> v = spec.external() ? run_adapter(spec.adapter, to_string(spec.kind), spec.dim, encode_ppm(img))
                                         : StandinImageEmbedder(spec.dim, spec.seed)(img);
  if (!spec.external() && spec.kind == EmbedderKind::image_embedding) l2_normalize(v);
  return v;
}

inline std::vector<float> embed_text(const EmbedderSpec& spec, std::string_view text) {
  require(spec.kind == EmbedderKind::text_embedding, ErrorKind::invalid_argument, "image embedder used on text");
  require(!text.empty(), ErrorKind::invalid_argument, "cannot embed empty text");
  if (spec.external()) return run_adapter(spec.adapter, to_string(spec.kind), spec.dim, text);
  return standin_text_embedding(text, spec.dim);
}

}  // namespace voxelbridge
