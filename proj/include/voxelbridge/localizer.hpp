#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxelbridge/bridge.hpp"
#include "voxelbridge/embedders.hpp"
#include "voxelbridge/encoder.hpp"
#include "voxelbridge/image.hpp"
#include "voxelbridge/preprocess.hpp"
#include "voxelbridge/synthetic.hpp"
#include "voxelbridge/templates.hpp"
#include "voxelbridge/volume.hpp"

namespace voxelbridge {

/// Localization template parse, else the bridge's answer cut to its first word.
inline std::string extract_concept(std::string_view instruction, Bridge<float>* bridge = nullptr,
                                   const ad::Matrix<float>* penultimate = nullptr, int max_tokens = 32) {
  require(!instruction.empty(), ErrorKind::invalid_argument, "empty instruction");
  if (auto parsed = parse_localization(instruction)) return *parsed;
  require(bridge != nullptr && penultimate != nullptr, ErrorKind::invalid_argument,
          "instruction does not match the localization template and no bridge is available");
  const auto answer = bridge->generate(*penultimate, instruction, max_tokens);
  std::string word;
  for (char c : answer) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') {
      word.push_back(c);
    } else if (!word.empty()) {
      break;
    }
  }
  return word;
}

/// ReLU(A w) with w the token mean of G. A and G are patch-token rows only.
template <class T>
std::vector<double> gradcam_relevance(const ad::Matrix<T>& A, const ad::Matrix<T>& G) {
  require(A.rows() == G.rows() && A.cols() == G.cols(), ErrorKind::shape, "activation / gradient shape mismatch");
  std::vector<double> rel(static_cast<std::size_t>(A.rows()), 0.0);
  if (A.rows() == 0) return rel;
  Eigen::Matrix<double, Eigen::Dynamic, 1> w = G.template cast<double>().colwise().mean().transpose();
  for (Eigen::Index t = 0; t < A.rows(); ++t)
    rel[static_cast<std::size_t>(t)] = std::max(0.0, A.row(t).template cast<double>().dot(w));
  return rel;
}

struct GradcamResult {
  std::vector<double> relevance;  // one per patch token (class token excluded)
  double score = 0.0;
};

/// Score s = cosine(pred_c, target). Layer l < L reads the tokens block l+1
/// consumes, i.e. h^l after that block's first layer norm (l = 0 is the normed
/// embedding); l = L reads the last block output.
/// The default is the penultimate layer. `detach_score` cuts the score off
/// from the encoder, so every relevance is zero.
template <class T>
GradcamResult gradcam(const Encoder<T>& encoder, const PatchedSignal& b, const std::vector<float>& target,
                      std::optional<int> layer = std::nullopt, bool detach_score = false) {
  const int L = encoder.config().n_layers;
  const int at = layer.value_or(encoder.default_gradcam_layer());
  require(at >= 0 && at <= L, ErrorKind::invalid_argument,
          "gradcam layer " + std::to_string(at) + " outside [0, " + std::to_string(L) + "]");
  require(static_cast<int>(target.size()) == encoder.config().d_c, ErrorKind::shape, "target length != d_c");
  double norm = 0.0;
  for (float x : target) norm += double(x) * x;
  norm = std::sqrt(norm);
  require(norm > 0.0, ErrorKind::invalid_argument, "zero-norm gradcam target");
  ad::Matrix<T> t(1, static_cast<Eigen::Index>(target.size()));
  for (std::size_t i = 0; i < target.size(); ++i) t(0, static_cast<Eigen::Index>(i)) = static_cast<T>(target[i] / norm);

  auto& enc = const_cast<Encoder<T>&>(encoder);  // gradients go to a local sink, never to the store
  ad::Graph<T> g;
  const auto out = enc.build(g, b, true);
  const auto pred = detach_score ? g.input(ad::Matrix<T>(g.value(out.pred_c))) : out.pred_c;
  const auto score = ad::cosine(g, pred, t);
  std::vector<ad::Matrix<T>> sink(enc.params().size());
  g.backward(score, T(1), &sink);
  const auto h = at < L ? out.normed[static_cast<std::size_t>(at)] : out.hidden[static_cast<std::size_t>(at)];
  const auto n = g.value(h).rows() - 1;
  const ad::Matrix<T> A = g.value(h).bottomRows(n);
  const ad::Matrix<T> G = g.has_grad(h) ? ad::Matrix<T>(g.grad(h).bottomRows(n)) : ad::Matrix<T>::Zero(n, A.cols());
  return {gradcam_relevance(A, G), static_cast<double>(g.value(score)(0, 0))};
}

struct VoxelHeatmap {
  BrainVolume values;  // canonical dims, in [0, 1]
  std::string concept_name;
  std::vector<int> scales_used;
};

/// Paints one value per retained patch into its r^3 block, padding cropped.
inline BrainVolume paint_patches(const PatchedSignal& b, const std::vector<double>& per_row) {
  require(per_row.size() == b.rows(), ErrorKind::shape, "one value per retained patch expected");
  const auto rows = voxel_to_row(b.index_map, b.spec);
  BrainVolume out(b.spec.canonical);
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i] >= 0) out.data[i] = static_cast<float>(per_row[static_cast<std::size_t>(rows[i])]);
  return out;
}

inline void max_normalize(std::vector<double>& v) {
  const double mx = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  if (mx > 0.0)
    for (auto& x : v) x /= mx;
}

struct ScaleInput {
  const Encoder<float>* encoder = nullptr;
  PatchedSignal signal;
};

/// Per scale: GradCAM against the text embedding of `concept_name`, painted to
/// voxels and max-normalized; the fused map is the voxelwise mean, max-normalized.
inline VoxelHeatmap fuse_relevance(const std::vector<std::pair<PatchedSignal, std::vector<double>>>& per_scale,
                                   std::string concept_name) {
  require(!per_scale.empty(), ErrorKind::invalid_argument, "no scales to fuse");
  const Dims3 dims = per_scale.front().first.spec.canonical;
  const auto& source = per_scale.front().first.provenance;
  std::vector<double> acc(dims.count(), 0.0);
  VoxelHeatmap h;
  h.concept_name = std::move(concept_name);
  for (const auto& [sig, rel] : per_scale) {
    require(sig.spec.canonical == dims, ErrorKind::shape, "scales disagree on canonical dims");
    require(sig.provenance == source, ErrorKind::invalid_argument,
            "scales come from different source volumes: " + source + " vs " + sig.provenance);
    const auto painted = paint_patches(sig, rel);
    std::vector<double> v(painted.data.begin(), painted.data.end());
    max_normalize(v);
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
    h.scales_used.push_back(sig.spec.r);
  }
  for (auto& x : acc) x /= static_cast<double>(per_scale.size());
  max_normalize(acc);
  h.values = BrainVolume(dims);
  for (std::size_t i = 0; i < acc.size(); ++i) h.values.data[i] = static_cast<float>(acc[i]);
  return h;
}

inline VoxelHeatmap localize(const std::vector<ScaleInput>& scales, const std::string& concept_name,
                             const EmbedderSpec& text_embedder) {
  require(!scales.empty(), ErrorKind::invalid_argument, "localize needs at least one scale");
  const auto target = embed_text(text_embedder, concept_name);
  std::vector<std::pair<PatchedSignal, std::vector<double>>> per_scale;
  for (const auto& s : scales) {
    require(s.encoder != nullptr, ErrorKind::invalid_argument, "missing encoder for a scale");
    per_scale.emplace_back(s.signal, gradcam(*s.encoder, s.signal, target).relevance);
  }
  return fuse_relevance(per_scale, concept_name);
}

/// Linear-interpolated percentile (0..100) of the nonzero heatmap values.
inline std::optional<double> nonzero_percentile(const BrainVolume& h, double tau) {
  std::vector<double> nz;
  for (float x : h.data)
    if (x != 0.0f) nz.push_back(x);
  if (nz.empty()) return std::nullopt;
  std::sort(nz.begin(), nz.end());
  const double rank = tau / 100.0 * static_cast<double>(nz.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, nz.size() - 1);
  return std::lerp(nz[lo], nz[hi], rank - static_cast<double>(lo));
}

inline BrainVolume nullify_at(const BrainVolume& v, const BrainVolume& h, double threshold, std::size_t* zeroed = nullptr) {
  require(v.dims == h.dims, ErrorKind::shape, "heatmap and volume dims differ");
  BrainVolume out = v;
  std::size_t n = 0;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    if (h.data[i] != 0.0f && h.data[i] >= threshold) {
      out.data[i] = 0.0f;
      ++n;
    }
  if (zeroed) *zeroed = n;
  return out;
}

struct NullifyResult {
  BrainVolume volume;
  std::size_t zeroed = 0;
  double threshold = 0.0;
  bool empty_heatmap = false;
};

/// Zeros voxels whose heatmap value reaches the tau-th percentile of the
/// nonzero values. An all-zero heatmap leaves the volume unchanged.
inline NullifyResult nullify(const BrainVolume& v, const BrainVolume& h, double tau) {
  require(tau > 0.0 && tau < 100.0, ErrorKind::invalid_argument, "tau must be in (0, 100)");
  require(v.dims == h.dims, ErrorKind::shape, "heatmap and volume dims differ");
  NullifyResult r;
  const auto thr = nonzero_percentile(h, tau);
  if (!thr) {
    r.volume = v;
    r.empty_heatmap = true;
    return r;
  }
  r.threshold = *thr;
  r.volume = nullify_at(v, h, *thr, &r.zeroed);
  return r;
}

/// Zeros `count` voxels drawn uniformly without replacement from `support`.
inline BrainVolume nullify_random(const BrainVolume& v, const std::vector<std::uint32_t>& support, std::size_t count,
                                  std::uint64_t seed) {
  require(count <= support.size(), ErrorKind::invalid_argument, "random set larger than its support");
  auto pool = support;
  Rng rng(derive_seed(seed, "nullify/random"));
  for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  BrainVolume out = v;
  for (std::size_t i = 0; i < count; ++i) out.data[pool[i]] = 0.0f;
  return out;
}

/// Fraction of total heatmap mass inside `box`.
inline double mass_in_box(const BrainVolume& h, const VoxelBox& box) {
  double in = 0.0, all = 0.0;
  for (int k = 0; k < h.dims.z; ++k)
    for (int j = 0; j < h.dims.y; ++j)
      for (int i = 0; i < h.dims.x; ++i) {
        const double x = h.at(i, j, k);
        all += x;
        if (box.contains(i, j, k)) in += x;
      }
  return all > 0.0 ? in / all : 0.0;
}

// ---- export -----------------------------------------------------------------

/// Black -> red -> yellow -> white ramp.
inline void hot_colormap(double t, float& r, float& g, float& b) {
  t = std::clamp(t, 0.0, 1.0);
  r = static_cast<float>(std::min(1.0, 3.0 * t));
  g = static_cast<float>(std::clamp(3.0 * t - 1.0, 0.0, 1.0));
  b = static_cast<float>(std::clamp(3.0 * t - 2.0, 0.0, 1.0));
}

/// Up to `count` evenly spaced axial slices side by side, each scaled up by `zoom`.
inline Image axial_montage(const BrainVolume& h, int count = 8, int zoom = 4) {
  const int n = std::min(count, h.dims.z);
  std::vector<Image> tiles;
  for (int s = 0; s < n; ++s) {
    const int k = n == 1 ? 0 : s * (h.dims.z - 1) / (n - 1);
    Image tile(h.dims.x * zoom, h.dims.y * zoom);
    for (int y = 0; y < tile.height; ++y)
      for (int x = 0; x < tile.width; ++x) {
        float r, g, b;
        hot_colormap(h.at(x / zoom, h.dims.y - 1 - y / zoom, k), r, g, b);
        tile.at(x, y, 0) = r;
        tile.at(x, y, 1) = g;
        tile.at(x, y, 2) = b;
      }
    tiles.push_back(std::move(tile));
  }
  return hconcat(tiles);
}

inline void write_heatmap(const VoxelHeatmap& h, const std::filesystem::path& nvol_path, std::optional<double> tau = {},
                          bool montage = true) {
  write_volume(h.values, nvol_path);
  nlohmann::ordered_json meta{{"concept", h.concept_name}, {"scales", h.scales_used}};
  meta["tau"] = tau ? nlohmann::ordered_json(*tau) : nlohmann::ordered_json();
  auto meta_path = nvol_path;
  meta_path.replace_extension(".meta.json");
  io::write_file(meta_path, meta.dump(2) + "\n");
  if (montage) {
    auto png = nvol_path;
    png.replace_extension(".montage.ppm");
    write_ppm(axial_montage(h.values), png);
  }
}

}  // namespace voxelbridge
