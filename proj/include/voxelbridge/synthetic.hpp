#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxelbridge/dataset.hpp"
#include "voxelbridge/error.hpp"
#include "voxelbridge/rng.hpp"
#include "voxelbridge/volume.hpp"

namespace voxelbridge {

/// Axis-aligned half-open voxel box.
struct VoxelBox {
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};
  bool contains(int i, int j, int k) const {
    return i >= lo[0] && i < hi[0] && j >= lo[1] && j < hi[1] && k >= lo[2] && k < hi[2];
  }
};

/// A concept whose image-embedding direction is driven only by voxels in
/// `region`: latent 0 loads on region voxels alone and maps onto `direction`.
struct PlantedConcept {
  std::string name;
  std::vector<float> direction;  // unit vector in z_c space
  VoxelBox region;
  double gain = 2.0;
};

struct SyntheticWorldParams {
  std::uint64_t seed = 0;
  int d_c = 64;
  int d_v = 256;
  int latent_dim = 16;
  Dims3 grid{20, 24, 18};
  double mask_fraction = 0.15;
  double noise_sigma = 0.5;
};

/// Desk-scale generative world. Masked voxels respond linearly to a stimulus
/// latent u; voxels outside the mask carry stimulus-independent noise.
struct SyntheticWorld {
  SyntheticWorldParams params;
  VoxelMask mask;
  std::size_t mask_voxels = 0;  // M
  std::vector<std::uint32_t> mask_index;  // raster index of the m-th mask voxel
  std::vector<double> loading;  // M x K, row-major
  std::vector<double> proj_c;   // d_c x K
  std::vector<double> proj_v;   // d_v x K
  std::optional<PlantedConcept> planted;

  int latent_dim() const { return params.latent_dim; }
};

/// Contiguous ellipsoidal blob holding exactly floor(fraction * X*Y*Z) voxels.
inline VoxelMask ellipsoid_mask(Dims3 grid, double fraction) {
  require(grid.positive(), ErrorKind::invalid_argument, "grid dims must be positive");
  require(fraction > 0.0 && fraction <= 1.0, ErrorKind::invalid_argument, "mask_fraction must be in (0, 1]");
  const std::size_t total = grid.count();
  // The epsilon keeps products like 0.15 * 8640 from flooring to 1295.
  const auto want = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 1e-9)));
  const double cx = 0.5 * (grid.x - 1), cy = 0.5 * (grid.y - 1), cz = 0.5 * (grid.z - 1);
  const double ax = 0.5 * grid.x, ay = 0.5 * grid.y, az = 0.5 * grid.z;
  std::vector<std::pair<double, std::uint32_t>> order;
  order.reserve(total);
  for (int k = 0; k < grid.z; ++k)
    for (int j = 0; j < grid.y; ++j)
      for (int i = 0; i < grid.x; ++i) {
        const double dx = (i - cx) / ax, dy = (j - cy) / ay, dz = (k - cz) / az;
        order.emplace_back(dx * dx + dy * dy + dz * dz, static_cast<std::uint32_t>(grid.index(i, j, k)));
      }
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  VoxelMask m(grid);
  for (std::size_t n = 0; n < want; ++n) m.bits[order[n].second] = 1;
  return m;
}

inline SyntheticWorld generate_synthetic_world(const SyntheticWorldParams& p,
                                               std::optional<PlantedConcept> planted = std::nullopt) {
  require(p.d_c > 0 && p.d_v > 0 && p.latent_dim > 0, ErrorKind::invalid_argument, "embedding dims must be positive");
  require(p.noise_sigma >= 0.0, ErrorKind::invalid_argument, "noise_sigma must be nonnegative");
  SyntheticWorld w;
  w.params = p;
  w.mask = ellipsoid_mask(p.grid, p.mask_fraction);
  for (std::uint32_t i = 0; i < w.mask.bits.size(); ++i)
    if (w.mask.bits[i]) w.mask_index.push_back(i);
  w.mask_voxels = w.mask_index.size();

  const auto K = static_cast<std::size_t>(p.latent_dim);
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(K));
  {
    Rng rng(derive_seed(p.seed, "world/loading"));
    w.loading.resize(w.mask_voxels * K);
    for (auto& x : w.loading) x = rng.normal() * inv_sqrt_k;
  }
  {
    Rng rng(derive_seed(p.seed, "world/proj_c"));
    w.proj_c.resize(static_cast<std::size_t>(p.d_c) * K);
    for (auto& x : w.proj_c) x = rng.normal();
  }
  {
    Rng rng(derive_seed(p.seed, "world/proj_v"));
    w.proj_v.resize(static_cast<std::size_t>(p.d_v) * K);
    for (auto& x : w.proj_v) x = rng.normal() * inv_sqrt_k;
  }

  if (planted) {
    auto& pc = *planted;
    require(static_cast<int>(pc.direction.size()) == p.d_c, ErrorKind::shape, "planted direction must have length d_c");
    double norm = 0.0;
    for (float v : pc.direction) norm += double(v) * v;
    norm = std::sqrt(norm);
    require(norm > 0.0, ErrorKind::invalid_argument, "planted direction must be nonzero");
    std::vector<double> dir(pc.direction.size());
    for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = pc.direction[i] / norm;
    // Latent 0 drives z_c only along `dir`, with gain times the typical column
    // norm; every other latent is orthogonal to it.
    const double col = pc.gain * std::sqrt(static_cast<double>(p.d_c));
    for (std::size_t c = 0; c < K; ++c) {
      if (c == 0) {
        for (int r = 0; r < p.d_c; ++r) w.proj_c[r * K] = col * dir[r];
        continue;
      }
      double dot = 0.0;
      for (int r = 0; r < p.d_c; ++r) dot += w.proj_c[r * K + c] * dir[r];
      for (int r = 0; r < p.d_c; ++r) w.proj_c[r * K + c] -= dot * dir[r];
    }
    // Latent 0 reaches voxels only inside the planted region.
    for (std::size_t m = 0; m < w.mask_voxels; ++m) {
      const std::size_t idx = w.mask_index[m];
      const int i = static_cast<int>(idx % p.grid.x);
      const int j = static_cast<int>((idx / p.grid.x) % p.grid.y);
      const int k = static_cast<int>(idx / (static_cast<std::size_t>(p.grid.x) * p.grid.y));
      if (!pc.region.contains(i, j, k)) w.loading[m * K] = 0.0;
      else w.loading[m * K] = pc.gain * std::abs(w.loading[m * K]) + 0.5 * inv_sqrt_k;
    }
    w.planted = pc;
  }
  return w;
}

/// Latent u ~ N(0, I_K) as a pure function of the stimulus seed.
inline std::vector<double> draw_latent(const SyntheticWorld& w, std::uint64_t stimulus_seed) {
  Rng rng(derive_seed(stimulus_seed, "stimulus/latent"));
  std::vector<double> u(static_cast<std::size_t>(w.latent_dim()));
  for (auto& x : u) x = rng.normal();
  return u;
}

/// Noise-free masked response W u, one value per mask voxel.
inline std::vector<double> masked_signal(const SyntheticWorld& w, const std::vector<double>& u) {
  const auto K = u.size();
  require(static_cast<int>(K) == w.latent_dim(), ErrorKind::shape, "latent length mismatch");
  std::vector<double> s(w.mask_voxels, 0.0);
  for (std::size_t m = 0; m < w.mask_voxels; ++m) {
    double acc = 0.0;
    for (std::size_t c = 0; c < K; ++c) acc += w.loading[m * K + c] * u[c];
    s[m] = acc;
  }
  return s;
}

inline BrainVolume render_trial(const SyntheticWorld& w, const std::vector<double>& u, std::uint64_t stimulus_seed,
                                int trial_index, const std::string& subject_id = "synth") {
  const auto signal = masked_signal(w, u);
  BrainVolume v(w.params.grid, 0.0f, subject_id);
  Rng rng(derive_seed(stimulus_seed, static_cast<std::uint64_t>(trial_index), 0x7e1a1ULL));
  std::size_t m = 0;
  for (std::size_t idx = 0; idx < v.data.size(); ++idx) {
    const double draw = rng.normal();
    if (w.mask.bits[idx]) v.data[idx] = static_cast<float>(signal[m++] + w.params.noise_sigma * draw);
    else v.data[idx] = static_cast<float>(draw);
  }
  return v;
}

namespace detail {
inline constexpr std::array<const char*, 8> kObjects{"zebra", "train", "dog", "cat", "bus", "giraffe", "bird", "horse"};
inline constexpr std::array<const char*, 8> kScenes{"field", "street", "kitchen", "park",
                                                    "beach", "forest", "room",    "station"};
inline constexpr std::array<const char*, 4> kColors{"black", "white", "red", "brown"};

inline std::size_t argmax_range(const std::vector<double>& u, std::size_t lo, std::size_t hi) {
  hi = std::min(hi, u.size());
  if (lo >= hi) return 0;
  return static_cast<std::size_t>(std::max_element(u.begin() + lo, u.begin() + hi) - u.begin()) - lo;
}
}  // namespace detail

inline std::string stimulus_name(std::uint64_t stimulus_seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "stim%06llu", static_cast<unsigned long long>(stimulus_seed));
  return buf;
}

/// z_c = normalize(P_c u), z_v = P_v u, plus templated captions and concept words.
inline StimulusTargets make_targets(const SyntheticWorld& w, const std::vector<double>& u, std::string stimulus_id) {
  const auto K = u.size();
  StimulusTargets t;
  t.stimulus_id = std::move(stimulus_id);
  std::vector<double> zc(static_cast<std::size_t>(w.params.d_c), 0.0);
  for (std::size_t r = 0; r < zc.size(); ++r)
    for (std::size_t c = 0; c < K; ++c) zc[r] += w.proj_c[r * K + c] * u[c];
  double norm = 0.0;
  for (double x : zc) norm += x * x;
  norm = std::sqrt(norm);
  if (norm <= 0.0) norm = 1.0;
  t.z_c.resize(zc.size());
  for (std::size_t r = 0; r < zc.size(); ++r) t.z_c[r] = static_cast<float>(zc[r] / norm);
  t.z_v.assign(static_cast<std::size_t>(w.params.d_v), 0.0f);
  for (std::size_t r = 0; r < t.z_v.size(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < K; ++c) acc += w.proj_v[r * K + c] * u[c];
    t.z_v[r] = static_cast<float>(acc);
  }

  std::string object = detail::kObjects[detail::argmax_range(u, 0, 8)];
  if (w.planted) object = u[0] > 0.0 ? w.planted->name : detail::kObjects[1 + detail::argmax_range(u, 1, 8)];
  const std::string scene = K > 8 ? detail::kScenes[detail::argmax_range(u, 8, 16)] : detail::kScenes[0];
  const std::string color = detail::kColors[(u[K - 1] > 0.0 ? 1 : 0) + (K > 1 && u[K - 2] > 0.0 ? 2 : 0)];
  t.captions.push_back("a " + color + " " + object + " in a " + scene);
  t.captions.push_back("a " + color + " " + object + " stands in the middle of a " + scene + " on a clear day");
  t.objects = {object, scene};
  return t;
}

struct SyntheticTrial {
  BrainVolume volume;
  StimulusTargets targets;
  std::vector<double> latent;
};

inline SyntheticTrial sample_synthetic_trial(const SyntheticWorld& w, std::uint64_t stimulus_seed, int trial_index) {
  require(w.mask_voxels > 0 && w.loading.size() == w.mask_voxels * static_cast<std::size_t>(w.latent_dim()),
          ErrorKind::invalid_argument, "synthetic world is not initialized");
  SyntheticTrial t;
  t.latent = draw_latent(w, stimulus_seed);
  t.volume = render_trial(w, t.latent, stimulus_seed, trial_index);
  t.targets = make_targets(w, t.latent, stimulus_name(stimulus_seed));
  return t;
}

/// Voxelwise mean over trials; all volumes must share dims.
inline BrainVolume average_volumes(const std::vector<BrainVolume>& vs) {
  require(!vs.empty(), ErrorKind::invalid_argument, "nothing to average");
  BrainVolume out(vs.front().dims, 0.0f, vs.front().subject_id);
  std::vector<double> acc(out.data.size(), 0.0);
  for (const auto& v : vs) {
    require(v.dims == out.dims, ErrorKind::shape, "cannot average volumes of different dims");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v.data[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i] / vs.size());
  return out;
}

inline nlohmann::ordered_json to_json(const SyntheticWorldParams& p) {
  return {{"seed", p.seed},
          {"d_c", p.d_c},
          {"d_v", p.d_v},
          {"latent_dim", p.latent_dim},
          {"grid", {p.grid.x, p.grid.y, p.grid.z}},
          {"mask_fraction", p.mask_fraction},
          {"noise_sigma", p.noise_sigma}};
}

struct SyntheticDatasetLayout {
  fs::path root;
  fs::path manifest;  // root/manifest.jsonl
  fs::path mask;      // root/mask.nvol
  fs::path targets;   // root/targets
};

/// Writes `stimuli` stimuli x `trials` trials as NVOL1 files plus the target
/// store and manifest. Stimulus seeds run from `first_stimulus_seed`.
inline SyntheticDatasetLayout write_synthetic_dataset(const SyntheticWorld& w, const fs::path& root,
                                                      std::uint64_t first_stimulus_seed, int stimuli, int trials) {
  require(stimuli > 0 && trials > 0, ErrorKind::invalid_argument, "stimuli and trials must be positive");
  SyntheticDatasetLayout layout{root, root / "manifest.jsonl", root / "mask.nvol", root / "targets"};
  fs::create_directories(root / "volumes");
  auto store = TargetStore::create(layout.targets, static_cast<std::size_t>(w.params.d_c),
                                   static_cast<std::size_t>(w.params.d_v));
  DatasetManifest manifest;
  manifest.base_dir = root;
  manifest.targets_path = "targets";
  for (int s = 0; s < stimuli; ++s) {
    const auto seed = first_stimulus_seed + static_cast<std::uint64_t>(s);
    const auto u = draw_latent(w, seed);
    const auto targets = make_targets(w, u, stimulus_name(seed));
    store.write(targets);
    for (int t = 0; t < trials; ++t) {
      const auto rel = "volumes/" + targets.stimulus_id + "_t" + std::to_string(t) + ".nvol";
      write_volume(render_trial(w, u, seed, t), root / rel);
      manifest.records.push_back({targets.stimulus_id + "_t" + std::to_string(t), "synth", rel, targets.stimulus_id, t});
    }
  }
  write_manifest(manifest, layout.manifest);
  write_volume(mask_to_volume(w.mask), layout.mask);
  io::write_file(root / "world.json", to_json(w.params).dump(2) + "\n");
  return layout;
}

}  // namespace voxelbridge
