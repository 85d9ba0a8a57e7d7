#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "voxelbridge/binary_io.hpp"
#include "voxelbridge/error.hpp"
#include "voxelbridge/volume.hpp"

namespace voxelbridge {

struct PatchSpec {
  int r = 14;
  Dims3 canonical{83, 104, 81};
  int retain_threshold = 1;

  std::size_t patch_dim() const { return static_cast<std::size_t>(r) * r * r; }
  Dims3 grid() const { return {(canonical.x + r - 1) / r, (canonical.y + r - 1) / r, (canonical.z + r - 1) / r}; }
  Dims3 padded() const {
    const auto g = grid();
    return {g.x * r, g.y * r, g.z * r};
  }

  void validate() const {
    require(r >= 1, ErrorKind::invalid_argument, "patch edge r must be >= 1");
    require(canonical.positive(), ErrorKind::invalid_argument, "canonical dims must be positive");
    require(retain_threshold >= 1, ErrorKind::invalid_argument, "retain_threshold must be >= 1");
  }
};

struct PatchIndexMap {
  Dims3 grid_dims;
  std::vector<std::uint32_t> retained;  // strictly increasing flattened grid-cell indices
  Dims3 pad;                            // zeros appended at the high end of each axis

  std::size_t size() const { return retained.size(); }
  std::size_t cell_count() const { return grid_dims.count(); }
  friend bool operator==(const PatchIndexMap&, const PatchIndexMap&) = default;
};

/// N x C matrix of retained patches (row-major) plus its grid bookkeeping.
struct PatchedSignal {
  std::vector<float> values;
  PatchIndexMap index_map;
  PatchSpec spec;
  std::string provenance;

  std::size_t rows() const { return index_map.size(); }
  std::size_t cols() const { return spec.patch_dim(); }
  const float* row(std::size_t k) const { return values.data() + k * cols(); }
  float* row(std::size_t k) { return values.data() + k * cols(); }

  void validate() const {
    require(values.size() == rows() * cols(), ErrorKind::shape, "patched signal values do not match N x r^3");
    for (std::size_t k = 0; k < rows(); ++k) {
      require(index_map.retained[k] < index_map.cell_count(), ErrorKind::shape, "retained index outside grid");
      require(k == 0 || index_map.retained[k] > index_map.retained[k - 1], ErrorKind::shape,
              "retained indices must be strictly increasing");
    }
  }
};

// Align-corners-false source coordinate, clamped to the valid range.
inline void resample_coord(int out_i, int in_n, int out_n, int& i0, int& i1, double& t) {
  double src = (out_i + 0.5) * (static_cast<double>(in_n) / out_n) - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
  i0 = static_cast<int>(std::floor(src));
  i1 = std::min(i0 + 1, in_n - 1);
  t = src - i0;
}

/// Separable trilinear resampling: three 1D passes along x, then y, then z.
inline BrainVolume trilinear_resize(const BrainVolume& v, Dims3 target) {
  require(target.positive(), ErrorKind::invalid_argument, "target dims must be positive");
  v.validate();
  const Dims3 in = v.dims;
  std::vector<double> cur(v.data.begin(), v.data.end());
  Dims3 cur_dims = in;

  auto pass = [&](int axis) {
    const int in_n = cur_dims[axis];
    const int out_n = target[axis];
    Dims3 next_dims = cur_dims;
    (axis == 0 ? next_dims.x : axis == 1 ? next_dims.y : next_dims.z) = out_n;
    std::vector<double> next(next_dims.count());
    std::vector<int> lo(out_n), hi(out_n);
    std::vector<double> frac(out_n);
    for (int o = 0; o < out_n; ++o) resample_coord(o, in_n, out_n, lo[o], hi[o], frac[o]);
    for (int k = 0; k < next_dims.z; ++k)
      for (int j = 0; j < next_dims.y; ++j)
        for (int i = 0; i < next_dims.x; ++i) {
          const int o = axis == 0 ? i : axis == 1 ? j : k;
          auto src = [&](int s) {
            return axis == 0 ? cur[cur_dims.index(s, j, k)]
                 : axis == 1 ? cur[cur_dims.index(i, s, k)]
                             : cur[cur_dims.index(i, j, s)];
          };
          next[next_dims.index(i, j, k)] = std::lerp(src(lo[o]), src(hi[o]), frac[o]);
        }
    cur = std::move(next);
    cur_dims = next_dims;
  };
  for (int axis = 0; axis < 3; ++axis)
    if (target[axis] != in[axis]) pass(axis);

  BrainVolume out(target, 0.0f, v.subject_id);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(cur[i]);
  return out;
}

inline constexpr double kStdFloor = 1e-6;

/// z-score with statistics taken over masked voxels (population sigma,
/// floored); the same affine map is applied to every voxel.
inline BrainVolume normalize(const BrainVolume& v, const VoxelMask& mask) {
  require(v.dims == mask.dims, ErrorKind::shape, "normalize: volume and mask dims differ");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.data.size(); ++i)
    if (mask.bits[i]) {
      sum += v.data[i];
      ++n;
    }
  require(n > 0, ErrorKind::invalid_argument, "normalize: mask has no true voxels");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < v.data.size(); ++i)
    if (mask.bits[i]) ss += (v.data[i] - mean) * (v.data[i] - mean);
  const double sigma = std::max(std::sqrt(ss / static_cast<double>(n)), kStdFloor);
  BrainVolume out = v;
  for (auto& x : out.data) x = static_cast<float>((x - mean) / sigma);
  return out;
}

inline PatchIndexMap plan_patches(const PatchSpec& spec, const VoxelMask& mask) {
  spec.validate();
  require(mask.dims == spec.canonical, ErrorKind::shape, "mask must be in canonical dims");
  const int r = spec.r;
  PatchIndexMap map;
  map.grid_dims = spec.grid();
  const Dims3 padded = spec.padded();
  map.pad = {padded.x - spec.canonical.x, padded.y - spec.canonical.y, padded.z - spec.canonical.z};
  std::vector<int> counts(map.cell_count(), 0);
  const Dims3& c = spec.canonical;
  for (int k = 0; k < c.z; ++k)
    for (int j = 0; j < c.y; ++j)
      for (int i = 0; i < c.x; ++i)
        if (mask(i, j, k)) ++counts[map.grid_dims.index(i / r, j / r, k / r)];
  for (std::uint32_t cell = 0; cell < counts.size(); ++cell)
    if (counts[cell] >= spec.retain_threshold) map.retained.push_back(cell);
  return map;
}

/// Gathers retained r^3 cubes (x-fastest within each cube) from a canonical
/// volume; padding voxels read as zero.
inline PatchedSignal extract_patches(const BrainVolume& v, const PatchSpec& spec, const PatchIndexMap& map) {
  require(v.dims == spec.canonical, ErrorKind::shape,
          "patchify: volume dims " + to_string(v.dims) + " != canonical " + to_string(spec.canonical));
  PatchedSignal out;
  out.spec = spec;
  out.index_map = map;
  const int r = spec.r;
  const auto C = spec.patch_dim();
  out.values.assign(map.size() * C, 0.0f);
  const Dims3& g = map.grid_dims;
  for (std::size_t row = 0; row < map.size(); ++row) {
    const std::uint32_t cell = map.retained[row];
    const int gx = static_cast<int>(cell % g.x), gy = static_cast<int>((cell / g.x) % g.y),
              gz = static_cast<int>(cell / (static_cast<std::uint32_t>(g.x) * g.y));
    float* dst = out.row(row);
    for (int dz = 0; dz < r; ++dz)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx, ++dst) {
          const int i = gx * r + dx, j = gy * r + dy, k = gz * r + dz;
          if (i < v.dims.x && j < v.dims.y && k < v.dims.z) *dst = v.at(i, j, k);
        }
  }
  return out;
}

inline PatchedSignal patchify(const BrainVolume& v, const PatchSpec& spec, const VoxelMask& mask) {
  auto map = plan_patches(spec, mask);
  require(!map.retained.empty(), ErrorKind::invalid_argument, "patchify: mask retains no patches");
  return extract_patches(v, spec, map);
}

/// Inverse of patchify on the retained region; everything else is zero.
inline BrainVolume depatchify(const PatchedSignal& p) {
  p.validate();
  BrainVolume out(p.spec.canonical);
  const int r = p.spec.r;
  const Dims3& g = p.index_map.grid_dims;
  for (std::size_t row = 0; row < p.rows(); ++row) {
    const std::uint32_t cell = p.index_map.retained[row];
    const int gx = static_cast<int>(cell % g.x), gy = static_cast<int>((cell / g.x) % g.y),
              gz = static_cast<int>(cell / (static_cast<std::uint32_t>(g.x) * g.y));
    const float* src = p.row(row);
    for (int dz = 0; dz < r; ++dz)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx, ++src) {
          const int i = gx * r + dx, j = gy * r + dy, k = gz * r + dz;
          if (i < out.dims.x && j < out.dims.y && k < out.dims.z) out.at(i, j, k) = *src;
        }
  }
  return out;
}

/// For every canonical voxel, the row of the retained patch covering it, or -1.
inline std::vector<int> voxel_to_row(const PatchIndexMap& map, const PatchSpec& spec) {
  std::vector<int> cell_row(map.cell_count(), -1);
  for (std::size_t row = 0; row < map.size(); ++row) cell_row[map.retained[row]] = static_cast<int>(row);
  const Dims3& c = spec.canonical;
  std::vector<int> out(c.count(), -1);
  const int r = spec.r;
  for (int k = 0; k < c.z; ++k)
    for (int j = 0; j < c.y; ++j)
      for (int i = 0; i < c.x; ++i) out[c.index(i, j, k)] = cell_row[map.grid_dims.index(i / r, j / r, k / r)];
  return out;
}

inline PatchedSignal mixup(const PatchedSignal& b1, const PatchedSignal& b2, double lambda) {
  require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::invalid_argument, "mixup lambda must be in [0, 1]");
  require(b1.index_map == b2.index_map && b1.spec.r == b2.spec.r && b1.spec.canonical == b2.spec.canonical,
          ErrorKind::shape, "mixup: signals have different index maps");
  PatchedSignal out = b1;
  const auto lam = static_cast<float>(lambda);
  const float rest = 1.0f - lam;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = lam * b1.values[i] + rest * b2.values[i];
  if (lambda == 1.0) out.values = b1.values;
  if (lambda == 0.0) out.values = b2.values;
  return out;
}

inline VoxelMask build_union_mask(const std::vector<VoxelMask>& masks) {
  require(!masks.empty(), ErrorKind::invalid_argument, "union of an empty mask list");
  VoxelMask out(masks.front().dims);
  for (const auto& m : masks) {
    require(m.dims == out.dims, ErrorKind::shape, "union: masks must share canonical dims");
    for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] |= m.bits[i];
  }
  return out;
}

/// resize -> normalize -> patchify.
inline PatchedSignal preprocess_volume(const BrainVolume& v, const VoxelMask& mask, const PatchSpec& spec) {
  const auto resized = v.dims == spec.canonical ? v : trilinear_resize(v, spec.canonical);
  return patchify(normalize(resized, mask), spec, mask);
}

// NPAT1 text header then N * r^3 float32 LE values, row-major.
inline std::string encode_npat(const PatchedSignal& p) {
  p.validate();
  std::ostringstream h;
  const auto& m = p.index_map;
  h << "NPAT1\ngrid " << m.grid_dims.x << ' ' << m.grid_dims.y << ' ' << m.grid_dims.z << "\nr " << p.spec.r
    << "\npad " << m.pad.x << ' ' << m.pad.y << ' ' << m.pad.z << "\nretained " << m.size();
  for (auto idx : m.retained) h << ' ' << idx;
  h << "\n---\n";
  std::string out = std::move(h).str();
  io::append_f32le(out, p.values);
  return out;
}

inline PatchedSignal decode_npat(std::string_view bytes) {
  if (bytes.substr(0, 6) != "NPAT1\n") fail(ErrorKind::bad_magic, "not an NPAT1 file");
  auto [lines, payload_at] = io::split_header(bytes, 8);
  require(lines.size() == 5, ErrorKind::parse, "NPAT1 header must have 5 lines before ---");
  PatchedSignal p;
  std::string tag;
  auto& m = p.index_map;
  {
    std::istringstream ss(lines[1]);
    if (!(ss >> tag >> m.grid_dims.x >> m.grid_dims.y >> m.grid_dims.z) || tag != "grid")
      fail(ErrorKind::parse, "bad grid line");
  }
  {
    std::istringstream ss(lines[2]);
    if (!(ss >> tag >> p.spec.r) || tag != "r" || p.spec.r < 1) fail(ErrorKind::parse, "bad r line");
  }
  {
    std::istringstream ss(lines[3]);
    if (!(ss >> tag >> m.pad.x >> m.pad.y >> m.pad.z) || tag != "pad") fail(ErrorKind::parse, "bad pad line");
  }
  {
    std::istringstream ss(lines[4]);
    std::size_t n = 0;
    if (!(ss >> tag >> n) || tag != "retained") fail(ErrorKind::parse, "bad retained line");
    m.retained.resize(n);
    for (auto& idx : m.retained)
      if (!(ss >> idx)) fail(ErrorKind::parse, "retained list shorter than its count");
  }
  require(m.grid_dims.positive(), ErrorKind::parse, "grid dims must be positive");
  p.spec.canonical = {m.grid_dims.x * p.spec.r - m.pad.x, m.grid_dims.y * p.spec.r - m.pad.y,
                      m.grid_dims.z * p.spec.r - m.pad.z};
  require(p.spec.canonical.positive(), ErrorKind::parse, "padding exceeds grid extent");
  const auto payload = bytes.substr(payload_at);
  require(payload.size() == m.size() * p.spec.patch_dim() * 4, ErrorKind::payload_mismatch,
          "NPAT1 payload size does not match N * r^3");
  p.values = io::decode_f32le(payload);
  require(std::all_of(p.values.begin(), p.values.end(), [](float x) { return std::isfinite(x); }),
          ErrorKind::non_finite, "NPAT1 payload contains non-finite values");
  p.validate();
  return p;
}

inline void write_npat(const PatchedSignal& p, const std::filesystem::path& path) { io::write_file(path, encode_npat(p)); }

inline PatchedSignal read_npat(const std::filesystem::path& path) {
  auto p = decode_npat(io::read_file(path));
  p.provenance = path.stem().string();
  return p;
}

}  // namespace voxelbridge
