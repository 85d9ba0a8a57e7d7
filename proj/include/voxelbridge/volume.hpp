#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "voxelbridge/binary_io.hpp"
#include "voxelbridge/error.hpp"

namespace voxelbridge {

struct Dims3 {
  int x = 0;
  int y = 0;
  int z = 0;

  std::size_t count() const { return static_cast<std::size_t>(x) * y * z; }
  bool positive() const { return x > 0 && y > 0 && z > 0; }
  int operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(x) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(y) * k);
  }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

inline std::string to_string(const Dims3& d) {
  return std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z);
}

/// A 3D scalar field in x-fastest raster order.
struct BrainVolume {
  std::string subject_id;
  Dims3 dims;
  std::vector<float> data;

  BrainVolume() = default;
  BrainVolume(Dims3 d, float fill = 0.0f, std::string subject = {})
      : subject_id(std::move(subject)), dims(d), data(d.count(), fill) {}

  float& at(int i, int j, int k) { return data[dims.index(i, j, k)]; }
  float at(int i, int j, int k) const { return data[dims.index(i, j, k)]; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
  }

  void validate() const {
    require(dims.positive(), ErrorKind::shape, "volume dims must be positive, got " + to_string(dims));
    require(data.size() == dims.count(), ErrorKind::payload_mismatch,
            "volume data length " + std::to_string(data.size()) + " != " + std::to_string(dims.count()));
    require(all_finite(), ErrorKind::non_finite, "volume contains non-finite values");
  }
  friend bool operator==(const BrainVolume&, const BrainVolume&) = default;
};

/// Boolean field on the same raster as BrainVolume.
struct VoxelMask {
  Dims3 dims;
  std::vector<std::uint8_t> bits;

  VoxelMask() = default;
  explicit VoxelMask(Dims3 d, bool fill = false) : dims(d), bits(d.count(), fill ? 1 : 0) {}

  bool operator()(int i, int j, int k) const { return bits[dims.index(i, j, k)] != 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1})); }
  friend bool operator==(const VoxelMask&, const VoxelMask&) = default;
};

inline BrainVolume mask_to_volume(const VoxelMask& m) {
  BrainVolume v(m.dims);
  for (std::size_t i = 0; i < m.bits.size(); ++i) v.data[i] = m.bits[i] ? 1.0f : 0.0f;
  return v;
}

inline VoxelMask volume_to_mask(const BrainVolume& v) {
  VoxelMask m(v.dims);
  for (std::size_t i = 0; i < v.data.size(); ++i) m.bits[i] = v.data[i] > 0.5f ? 1 : 0;
  return m;
}

// NVOL1: five text header lines then X*Y*Z float32 LE values, x fastest.
inline std::string encode_nvol(const BrainVolume& v) {
  v.validate();
  std::string out = "NVOL1\ndims " + std::to_string(v.dims.x) + " " + std::to_string(v.dims.y) + " " +
                    std::to_string(v.dims.z) + "\ndtype f32le\norder x-fastest\n---\n";
  io::append_f32le(out, v.data);
  return out;
}

inline BrainVolume decode_nvol(std::string_view bytes) {
  if (bytes.substr(0, 6) != "NVOL1\n") fail(ErrorKind::bad_magic, "not an NVOL1 file");
  auto [lines, payload_at] = io::split_header(bytes, 8);
  if (lines.size() != 4) fail(ErrorKind::parse, "NVOL1 header must have 4 lines before ---");
  BrainVolume v;
  {
    std::istringstream ss(lines[1]);
    std::string tag;
    if (!(ss >> tag >> v.dims.x >> v.dims.y >> v.dims.z) || tag != "dims")
      fail(ErrorKind::parse, "bad dims line: " + lines[1]);
  }
  if (lines[2] != "dtype f32le") fail(ErrorKind::parse, "unsupported dtype line: " + lines[2]);
  if (lines[3] != "order x-fastest") fail(ErrorKind::parse, "unsupported order line: " + lines[3]);
  if (!v.dims.positive()) fail(ErrorKind::shape, "dims must be positive");
  const auto payload = bytes.substr(payload_at);
  if (payload.size() != v.dims.count() * 4)
    fail(ErrorKind::payload_mismatch, "payload holds " + std::to_string(payload.size() / 4) + " values, dims say " +
                                          std::to_string(v.dims.count()));
  v.data = io::decode_f32le(payload);
  if (!v.all_finite()) fail(ErrorKind::non_finite, "volume contains non-finite values");
  return v;
}

inline void write_volume(const BrainVolume& v, const std::filesystem::path& path) {
  io::write_file(path, encode_nvol(v));
}

inline BrainVolume read_volume(const std::filesystem::path& path) {
  // NVOL1 carries no subject tag; the dataset manifest supplies it.
  return decode_nvol(io::read_file(path));
}

}  // namespace voxelbridge
