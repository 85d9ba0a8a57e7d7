#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "voxelbridge/error.hpp"
#include "voxelbridge/rng.hpp"

namespace voxelbridge::io {

inline void append_f32le(std::string& out, std::span<const float> values) {
  const auto start = out.size();
  out.resize(start + values.size() * 4);
  char* dst = out.data() + start;
  for (float v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    dst[0] = static_cast<char>(bits & 0xff);
    dst[1] = static_cast<char>((bits >> 8) & 0xff);
    dst[2] = static_cast<char>((bits >> 16) & 0xff);
    dst[3] = static_cast<char>((bits >> 24) & 0xff);
    dst += 4;
  }
}

inline std::vector<float> decode_f32le(std::string_view bytes) {
  std::vector<float> out(bytes.size() / 4);
  const auto* src = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < out.size(); ++i, src += 4) {
    const std::uint32_t bits = std::uint32_t{src[0]} | (std::uint32_t{src[1]} << 8) |
                               (std::uint32_t{src[2]} << 16) | (std::uint32_t{src[3]} << 24);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

inline void write_f32_file(const std::filesystem::path& path, std::span<const float> values) {
  std::string bytes;
  append_f32le(bytes, values);
  write_file(path, bytes);
}

inline std::vector<float> read_f32_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() % 4 != 0) fail(ErrorKind::payload_mismatch, path.string() + ": size not a multiple of 4");
  return decode_f32le(bytes);
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

inline std::string content_hash(std::string_view bytes) { return "fnv1a64:" + hex64(fnv1a64(bytes)); }

/// Splits a header block terminated by a line holding exactly "---".
/// Returns the header lines and the byte offset of the payload.
inline std::pair<std::vector<std::string>, std::size_t> split_header(std::string_view bytes, std::size_t max_lines) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (lines.size() < max_lines) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) fail(ErrorKind::parse, "unterminated header");
    std::string line(bytes.substr(pos, nl - pos));
    pos = nl + 1;
    if (line == "---") return {lines, pos};
    lines.push_back(std::move(line));
  }
  fail(ErrorKind::parse, "header too long");
}

}  // namespace voxelbridge::io
