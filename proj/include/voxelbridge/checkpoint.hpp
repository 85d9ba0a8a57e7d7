#pragma once

#include <filesystem>
#include <span>
#include <string>

#include <json.hpp>

#include "voxelbridge/autograd.hpp"
#include "voxelbridge/binary_io.hpp"
#include "voxelbridge/error.hpp"

namespace voxelbridge {

namespace fs = std::filesystem;

// Checkpoint directory: manifest.json (tensor name -> shape, dtype, file,
// content hash, plus free-form metadata), config.json, one raw f32le file per
// tensor.
inline void save_tensors(const ad::ParamStore<float>& store, const fs::path& dir, const nlohmann::ordered_json& config,
                         const nlohmann::ordered_json& metadata = nlohmann::ordered_json::object()) {
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "voxelbridge-checkpoint-1";
  manifest["tensors"] = nlohmann::ordered_json::object();
  for (const auto& p : store) {
    std::string bytes;
    io::append_f32le(bytes, std::span<const float>(p->value.data(), static_cast<std::size_t>(p->value.size())));
    const auto file = p->name + ".f32";
    io::write_file(dir / file, bytes);
    manifest["tensors"][p->name] = {{"shape", {p->value.rows(), p->value.cols()}},
                                    {"dtype", "f32le"},
                                    {"file", file},
                                    {"hash", io::content_hash(bytes)}};
  }
  manifest["metadata"] = metadata;
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  io::write_file(dir / "config.json", config.dump(2) + "\n");
}

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, path.string() + ": " + e.what());
  }
}

/// Fills every tensor of `store` from `dir`, checking shape and content hash.
inline void load_tensors(ad::ParamStore<float>& store, const fs::path& dir) {
  const auto manifest = read_json(dir / "manifest.json");
  const auto& tensors = manifest.at("tensors");
  for (auto& p : store) {
    require(tensors.contains(p->name), ErrorKind::parse, "checkpoint lacks tensor " + p->name);
    const auto& entry = tensors.at(p->name);
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    require(rows == p->value.rows() && cols == p->value.cols(), ErrorKind::shape,
            "checkpoint tensor " + p->name + " has shape " + std::to_string(rows) + "x" + std::to_string(cols));
    const auto bytes = io::read_file(dir / entry.at("file").get<std::string>());
    require(io::content_hash(bytes) == entry.at("hash").get<std::string>(), ErrorKind::payload_mismatch,
            "content hash mismatch for tensor " + p->name);
    require(bytes.size() == static_cast<std::size_t>(rows * cols) * 4, ErrorKind::payload_mismatch,
            "tensor file size mismatch for " + p->name);
    const auto values = io::decode_f32le(bytes);
    for (std::size_t i = 0; i < values.size(); ++i) {
      require(std::isfinite(values[i]), ErrorKind::non_finite, "non-finite value in tensor " + p->name);
      p->value.data()[i] = values[i];
    }
  }
}

}  // namespace voxelbridge
