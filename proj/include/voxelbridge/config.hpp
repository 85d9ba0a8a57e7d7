#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxelbridge/binary_io.hpp"
#include "voxelbridge/error.hpp"
#include "voxelbridge/volume.hpp"

namespace voxelbridge {

struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string doc;
};

/// Every recognised key, its default and a one-line description.
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"seed", "7", "root seed; every stage derives its own seed from it"},
      {"threads", "1", "worker threads (VOXELBRIDGE_THREADS overrides)"},
      {"canonical", "83,104,81", "canonical volume dims X,Y,Z"},
      {"r", "14", "patch edge in voxels"},
      {"retain_threshold", "1", "mask voxels a cube needs to be retained"},
      {"synth.grid", "20,24,18", "synthetic world volume dims"},
      {"synth.mask_fraction", "0.15", "fraction of voxels inside the synthetic visual mask"},
      {"synth.noise_sigma", "0.5", "per-trial voxel noise"},
      {"synth.latent_dim", "16", "stimulus latent dimension"},
      {"synth.d_c", "64", "image-embedding (z_c) length"},
      {"synth.d_v", "256", "image-latent (z_v) length"},
      {"synth.stimuli", "256", "number of stimuli written by synth"},
      {"synth.trials", "3", "trials per stimulus"},
      {"synth.first_stimulus", "1000", "seed of the first stimulus"},
      {"encoder.n_layers", "4", "transformer blocks"},
      {"encoder.hidden", "128", "token width"},
      {"encoder.n_heads", "0", "attention heads; 0 means hidden/64"},
      {"encoder.mlp_ratio", "4", "block MLP width over hidden"},
      {"encoder.head_hidden", "256", "hidden width of the two output perceptrons"},
      {"encoder.alpha", "0.015625", "weight of the z_v term in the alignment loss"},
      {"encoder.dropout", "0", "token dropout during training"},
      {"align.lr", "5e-4", "alignment learning rate"},
      {"align.epochs", "30", "alignment epochs"},
      {"align.batch", "32", "alignment batch size"},
      {"align.mixup", "true", "same-stimulus MixUp during alignment"},
      {"bridge.lr", "2e-5", "bridge learning rate"},
      {"bridge.epochs", "1", "bridge epochs per stage"},
      {"bridge.batch", "4", "bridge batch size"},
      {"bridge.proj_hidden", "128", "hidden width of the projector f_t"},
      {"bridge.class_only", "false", "feed only the class-token state to the language model"},
      {"lm.layers", "2", "stand-in language model blocks"},
      {"lm.width", "128", "stand-in language model width"},
      {"lm.heads", "4", "stand-in language model heads"},
      {"lm.context", "256", "stand-in language model context length"},
      {"lm.adapter", "", "external language model id; empty selects the stand-in"},
      {"embed.seed", "0", "seed of the stand-in embedders"},
      {"embed.dim", "64", "image-embedding length used for identification"},
      {"embed.image_adapter", "", "image-embedding adapter executable"},
      {"embed.latent_adapter", "", "image-latent adapter executable"},
      {"embed.text_adapter", "", "text-embedding adapter executable"},
      {"recon.beta", "0.93", "noise share of the decoder's initial latent"},
      {"recon.max_tokens", "96", "prompt generation budget"},
      {"decoder.seed", "0", "seed of the stand-in decoder"},
      {"decoder.width", "64", "decoded image width"},
      {"decoder.height", "64", "decoded image height"},
      {"decoder.latent_channels", "4", "channels of the image latent"},
      {"decoder.lipschitz", "0.5", "stand-in decoder bound on the clip_cond map"},
      {"decoder.residual_gain", "0.15", "stand-in decoder latent contribution"},
      {"decoder.adapter", "", "external decoder executable"},
      {"localize.tau", "90", "nullification percentile"},
      {"eval.resolution", "425", "square resolution images are resized to before scoring"},
      {"eval.metrics", "pixcorr,ssim,twoway", "metrics computed by evaluate"},
  };
  return keys;
}

/// Flat key = value configuration. `#` starts a comment.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.key] = k.default_value;
  }

  static RunConfig parse(std::string_view text, const std::string& origin = "config") {
    RunConfig c;
    std::istringstream in{std::string(text)};
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const auto trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      require(eq != std::string::npos, ErrorKind::parse, origin + ":" + std::to_string(n) + ": expected key = value");
      c.set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) { return parse(io::read_file(path), path.string()); }

  void set(const std::string& key, const std::string& value) {
    require(values_.count(key) != 0, ErrorKind::usage, "unknown config key: " + key);
    values_[key] = value;
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    require(it != values_.end(), ErrorKind::usage, "unknown config key: " + key);
    return it->second;
  }

  double real(const std::string& key) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(str(key), &used);
      if (used == str(key).size()) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::parse, "config key " + key + " is not a number: '" + str(key) + "'");
  }

  int integer(const std::string& key) const {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(str(key), &used);
      if (used == str(key).size()) return static_cast<int>(v);
    } catch (const std::exception&) {
    }
    fail(ErrorKind::parse, "config key " + key + " is not an integer: '" + str(key) + "'");
  }

  std::uint64_t u64(const std::string& key) const {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(str(key), &used);
      if (used == str(key).size()) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::parse, "config key " + key + " is not an unsigned integer: '" + str(key) + "'");
  }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorKind::parse, "config key " + key + " is not a boolean: '" + v + "'");
  }

  Dims3 dims(const std::string& key) const { return parse_dims(str(key), key); }

  std::vector<std::string> list(const std::string& key) const { return split_list(str(key)); }

  /// Effective configuration in key order, one `key = value` per line.
  std::string echo() const {
    std::string out;
    for (const auto& k : config_keys()) out += k.key + " = " + values_.at(k.key) + "\n";
    return out;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& k : config_keys()) j[k.key] = values_.at(k.key);
    return j;
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s + ",") {
      if (c == ',') {
        if (!trim(cur).empty()) out.push_back(trim(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    return out;
  }

  static Dims3 parse_dims(const std::string& s, const std::string& what = "dims") {
    const auto parts = split_list(s);
    require(parts.size() == 3, ErrorKind::parse, what + ": expected X,Y,Z, got '" + s + "'");
    int v[3];
    for (int i = 0; i < 3; ++i) {
      try {
        v[i] = std::stoi(parts[static_cast<std::size_t>(i)]);
      } catch (const std::exception&) {
        fail(ErrorKind::parse, what + ": '" + parts[static_cast<std::size_t>(i)] + "' is not an integer");
      }
    }
    const Dims3 d{v[0], v[1], v[2]};
    require(d.positive(), ErrorKind::invalid_argument, what + " must be positive");
    return d;
  }

 private:
  static std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace voxelbridge
