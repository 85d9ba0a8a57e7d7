#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxelbridge/autograd.hpp"
#include "voxelbridge/checkpoint.hpp"
#include "voxelbridge/layers.hpp"
#include "voxelbridge/rng.hpp"

namespace voxelbridge {

struct LmConfig {
  int vocab = 260;
  int layers = 2;
  int width = 128;
  int heads = 4;
  int context = 256;
  double mlp_ratio = 4.0;

  void validate() const {
    require(vocab > 0 && layers >= 0 && width > 0 && heads > 0 && context > 0 && mlp_ratio > 0,
            ErrorKind::invalid_argument, "language model dims must be positive");
    require(width % heads == 0, ErrorKind::invalid_argument, "lm width must be divisible by heads");
  }
};

inline nlohmann::ordered_json to_json(const LmConfig& c) {
  return {{"vocab", c.vocab}, {"layers", c.layers},   {"width", c.width},
          {"heads", c.heads}, {"context", c.context}, {"mlp_ratio", c.mlp_ratio}};
}

inline LmConfig lm_config_from_json(const nlohmann::json& j) {
  LmConfig c;
  c.vocab = j.at("vocab").get<int>();
  c.layers = j.at("layers").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.context = j.at("context").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<double>();
  c.validate();
  return c;
}

/// Decoder-only stand-in: token + learned position embeddings, causal
/// pre-norm blocks, final norm, vocabulary head.
template <class T>
class TinyLM {
 public:
  TinyLM(const LmConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(seed, "lm/init"));
    tok_emb_ = params_.add("tok_emb", nn::normal_matrix<T>(config_.vocab, config_.width, 0.02, rng)).slot;
    pos_emb_ = params_.add("pos_emb", nn::normal_matrix<T>(config_.context, config_.width, 0.02, rng)).slot;
    const int mlp = static_cast<int>(std::lround(config_.width * config_.mlp_ratio));
    for (int l = 0; l < config_.layers; ++l)
      blocks_.push_back(nn::add_block(params_, "blocks." + std::to_string(l), config_.width, mlp, config_.layers, rng));
    final_norm_ = nn::add_norm(params_, "final_norm", config_.width);
    head_ = nn::add_linear(params_, "head", config_.width, config_.vocab, rng);
  }

  const LmConfig& config() const { return config_; }
  ad::ParamStore<T>& params() { return params_; }
  const ad::ParamStore<T>& params() const { return params_; }

  ad::Var embed(ad::Graph<T>& g, const std::vector<int>& ids) {
    for (int id : ids) require(id >= 0 && id < config_.vocab, ErrorKind::invalid_argument, "token id out of vocabulary");
    return ad::gather_rows(g, g.param(params_[tok_emb_]), ids);
  }

  /// Next-token logits for every position of an embedded sequence.
  ad::Var logits(ad::Graph<T>& g, ad::Var x) {
    const auto len = g.value(x).rows();
    require(len <= config_.context, ErrorKind::invalid_argument,
            "sequence of " + std::to_string(len) + " tokens exceeds the context of " + std::to_string(config_.context));
    std::vector<int> pos(static_cast<std::size_t>(len));
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
    ad::Var h = ad::add(g, x, ad::gather_rows(g, g.param(params_[pos_emb_]), std::move(pos)));
    for (const auto& b : blocks_) h = nn::apply(g, params_, b, h, config_.heads, true);
    return nn::apply(g, params_, head_, nn::apply(g, params_, final_norm_, h));
  }

  /// Uniform predictor: logits identically zero.
  void make_uniform() {
    params_[head_.weight].value.setZero();
    params_[head_.bias].value.setZero();
  }

  /// Position-insensitive variant: no position table and identity blocks.
  void make_position_insensitive() {
    params_[pos_emb_].value.setZero();
    for (const auto& b : blocks_) {
      params_[b.proj.weight].value.setZero();
      params_[b.proj.bias].value.setZero();
      params_[b.mlp.fc2.weight].value.setZero();
      params_[b.mlp.fc2.bias].value.setZero();
    }
  }

  void save(const std::filesystem::path& dir) const
    requires std::is_same_v<T, float>
  {
    save_tensors(params_, dir, to_json(config_));
  }

  static TinyLM load(const std::filesystem::path& dir)
    requires std::is_same_v<T, float>
  {
    TinyLM lm(lm_config_from_json(read_json(dir / "config.json")), 0);
    load_tensors(lm.params_, dir);
    return lm;
  }

 private:
  LmConfig config_;
  ad::ParamStore<T> params_;
  std::size_t tok_emb_ = 0;
  std::size_t pos_emb_ = 0;
  std::vector<nn::BlockSlots> blocks_;
  nn::NormSlots final_norm_;
  nn::LinearSlots head_;
};

}  // namespace voxelbridge
