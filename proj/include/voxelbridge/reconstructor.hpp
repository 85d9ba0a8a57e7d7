#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SVD>
#include <json.hpp>

#include "voxelbridge/binary_io.hpp"
#include "voxelbridge/bridge.hpp"
#include "voxelbridge/embedders.hpp"
#include "voxelbridge/encoder.hpp"
#include "voxelbridge/image.hpp"
#include "voxelbridge/rng.hpp"
#include "voxelbridge/templates.hpp"

namespace voxelbridge {

/// Decoder inputs: init_latent = (1 - beta) * zv_hat + beta * sigma.
struct ConditioningBundle {
  std::vector<float> init_latent;
  std::vector<float> clip_cond;
  std::string prompt;
  double beta = 0.93;
  std::uint64_t noise_seed = 0;

  void validate() const {
    require(beta >= 0.0 && beta <= 1.0, ErrorKind::invalid_argument, "beta must be in [0, 1]");
    for (float x : init_latent) require(std::isfinite(x), ErrorKind::non_finite, "non-finite init_latent");
    for (float x : clip_cond) require(std::isfinite(x), ErrorKind::non_finite, "non-finite clip_cond");
  }
};

/// Standard normal draws, one per latent component, from `noise_seed` alone.
inline std::vector<float> latent_noise(std::size_t n, std::uint64_t noise_seed) {
  Rng rng(derive_seed(noise_seed, "recon/sigma"));
  std::vector<float> s(n);
  for (auto& x : s) x = static_cast<float>(rng.normal());
  return s;
}

inline ConditioningBundle make_bundle(const std::vector<float>& zv_hat, const std::vector<float>& zc_hat,
                                      std::string prompt, double beta, std::uint64_t noise_seed) {
  require(beta >= 0.0 && beta <= 1.0, ErrorKind::invalid_argument, "beta must be in [0, 1]");
  const auto sigma = latent_noise(zv_hat.size(), noise_seed);
  ConditioningBundle b;
  b.init_latent.resize(zv_hat.size());
  for (std::size_t i = 0; i < zv_hat.size(); ++i)
    b.init_latent[i] = static_cast<float>((1.0 - beta) * zv_hat[i] + beta * sigma[i]);
  b.clip_cond = zc_hat;
  b.prompt = std::move(prompt);
  b.beta = beta;
  b.noise_seed = noise_seed;
  b.validate();
  return b;
}

inline nlohmann::ordered_json to_json(const ConditioningBundle& b) {
  return {{"beta", b.beta},
          {"noise_seed", b.noise_seed},
          {"prompt", b.prompt},
          {"clip_cond", b.clip_cond},
          {"init_latent", b.init_latent}};
}

struct DecoderSpec {
  std::uint64_t seed = 0;
  int width = 64;
  int height = 64;
  int latent_channels = 4;
  double lipschitz = 0.5;  // target bound of the clip_cond map under the RMS pixel norm
  double residual_gain = 0.15;
  std::string adapter;
};

/// Deterministic stand-in for the diffusion decoder. Low frequencies come
/// from a fixed linear map of clip_cond onto a 4x4 cosine basis per channel;
/// the latent is reshaped to C x s x s, mixed to RGB and nearest-upsampled.
class StandinDecoder {
 public:
  static constexpr int kBasisSide = 4;
  static constexpr int kBasis = kBasisSide * kBasisSide;

  StandinDecoder(const DecoderSpec& spec, int d_c) : spec_(spec), d_c_(d_c) {
    require(spec.width > 0 && spec.height > 0 && d_c > 0, ErrorKind::invalid_argument, "decoder dims must be positive");
    Rng rng(derive_seed(spec.seed, "decoder/mix"));
    mix_ = Eigen::MatrixXd(3 * kBasis, d_c);
    for (Eigen::Index i = 0; i < mix_.size(); ++i) mix_.data()[i] = rng.normal();
    // RMS pixel norm of sum_b c_b * basis_b is sqrt(sum_b n_b c_b^2 / 3), n_b the mean square of basis b.
    Eigen::VectorXd w(3 * kBasis);
    for (int ch = 0; ch < 3; ++ch)
      for (int b = 0; b < kBasis; ++b) w(ch * kBasis + b) = std::sqrt(basis_mean_square(b) / 3.0);
    const double op = Eigen::JacobiSVD<Eigen::MatrixXd>(w.asDiagonal() * mix_).singularValues()(0);
    mix_ *= spec.lipschitz / op;
    Rng rgb(derive_seed(spec.seed, "decoder/rgb"));
    to_rgb_ = Eigen::MatrixXd(3, spec.latent_channels);
    for (Eigen::Index i = 0; i < to_rgb_.size(); ++i)
      to_rgb_.data()[i] = rgb.normal() / std::sqrt(static_cast<double>(spec.latent_channels));
    basis_.resize(static_cast<std::size_t>(kBasis) * spec.width * spec.height);
    for (int b = 0; b < kBasis; ++b)
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) basis_[index(b, x, y)] = basis_value(b, x, y);
  }

  /// Upper bound on RMS pixel change per unit L2 change of clip_cond.
  double clip_lipschitz() const {
    Eigen::VectorXd w(3 * kBasis);
    for (int ch = 0; ch < 3; ++ch)
      for (int b = 0; b < kBasis; ++b) w(ch * kBasis + b) = std::sqrt(basis_mean_square(b) / 3.0);
    return Eigen::JacobiSVD<Eigen::MatrixXd>(w.asDiagonal() * mix_).singularValues()(0);
  }

  Image operator()(const ConditioningBundle& bundle) const {
    bundle.validate();
    require(static_cast<int>(bundle.clip_cond.size()) == d_c_, ErrorKind::shape, "clip_cond length mismatch");
    const int C = spec_.latent_channels;
    const auto per = bundle.init_latent.size() / static_cast<std::size_t>(C);
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(per))));
    require(per * C == bundle.init_latent.size() && static_cast<std::size_t>(side) * side == per, ErrorKind::shape,
            "init_latent of " + std::to_string(bundle.init_latent.size()) + " does not reshape to " +
                std::to_string(C) + " x s x s");
    Eigen::VectorXd cond(d_c_);
    for (int i = 0; i < d_c_; ++i) cond(i) = bundle.clip_cond[static_cast<std::size_t>(i)];
    const Eigen::VectorXd coef = mix_ * cond;
    Image img(spec_.width, spec_.height);
    for (int y = 0; y < spec_.height; ++y)
      for (int x = 0; x < spec_.width; ++x) {
        const int ly = y * side / spec_.height, lx = x * side / spec_.width;
        for (int ch = 0; ch < 3; ++ch) {
          double v = 0.5;
          for (int b = 0; b < kBasis; ++b) v += coef(ch * kBasis + b) * basis_[index(b, x, y)];
          double r = 0.0;
          for (int c = 0; c < C; ++c)
            r += to_rgb_(ch, c) * bundle.init_latent[static_cast<std::size_t>(c) * per + static_cast<std::size_t>(ly) * side + lx];
          v += spec_.residual_gain * r;
          img.at(x, y, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    return img;
  }

 private:
  std::size_t index(int b, int x, int y) const {
    return (static_cast<std::size_t>(b) * spec_.height + y) * spec_.width + x;
  }
  double basis_value(int b, int x, int y) const {
    const int u = b % kBasisSide, v = b / kBasisSide;
    return std::cos(std::numbers::pi * u * (x + 0.5) / spec_.width) *
           std::cos(std::numbers::pi * v * (y + 0.5) / spec_.height);
  }
  double basis_mean_square(int b) const {
    double s = 0.0;
    for (int y = 0; y < spec_.height; ++y)
      for (int x = 0; x < spec_.width; ++x) s += basis_value(b, x, y) * basis_value(b, x, y);
    return s / (static_cast<double>(spec_.width) * spec_.height);
  }

  DecoderSpec spec_;
  int d_c_;
  Eigen::MatrixXd mix_;
  Eigen::MatrixXd to_rgb_;
  std::vector<double> basis_;
};

/// External decoders receive the bundle as JSON on stdin and answer with a PPM.
inline Image reconstruct(const DecoderSpec& spec, const ConditioningBundle& bundle) {
  bundle.validate();
  if (!spec.adapter.empty())
    return decode_ppm(run_adapter_raw(spec.adapter, std::to_string(spec.width) + " " + std::to_string(spec.height),
                                      to_json(bundle).dump()));
  return StandinDecoder(spec, static_cast<int>(bundle.clip_cond.size()))(bundle);
}

struct ReconResult {
  Image image;
  std::string prompt;
  ConditioningBundle bundle;
};

inline std::vector<float> row_vector(const ad::Matrix<float>& m) { return {m.data(), m.data() + m.size()}; }

/// encoder -> (optional) prompt generation -> bundle -> decoder. Without a
/// bridge the prompt is empty.
inline ReconResult recon_pipeline(const Encoder<float>& encoder, Bridge<float>* bridge, const DecoderSpec& decoder,
                                  const PatchedSignal& b, double beta, std::uint64_t noise_seed, int max_tokens = 96) {
  const auto trace = encoder.forward(b);
  ReconResult r;
  if (bridge) r.prompt = bridge->generate(trace.penultimate, recon_instructions().front(), max_tokens);
  r.bundle = make_bundle(row_vector(trace.pred_v), row_vector(trace.pred_c), r.prompt, beta, noise_seed);
  r.image = reconstruct(decoder, r.bundle);
  return r;
}

}  // namespace voxelbridge
