#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "voxelbridge/autograd.hpp"
#include "voxelbridge/checkpoint.hpp"
#include "voxelbridge/dataset.hpp"
#include "voxelbridge/layers.hpp"
#include "voxelbridge/optim.hpp"
#include "voxelbridge/preprocess.hpp"
#include "voxelbridge/rng.hpp"

namespace voxelbridge {

struct EncoderConfig {
  int n_layers = 16;
  int hidden = 768;
  int n_heads = 12;
  double mlp_ratio = 4.0;
  int patch_dim = 2744;
  int pos_table_size = 288;
  int d_c = 768;
  int d_v = 16384;
  int head_hidden = 1024;
  double alpha = 1.0 / 64.0;
  double dropout = 0.0;

  int mlp_width() const { return static_cast<int>(std::lround(hidden * mlp_ratio)); }

  void validate() const {
    require(n_layers >= 0, ErrorKind::invalid_argument, "n_layers must be >= 0");
    require(hidden > 0 && n_heads > 0 && hidden % n_heads == 0, ErrorKind::invalid_argument,
            "hidden must be divisible by n_heads");
    require(mlp_ratio > 0 && patch_dim > 0 && pos_table_size > 0 && d_c > 0 && d_v > 0 && head_hidden > 0,
            ErrorKind::invalid_argument, "encoder dims must be positive");
    require(alpha >= 0.0, ErrorKind::invalid_argument, "alpha must be nonnegative");
    require(dropout >= 0.0 && dropout < 1.0, ErrorKind::invalid_argument, "dropout must be in [0, 1)");
  }
};

inline nlohmann::ordered_json to_json(const EncoderConfig& c) {
  return {{"n_layers", c.n_layers},   {"hidden", c.hidden},   {"n_heads", c.n_heads},
          {"mlp_ratio", c.mlp_ratio}, {"patch_dim", c.patch_dim}, {"pos_table_size", c.pos_table_size},
          {"d_c", c.d_c},             {"d_v", c.d_v},         {"head_hidden", c.head_hidden},
          {"alpha", c.alpha},         {"dropout", c.dropout}, {"class_state", "final_norm"}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  try {
    EncoderConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
    c.patch_dim = j.at("patch_dim").get<int>();
    c.pos_table_size = j.at("pos_table_size").get<int>();
    c.d_c = j.at("d_c").get<int>();
    c.d_v = j.at("d_v").get<int>();
    c.head_hidden = j.at("head_hidden").get<int>();
    c.alpha = j.at("alpha").get<double>();
    c.dropout = j.value("dropout", 0.0);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("encoder config: ") + e.what());
  }
}

/// Activations of one forward pass. hidden_states[l] is h^l, with h^0 the
/// token embeddings, so the list has n_layers + 1 entries.
template <class T>
struct ForwardTrace {
  std::vector<ad::Matrix<T>> hidden_states;
  ad::Matrix<T> class_final;  // final_norm(h^L)_0
  ad::Matrix<T> penultimate;  // h^{L-1} (h^0 when L == 0)
  ad::Matrix<T> pred_c;
  ad::Matrix<T> pred_v;
};

struct LossBreakdown {
  double total = 0.0;
  double clip_term = 0.0;
  double latent_term = 0.0;
};

/// Patch-token transformer with a class token and two alignment heads.
template <class T>
class Encoder {
 public:
  struct Outputs {
    ad::Var input;
    std::vector<ad::Var> hidden;  // h^0 .. h^L
    std::vector<ad::Var> normed;  // ln1 of block l+1 applied to h^l, l < L
    ad::Var class_final;
    ad::Var pred_c;
    ad::Var pred_v;
  };

  Encoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(seed, "encoder/init"));
    const int H = config_.hidden;
    patch_proj_ = nn::add_linear(params_, "patch_proj", config_.patch_dim, H, rng);
    class_token_ = params_.add("class_token", nn::normal_matrix<T>(1, H, 0.02, rng)).slot;
    pos_table_ = params_.add("pos_table", nn::normal_matrix<T>(config_.pos_table_size, H, 0.02, rng)).slot;
    for (int l = 0; l < config_.n_layers; ++l)
      blocks_.push_back(
          nn::add_block(params_, "blocks." + std::to_string(l), H, config_.mlp_width(), config_.n_layers, rng));
    final_norm_ = nn::add_norm(params_, "final_norm", H);
    head_c_ = nn::add_mlp(params_, "head_c", H, config_.head_hidden, config_.d_c, rng);
    head_v_ = nn::add_mlp(params_, "head_v", H, config_.head_hidden, config_.d_v, rng);
  }

  const EncoderConfig& config() const { return config_; }
  ad::ParamStore<T>& params() { return params_; }
  const ad::ParamStore<T>& params() const { return params_; }

  int default_gradcam_layer() const { return std::max(config_.n_layers - 1, 0); }

  void check_input(const PatchedSignal& b) const {
    require(b.cols() == static_cast<std::size_t>(config_.patch_dim), ErrorKind::shape,
            "patch length " + std::to_string(b.cols()) + " != encoder patch_dim " + std::to_string(config_.patch_dim));
    require(b.rows() > 0, ErrorKind::shape, "patched signal has no rows");
    require(b.values.size() == b.rows() * b.cols(), ErrorKind::shape, "patched signal values do not match N x C");
    for (auto idx : b.index_map.retained)
      require(idx < static_cast<std::uint32_t>(config_.pos_table_size), ErrorKind::shape,
              "retained index " + std::to_string(idx) + " outside positional table of " +
                  std::to_string(config_.pos_table_size));
  }

  /// Records the forward pass on `g`. With `input_grad`, the patch matrix is a
  /// differentiable input so intermediate activations carry gradients even
  /// when every parameter is frozen.
  Outputs build(ad::Graph<T>& g, const PatchedSignal& b, bool input_grad = false,
                const std::function<double()>* dropout_uniform = nullptr) {
    check_input(b);
    const auto N = static_cast<Eigen::Index>(b.rows());
    ad::Matrix<T> x(N, config_.patch_dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<T>(b.values[static_cast<std::size_t>(i)]);
    Outputs out;
    out.input = g.input(std::move(x), input_grad);
    std::vector<int> cells(b.index_map.retained.begin(), b.index_map.retained.end());
    const auto patches = ad::add(g, nn::apply(g, params_, patch_proj_, out.input),
                                 ad::gather_rows(g, g.param(params_[pos_table_]), std::move(cells)));
    ad::Var h = ad::concat_rows(g, {g.param(params_[class_token_]), patches});
    out.hidden.push_back(h);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      h = apply_block(g, blocks_[l], h, dropout_uniform, out.normed);
      if (!g.value(h).allFinite())
        fail(ErrorKind::non_finite, "non-finite activation after encoder block " + std::to_string(l + 1));
      out.hidden.push_back(h);
    }
    out.class_final = nn::apply(g, params_, final_norm_, ad::slice_rows(g, h, 0, 1));
    out.pred_c = nn::apply(g, params_, head_c_, out.class_final);
    out.pred_v = nn::apply(g, params_, head_v_, out.class_final);
    return out;
  }

  ForwardTrace<T> forward(const PatchedSignal& b, bool want_trace = false) const {
    ad::Graph<T> g;
    auto& self = const_cast<Encoder&>(*this);  // inference reads parameter values only
    const auto out = self.build(g, b);
    ForwardTrace<T> t;
    t.class_final = g.value(out.class_final);
    t.pred_c = g.value(out.pred_c);
    t.pred_v = g.value(out.pred_v);
    const std::size_t L = out.hidden.size() - 1;
    t.penultimate = g.value(out.hidden[L == 0 ? 0 : L - 1]);
    if (want_trace)
      for (auto v : out.hidden) t.hidden_states.push_back(g.value(v));
    return t;
  }

  template <class U>
  Encoder<U> cast() const {
    Encoder<U> out(config_, 0);
    out.params() = params_.template cast<U>();
    return out;
  }

  void save(const std::filesystem::path& dir, const nlohmann::ordered_json& metadata = nlohmann::ordered_json::object()) const
    requires std::is_same_v<T, float>
  {
    save_tensors(params_, dir, to_json(config_), metadata);
  }

  static Encoder load(const std::filesystem::path& dir)
    requires std::is_same_v<T, float>
  {
    Encoder e(encoder_config_from_json(read_json(dir / "config.json")), 0);
    load_tensors(e.params_, dir);
    return e;
  }

 private:
  ad::Var apply_block(ad::Graph<T>& g, const nn::BlockSlots& b, ad::Var x, const std::function<double()>* drop,
                      std::vector<ad::Var>& normed) {
    const bool dropping = drop != nullptr && config_.dropout > 0.0;
    normed.push_back(nn::apply(g, params_, b.ln1, x));
    auto attn = nn::apply(g, params_, b.proj, ad::attention(g, nn::apply(g, params_, b.qkv, normed.back()),
                                                              config_.n_heads, false));
    auto h = ad::add(g, x, dropping ? ad::dropout(g, attn, config_.dropout, *drop) : attn);
    auto m = nn::apply(g, params_, b.mlp, nn::apply(g, params_, b.ln2, h));
    return ad::add(g, h, dropping ? ad::dropout(g, m, config_.dropout, *drop) : m);
  }

  EncoderConfig config_;
  ad::ParamStore<T> params_;
  nn::LinearSlots patch_proj_;
  std::size_t class_token_ = 0;
  std::size_t pos_table_ = 0;
  std::vector<nn::BlockSlots> blocks_;
  nn::NormSlots final_norm_;
  nn::MlpSlots head_c_;
  nn::MlpSlots head_v_;
};

template <class T>
ad::Matrix<T> as_row(const std::vector<float>& v) {
  ad::Matrix<T> m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = static_cast<T>(v[i]);
  return m;
}

/// MSE(pred_c, z_c) + alpha * MSE(pred_v, z_v), recorded on the graph.
template <class T>
ad::Var alignment_loss(ad::Graph<T>& g, const typename Encoder<T>::Outputs& out, const StimulusTargets& targets,
                       double alpha) {
  const auto clip = ad::mse(g, out.pred_c, as_row<T>(targets.z_c));
  const auto latent = ad::mse(g, out.pred_v, as_row<T>(targets.z_v));
  return ad::add(g, clip, ad::scale(g, latent, static_cast<T>(alpha)));
}

template <class T>
LossBreakdown alignment_loss(const ForwardTrace<T>& trace, const StimulusTargets& targets, double alpha) {
  require(trace.pred_c.size() == static_cast<Eigen::Index>(targets.z_c.size()), ErrorKind::shape,
          "pred_c length does not match z_c");
  require(trace.pred_v.size() == static_cast<Eigen::Index>(targets.z_v.size()), ErrorKind::shape,
          "pred_v length does not match z_v");
  LossBreakdown l;
  l.clip_term = static_cast<double>((trace.pred_c - as_row<T>(targets.z_c)).squaredNorm()) / targets.z_c.size();
  l.latent_term = static_cast<double>((trace.pred_v - as_row<T>(targets.z_v)).squaredNorm()) / targets.z_v.size();
  l.total = l.clip_term + alpha * l.latent_term;
  return l;
}

/// Batch loss: mean of per-sample alignment losses.
template <class T>
LossBreakdown alignment_loss(const std::vector<ForwardTrace<T>>& traces, const std::vector<const StimulusTargets*>& targets,
                             double alpha) {
  require(traces.size() == targets.size() && !traces.empty(), ErrorKind::shape, "batch size mismatch");
  LossBreakdown sum;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto l = alignment_loss(traces[i], *targets[i], alpha);
    sum.total += l.total;
    sum.clip_term += l.clip_term;
    sum.latent_term += l.latent_term;
  }
  const double n = static_cast<double>(traces.size());
  return {sum.total / n, sum.clip_term / n, sum.latent_term / n};
}

// ---- training ---------------------------------------------------------------

/// Preprocessed samples with their targets; trials of one stimulus share a
/// target entry, which is what MixUp pairs on.
struct AlignmentDataset {
  std::vector<PatchedSignal> signals;
  std::vector<std::size_t> target_of;  // signal -> targets index
  std::vector<StimulusTargets> targets;

  std::size_t size() const { return signals.size(); }

  std::vector<std::vector<std::size_t>> trials_by_target() const {
    std::vector<std::vector<std::size_t>> groups(targets.size());
    for (std::size_t i = 0; i < signals.size(); ++i) groups[target_of[i]].push_back(i);
    return groups;
  }
};

struct TrainSchedule {
  double lr = 5e-4;
  int epochs = 30;
  int batch = 32;
  std::uint64_t seed = 7;
  bool mixup = true;
  bool eval_each_epoch = false;  // clean full-pass loss before training and after every epoch
  int threads = 1;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // running mean of minibatch losses
  std::vector<double> eval_loss;   // [0] at init, [e] after epoch e (when enabled)
  std::vector<double> val_loss;    // after each epoch (when a validation set is given)
  double final_loss = 0.0;
  std::optional<double> best_val_loss;
};

inline nlohmann::ordered_json to_json(const TrainReport& r) {
  nlohmann::ordered_json j;
  j["final_loss"] = r.final_loss;
  j["best_val_loss"] = r.best_val_loss ? nlohmann::ordered_json(*r.best_val_loss) : nlohmann::ordered_json();
  j["epoch_loss"] = r.epoch_loss;
  if (!r.eval_loss.empty()) j["eval_loss"] = r.eval_loss;
  if (!r.val_loss.empty()) j["val_loss"] = r.val_loss;
  return j;
}

template <class T>
double dataset_loss(const Encoder<T>& enc, const AlignmentDataset& data) {
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    sum += alignment_loss(enc.forward(data.signals[i]), data.targets[data.target_of[i]], enc.config().alpha).total;
  return sum / static_cast<double>(data.size());
}

/// Adam on the alignment loss. Deterministic for a fixed seed and thread count.
inline TrainReport train_alignment(Encoder<float>& enc, const AlignmentDataset& train, const TrainSchedule& schedule,
                                   const AlignmentDataset* validation = nullptr,
                                   const std::function<void(int, double)>& progress = {}) {
  require(train.size() > 0, ErrorKind::invalid_argument, "empty training set");
  require(schedule.batch > 0 && schedule.epochs >= 0, ErrorKind::invalid_argument, "bad schedule");
  auto& params = enc.params();
  Adam<float> opt(schedule.lr);
  Rng order_rng(derive_seed(schedule.seed, "encoder/order"));
  Rng mix_rng(derive_seed(schedule.seed, "encoder/mixup"));
  Rng drop_rng(derive_seed(schedule.seed, "encoder/dropout"));
  const std::function<double()> drop_uniform = [&drop_rng] { return drop_rng.uniform(); };
  const auto groups = train.trials_by_target();
  const int threads = std::max(1, schedule.threads);
  const double alpha = enc.config().alpha;

  TrainReport report;
  if (schedule.eval_each_epoch) report.eval_loss.push_back(dataset_loss(enc, train));

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(schedule.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(schedule.batch));
      const std::size_t B = stop - start;
      // Inputs are fixed sequentially so the random stream does not depend on threading.
      std::vector<PatchedSignal> inputs;
      inputs.reserve(B);
      std::vector<std::size_t> tgt(B);
      for (std::size_t i = start; i < stop; ++i) {
        const auto idx = order[i];
        tgt[i - start] = train.target_of[idx];
        const auto& trials = groups[train.target_of[idx]];
        if (schedule.mixup && trials.size() > 1) {
          std::size_t partner = idx;
          while (partner == idx) partner = trials[mix_rng.below(trials.size())];
          inputs.push_back(mixup(train.signals[idx], train.signals[partner], mix_rng.uniform()));
        } else {
          inputs.push_back(train.signals[idx]);
        }
      }
      const float seed = 1.0f / static_cast<float>(B);
      std::vector<double> losses(B, 0.0);
      auto run = [&](std::size_t lo, std::size_t hi, std::vector<ad::Matrix<float>>* sink) {
        for (std::size_t i = lo; i < hi; ++i) {
          ad::Graph<float> g;
          const auto out = enc.build(g, inputs[i], false, enc.config().dropout > 0 ? &drop_uniform : nullptr);
          const auto loss = alignment_loss<float>(g, out, train.targets[tgt[i]], alpha);
          losses[i] = g.value(loss)(0, 0);
          if (!std::isfinite(losses[i]))
            fail(ErrorKind::non_finite, "non-finite alignment loss at epoch " + std::to_string(epoch + 1) +
                                            ", sample " + inputs[i].provenance);
          g.backward(loss, seed, sink);
        }
      };
      if (threads == 1 || B < 2 || enc.config().dropout > 0) {
        run(0, B, nullptr);
      } else {
        const std::size_t T = std::min<std::size_t>(static_cast<std::size_t>(threads), B);
        std::vector<std::vector<ad::Matrix<float>>> sinks(T, std::vector<ad::Matrix<float>>(params.size()));
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(T);
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t lo = B * t / T, hi = B * (t + 1) / T;
          pool.emplace_back([&, t, lo, hi] {
            try {
              run(lo, hi, &sinks[t]);
            } catch (...) {
              errors[t] = std::current_exception();
            }
          });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t s = 0; s < params.size(); ++s)
            if (sinks[t][s].size() != 0) params[s].grad += sinks[t][s];
      }
      for (double l : losses) epoch_sum += l;
      opt.step(params);
      params.zero_grad();
    }
    report.epoch_loss.push_back(epoch_sum / static_cast<double>(order.size()));
    if (schedule.eval_each_epoch) report.eval_loss.push_back(dataset_loss(enc, train));
    if (validation && validation->size() > 0) {
      const double v = dataset_loss(enc, *validation);
      report.val_loss.push_back(v);
      if (!report.best_val_loss || v < *report.best_val_loss) report.best_val_loss = v;
    }
    if (progress) progress(epoch + 1, report.epoch_loss.back());
  }
  report.final_loss = schedule.eval_each_epoch ? report.eval_loss.back()
                      : report.epoch_loss.empty() ? dataset_loss(enc, train)
                                                  : report.epoch_loss.back();
  return report;
}

// ---- gradient verification --------------------------------------------------

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_parameter;
};

/// Random double-precision problem for the gradient check: `batch` patched
/// signals over a small grid with unit-scale values and random targets.
struct GradientProblem {
  std::vector<PatchedSignal> inputs;
  std::vector<StimulusTargets> targets;
};

inline GradientProblem make_gradient_problem(const EncoderConfig& cfg, std::uint64_t seed, int batch = 2,
                                             int tokens = 4) {
  Rng rng(derive_seed(seed, "gradcheck/data"));
  GradientProblem p;
  const int r = static_cast<int>(std::lround(std::cbrt(static_cast<double>(cfg.patch_dim))));
  for (int b = 0; b < batch; ++b) {
    PatchedSignal s;
    s.spec.r = r;
    s.index_map.grid_dims = {cfg.pos_table_size, 1, 1};
    s.spec.canonical = {cfg.pos_table_size * r, r, r};
    std::vector<std::uint32_t> cells(static_cast<std::size_t>(cfg.pos_table_size));
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<std::uint32_t>(i);
    rng.shuffle(cells.begin(), cells.end());
    cells.resize(static_cast<std::size_t>(std::min(tokens, cfg.pos_table_size)));
    std::sort(cells.begin(), cells.end());
    s.index_map.retained = cells;
    s.values.resize(cells.size() * static_cast<std::size_t>(cfg.patch_dim));
    for (auto& v : s.values) v = static_cast<float>(rng.normal());
    p.inputs.push_back(std::move(s));
    StimulusTargets t;
    t.z_c.resize(static_cast<std::size_t>(cfg.d_c));
    t.z_v.resize(static_cast<std::size_t>(cfg.d_v));
    for (auto& v : t.z_c) v = static_cast<float>(rng.normal());
    for (auto& v : t.z_v) v = static_cast<float>(rng.normal());
    p.targets.push_back(std::move(t));
  }
  return p;
}

/// Batch-mean alignment loss; when `with_grad`, parameter grads are left in
/// the store (zeroed first).
inline double batch_alignment_loss(Encoder<double>& enc, const GradientProblem& p, bool with_grad) {
  if (with_grad) enc.params().zero_grad();
  double total = 0.0;
  const double w = 1.0 / static_cast<double>(p.inputs.size());
  for (std::size_t i = 0; i < p.inputs.size(); ++i) {
    ad::Graph<double> g;
    const auto out = enc.build(g, p.inputs[i]);
    const auto loss = alignment_loss<double>(g, out, p.targets[i], enc.config().alpha);
    total += g.value(loss)(0, 0) * w;
    if (with_grad) g.backward(loss, w);
  }
  return total;
}

/// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps entries whose
/// true gradient is at the finite-difference noise level from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Analytic gradients vs central differences on `samples` parameters drawn
/// tensor-first (so small tensors are covered) in double precision.
inline GradientCheckResult gradient_check(const EncoderConfig& cfg, std::uint64_t seed, int samples = 256,
                                          double step = 1e-5) {
  Encoder<double> enc(cfg, seed);
  // Move off the symmetric init so norm gains and biases carry signal.
  Rng jitter(derive_seed(seed, "gradcheck/jitter"));
  for (auto& p : enc.params())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += 0.05 * jitter.normal();
  const auto problem = make_gradient_problem(cfg, seed);
  batch_alignment_loss(enc, problem, true);
  std::vector<ad::Matrix<double>> analytic;
  for (auto& p : enc.params()) analytic.push_back(p->grad);

  Rng pick(derive_seed(seed, "gradcheck/pick"));
  GradientCheckResult result;
  for (int s = 0; s < samples; ++s) {
    const auto t = pick.below(enc.params().size());
    auto& p = enc.params()[t];
    const auto i = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(p.value.size())));
    const double saved = p.value.data()[i];
    p.value.data()[i] = saved + step;
    const double up = batch_alignment_loss(enc, problem, false);
    p.value.data()[i] = saved - step;
    const double down = batch_alignment_loss(enc, problem, false);
    p.value.data()[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err = relative_error(analytic[t].data()[i], numeric);
    ++result.checked;
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_parameter = p.name + "[" + std::to_string(i) + "]";
    }
  }
  return result;
}

}  // namespace voxelbridge
