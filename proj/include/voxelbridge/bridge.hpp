#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxelbridge/autograd.hpp"
#include "voxelbridge/checkpoint.hpp"
#include "voxelbridge/conversation.hpp"
#include "voxelbridge/dataset.hpp"
#include "voxelbridge/language_model.hpp"
#include "voxelbridge/layers.hpp"
#include "voxelbridge/optim.hpp"
#include "voxelbridge/rng.hpp"
#include "voxelbridge/templates.hpp"
#include "voxelbridge/tokenizer.hpp"

namespace voxelbridge {

inline constexpr std::string_view kHumanTag = "<human>:";
inline constexpr std::string_view kBotTag = "<bot>:";

/// Token layout of a conversation. `ids[p] == -1` marks fMRI slots; the loss
/// mask is set on answer tokens and on the end-of-turn after each answer.
struct SequencePlan {
  std::vector<int> ids;
  std::vector<std::uint8_t> loss_mask;
  std::size_t fmri_at = 0;
  std::size_t fmri_len = 0;

  std::size_t size() const { return ids.size(); }
  std::size_t masked() const { return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), 1)); }
};

inline SequencePlan plan_sequence(const Tokenizer& tok, const ConversationRecord& rec, std::size_t n_fmri) {
  rec.validate();
  SequencePlan plan;
  auto append = [&](std::string_view text, bool mask) {
    for (int id : tok.encode(text)) {
      plan.ids.push_back(id);
      plan.loss_mask.push_back(mask ? 1 : 0);
    }
  };
  for (std::size_t t = 0; t < rec.turns.size(); t += 2) {
    append(kHumanTag, false);
    const auto& q = rec.turns[t].text;
    if (t == 0) {
      const auto at = rec.placeholder();
      append(std::string_view(q).substr(0, at), false);
      plan.fmri_at = plan.ids.size();
      plan.fmri_len = n_fmri;
      plan.ids.insert(plan.ids.end(), n_fmri, -1);
      plan.loss_mask.insert(plan.loss_mask.end(), n_fmri, 0);
      append(std::string_view(q).substr(at + kImagePlaceholder.size()), false);
    } else {
      append(q, false);
    }
    append(kBotTag, false);
    append(rec.turns[t + 1].text, true);
    plan.ids.push_back(tok.eot());
    plan.loss_mask.push_back(1);
  }
  return plan;
}

/// Prompt for generation: one human turn then the bot tag.
inline SequencePlan plan_prompt(const Tokenizer& tok, std::string_view instruction, std::size_t n_fmri) {
  auto rec = make_single_turn("prompt", TaskKind::brief, instruction, "");
  auto plan = plan_sequence(tok, rec, n_fmri);
  plan.ids.pop_back();  // trailing end-of-turn of the empty answer
  plan.loss_mask.assign(plan.ids.size(), 0);
  return plan;
}

struct BridgeConfig {
  int enc_hidden = 128;
  int proj_hidden = 128;
  bool class_only = false;
  LmConfig lm;
  std::string lm_adapter;  // non-empty selects an external language model

  void validate() const {
    require(enc_hidden > 0 && proj_hidden > 0, ErrorKind::invalid_argument, "bridge dims must be positive");
    lm.validate();
  }
};

inline nlohmann::ordered_json to_json(const BridgeConfig& c) {
  return {{"enc_hidden", c.enc_hidden},
          {"proj_hidden", c.proj_hidden},
          {"class_only", c.class_only},
          {"lm", to_json(c.lm)},
          {"lm_adapter", c.lm_adapter}};
}

inline BridgeConfig bridge_config_from_json(const nlohmann::json& j) {
  BridgeConfig c;
  c.enc_hidden = j.at("enc_hidden").get<int>();
  c.proj_hidden = j.at("proj_hidden").get<int>();
  c.class_only = j.at("class_only").get<bool>();
  c.lm = lm_config_from_json(j.at("lm"));
  c.lm_adapter = j.value("lm_adapter", "");
  c.validate();
  return c;
}

/// Encoder penultimate states for one record, computed once (the encoder is
/// frozen during bridge training).
struct BridgeSample {
  ad::Matrix<float> penultimate;  // (N+1) x enc_hidden
  ConversationRecord record;
};

struct BridgeEval {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

/// f_t projector plus the language model it feeds.
template <class T>
class Bridge {
 public:
  Bridge(const BridgeConfig& config, Tokenizer tok, std::uint64_t seed)
      : config_(config), tok_(std::move(tok)), lm_(config.lm, derive_seed(seed, "bridge/lm")) {
    config_.validate();
    require(config_.lm.vocab == tok_.vocab_size(), ErrorKind::invalid_argument,
            "lm vocab " + std::to_string(config_.lm.vocab) + " != tokenizer vocab " + std::to_string(tok_.vocab_size()));
    Rng rng(derive_seed(seed, "bridge/projector"));
    ft_ = nn::add_mlp(proj_, "f_t", config_.enc_hidden, config_.proj_hidden, config_.lm.width, rng);
  }

  const BridgeConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tok_; }
  TinyLM<T>& lm() { return lm_; }
  const TinyLM<T>& lm() const { return lm_; }
  ad::ParamStore<T>& projector() { return proj_; }
  const ad::ParamStore<T>& projector() const { return proj_; }
  int stage() const { return stage_; }
  void set_stage(int s) { stage_ = s; }

  void check_lm_available() const {
    require(config_.lm_adapter.empty(), ErrorKind::capability,
            "external language model '" + config_.lm_adapter + "' has no in-process adapter");
  }

  std::size_t fmri_tokens(std::size_t n_rows) const { return config_.class_only ? 1 : n_rows; }

  /// t = f_t(h^{N_b-1}); all rows, or the class row alone when class_only.
  ad::Var project(ad::Graph<T>& g, const ad::Matrix<float>& penultimate) {
    require(penultimate.cols() == config_.enc_hidden, ErrorKind::shape,
            "penultimate width " + std::to_string(penultimate.cols()) + " != bridge enc_hidden " +
                std::to_string(config_.enc_hidden));
    ad::Matrix<T> h = config_.class_only ? ad::Matrix<T>(penultimate.topRows(1).template cast<T>())
                                         : ad::Matrix<T>(penultimate.template cast<T>());
    return nn::apply(g, proj_, ft_, g.input(std::move(h)));
  }

  /// Embedded sequence with the fMRI block spliced into the `[image]` slot.
  ad::Var assemble(ad::Graph<T>& g, const SequencePlan& plan, ad::Var fmri, const std::vector<int>& extra = {}) {
    check_lm_available();
    require(static_cast<std::size_t>(g.value(fmri).rows()) == plan.fmri_len, ErrorKind::shape,
            "fMRI block rows do not match the sequence plan");
    std::vector<ad::Var> parts;
    std::vector<int> head(plan.ids.begin(), plan.ids.begin() + static_cast<std::ptrdiff_t>(plan.fmri_at));
    std::vector<int> tail(plan.ids.begin() + static_cast<std::ptrdiff_t>(plan.fmri_at + plan.fmri_len), plan.ids.end());
    tail.insert(tail.end(), extra.begin(), extra.end());
    if (!head.empty()) parts.push_back(lm_.embed(g, head));
    parts.push_back(fmri);
    if (!tail.empty()) parts.push_back(lm_.embed(g, tail));
    return ad::concat_rows(g, std::span<const ad::Var>(parts));
  }

  /// Next-token picks (row predicting position p, token at p) on masked positions.
  static std::vector<std::pair<int, int>> picks(const SequencePlan& plan) {
    std::vector<std::pair<int, int>> out;
    for (std::size_t p = 1; p < plan.size(); ++p)
      if (plan.loss_mask[p]) out.emplace_back(static_cast<int>(p - 1), plan.ids[p]);
    return out;
  }

  struct LossGraph {
    ad::Var loss;
    ad::Var logits;
    ad::Var embeddings;
    SequencePlan plan;
  };

  LossGraph loss_graph(ad::Graph<T>& g, const BridgeSample& s) {
    const auto fmri = project(g, s.penultimate);
    LossGraph out;
    out.plan = plan_sequence(tok_, s.record, static_cast<std::size_t>(g.value(fmri).rows()));
    const auto pk = picks(out.plan);
    require(!pk.empty(), ErrorKind::invalid_argument, "conversation has no answer positions");
    out.embeddings = assemble(g, out.plan, fmri);
    out.logits = lm_.logits(g, out.embeddings);
    out.loss = ad::cross_entropy(g, out.logits, pk);
    return out;
  }

  BridgeEval evaluate(const BridgeSample& s) {
    ad::Graph<T> g;
    const auto lg = loss_graph(g, s);
    BridgeEval e;
    e.loss = static_cast<double>(g.value(lg.loss)(0, 0));
    const auto& logits = g.value(lg.logits);
    for (const auto& [row, target] : picks(lg.plan)) {
      Eigen::Index arg = 0;
      logits.row(row).maxCoeff(&arg);
      e.correct += arg == target ? 1 : 0;
      ++e.total;
    }
    return e;
  }

  /// Greedy (or seeded sampling) decoding after `<bot>:`, stopping at
  /// end-of-turn or after max_tokens.
  std::string generate(const ad::Matrix<float>& penultimate, std::string_view instruction, int max_tokens,
                       bool greedy = true, std::uint64_t seed = 0, double temperature = 1.0) {
    check_lm_available();
    if (max_tokens <= 0) return "";
    ad::Graph<T> pg;
    const ad::Matrix<T> fmri_value = pg.value(project(pg, penultimate));
    const auto plan = plan_prompt(tok_, instruction, static_cast<std::size_t>(fmri_value.rows()));
    Rng rng(derive_seed(seed, "bridge/sample"));
    std::vector<int> out;
    for (int step = 0; step < max_tokens; ++step) {
      require(plan.size() + out.size() < static_cast<std::size_t>(lm_.config().context), ErrorKind::invalid_argument,
              "generation exceeds the language model context of " + std::to_string(lm_.config().context));
      ad::Graph<T> g;
      const auto x = assemble(g, plan, g.input(fmri_value), out);
      const auto logits = lm_.logits(g, x);
      const auto last = g.value(logits).row(g.value(logits).rows() - 1);
      int next = 0;
      if (greedy) {
        Eigen::Index arg = 0;
        last.maxCoeff(&arg);
        next = static_cast<int>(arg);
      } else {
        const double mx = static_cast<double>(last.maxCoeff());
        std::vector<double> p(static_cast<std::size_t>(last.size()));
        double z = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp((last(static_cast<Eigen::Index>(i)) - mx) / temperature);
        double u = rng.uniform() * z;
        next = static_cast<int>(p.size()) - 1;
        for (std::size_t i = 0; i < p.size(); ++i)
          if ((u -= p[i]) < 0.0) {
            next = static_cast<int>(i);
            break;
          }
      }
      if (next == tok_.eot()) break;
      out.push_back(next);
    }
    return tok_.decode(out);
  }

  template <class U>
  Bridge<U> cast() const {
    Bridge<U> b(config_, tok_, 0);
    b.projector() = proj_.template cast<U>();
    b.lm().params() = lm_.params().template cast<U>();
    b.set_stage(stage_);
    return b;
  }

  void save(const std::filesystem::path& dir) const
    requires std::is_same_v<T, float>
  {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json j = to_json(config_);
    j["format"] = "voxelbridge-bridge-1";
    j["stage"] = stage_;
    j["tokenizer"] = tok_.to_json();
    io::write_file(dir / "bridge.json", j.dump(2) + "\n");
    save_tensors(proj_, dir / "projector", to_json(config_));
    lm_.save(dir / "lm");
  }

  static Bridge load(const std::filesystem::path& dir)
    requires std::is_same_v<T, float>
  {
    const auto j = read_json(dir / "bridge.json");
    Bridge b(bridge_config_from_json(j), Tokenizer::from_json(j.at("tokenizer")), 0);
    b.stage_ = j.value("stage", 0);
    load_tensors(b.proj_, dir / "projector");
    load_tensors(b.lm_.params(), dir / "lm");
    return b;
  }

 private:
  BridgeConfig config_;
  Tokenizer tok_;
  TinyLM<T> lm_;
  ad::ParamStore<T> proj_;
  nn::MlpSlots ft_;
  int stage_ = 0;
};

template <class T>
double bridge_loss(Bridge<T>& b, const BridgeSample& s) {
  ad::Graph<T> g;
  return static_cast<double>(g.value(b.loss_graph(g, s).loss)(0, 0));
}

struct BridgeSchedule {
  double lr = 2e-5;
  int epochs = 1;
  int batch = 4;
  std::uint64_t seed = 7;
};

struct BridgeReport {
  int stage = 1;
  std::vector<double> epoch_loss;
  double final_accuracy = 0.0;
};

/// Stage 1 trains f_t with the language model frozen; stage 2 trains both.
inline BridgeReport train_bridge(Bridge<float>& b, const std::vector<BridgeSample>& samples, int stage,
                                 const BridgeSchedule& schedule, const std::function<void(int, double)>& progress = {}) {
  require(stage == 1 || stage == 2, ErrorKind::invalid_argument, "bridge stage must be 1 or 2");
  if (stage == 2)
    require(b.config().lm_adapter.empty(), ErrorKind::capability,
            "stage 2 needs a trainable language model; '" + b.config().lm_adapter + "' is external");
  b.check_lm_available();
  require(!samples.empty(), ErrorKind::invalid_argument, "no conversations to train on");
  require(schedule.batch > 0 && schedule.epochs >= 0, ErrorKind::invalid_argument, "bad bridge schedule");
  auto& proj = b.projector();
  auto& lmp = b.lm().params();
  proj.set_trainable(true);
  lmp.set_trainable(stage == 2);
  Adam<float> opt_proj(schedule.lr);
  Adam<float> opt_lm(schedule.lr);
  Rng order_rng(derive_seed(schedule.seed, stage == 1 ? "bridge/order/1" : "bridge/order/2"));
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  BridgeReport report;
  report.stage = stage;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(schedule.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(schedule.batch));
      const float seed = 1.0f / static_cast<float>(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        ad::Graph<float> g;
        const auto lg = b.loss_graph(g, samples[order[i]]);
        const float l = g.value(lg.loss)(0, 0);
        require(std::isfinite(l), ErrorKind::non_finite, "non-finite bridge loss at epoch " + std::to_string(epoch + 1));
        sum += l;
        g.backward(lg.loss, seed);
      }
      opt_proj.step(proj);
      if (stage == 2) opt_lm.step(lmp);
      proj.zero_grad();
      lmp.zero_grad();
    }
    report.epoch_loss.push_back(sum / static_cast<double>(samples.size()));
    if (progress) progress(epoch + 1, report.epoch_loss.back());
  }
  lmp.set_trainable(true);
  b.set_stage(stage);
  std::size_t correct = 0, total = 0;
  for (const auto& s : samples) {
    const auto e = b.evaluate(s);
    correct += e.correct;
    total += e.total;
  }
  report.final_accuracy = total ? static_cast<double>(correct) / total : 0.0;
  return report;
}

/// One record per (stimulus, task kind) with a seeded template draw. Answers:
/// brief = first caption, detailed and recon_prompt = last caption,
/// concept_loc = first object word. Stimuli without captions are skipped.
inline std::vector<ConversationRecord> build_instruction_dataset(const std::vector<StimulusTargets>& targets,
                                                                 const TemplateSet& templates, std::uint64_t seed,
                                                                 std::size_t* skipped = nullptr) {
  require(!templates.by_kind.empty(), ErrorKind::invalid_argument, "empty template set");
  for (const auto& [kind, list] : templates.by_kind)
    require(!list.empty(), ErrorKind::invalid_argument, "empty template list for " + std::string(to_string(kind)));
  std::vector<ConversationRecord> out;
  std::size_t skip = 0;
  for (const auto& t : targets) {
    if (t.captions.empty()) {
      ++skip;
      continue;
    }
    for (const auto& [kind, list] : templates.by_kind) {
      Rng rng(derive_seed(seed, "templates/" + t.stimulus_id + "/" + std::string(to_string(kind))));
      const auto& tmpl = list[rng.below(list.size())];
      switch (kind) {
        case TaskKind::brief:
          out.push_back(make_single_turn(t.stimulus_id, kind, tmpl, t.captions.front()));
          break;
        case TaskKind::detailed:
        case TaskKind::recon_prompt:
          out.push_back(make_single_turn(t.stimulus_id, kind, tmpl, t.captions.back()));
          break;
        case TaskKind::concept_loc:
          if (!t.objects.empty())
            out.push_back(make_single_turn(t.stimulus_id, kind, fill_object(tmpl, t.objects.front()), t.objects.front()));
          break;
        case TaskKind::dialogue:
        case TaskKind::reasoning:
          break;  // authored conversations only
      }
    }
  }
  if (skipped) *skipped = skip;
  return out;
}

}  // namespace voxelbridge
