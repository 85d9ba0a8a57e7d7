#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxelbridge/bridge.hpp"
#include "voxelbridge/encoder.hpp"
#include "voxelbridge/localizer.hpp"
#include "voxelbridge/metrics.hpp"
#include "voxelbridge/preprocess.hpp"
#include "voxelbridge/reconstructor.hpp"
#include "voxelbridge/synthetic.hpp"

namespace voxelbridge::acceptance {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

enum class Status { pass, fail, skipped };

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::pass: return "pass";
    case Status::fail: return "fail";
    case Status::skipped: return "skipped";
  }
  return "skipped";
}

struct Criterion {
  int id = 0;
  std::string name;
  Status status = Status::skipped;
  json measured = json::object();
  json threshold = json::object();
  std::string note;

  json to_json() const {
    json j{{"id", id}, {"name", name}, {"status", to_string(status)}, {"measured", measured}, {"threshold", threshold}};
    if (!note.empty()) j["note"] = note;
    return j;
  }
};

inline Status verdict(bool ok) { return ok ? Status::pass : Status::fail; }

/// Digest of every tensor's little-endian bytes, in store order.
template <class T>
std::string store_digest(const ad::ParamStore<T>& store) {
  std::string bytes;
  for (const auto& p : store) {
    const ad::Matrix<float> v = p->value.template cast<float>();
    io::append_f32le(bytes, std::span<const float>(v.data(), static_cast<std::size_t>(v.size())));
  }
  return io::content_hash(bytes);
}

// ---- 1: preprocessing ---------------------------------------------------------

/// Direct evaluation of each output voxel as the weighted sum of its eight
/// source corners.
inline BrainVolume trilinear_direct(const BrainVolume& v, Dims3 out) {
  BrainVolume r(out);
  auto axis = [](int o, int in_n, int out_n, int& a, int& b, double& t) {
    double s = (o + 0.5) * in_n / static_cast<double>(out_n) - 0.5;
    if (s < 0.0) s = 0.0;
    if (s > in_n - 1) s = in_n - 1;
    a = static_cast<int>(s);
    b = a + 1 < in_n ? a + 1 : a;
    t = s - a;
  };
  for (int k = 0; k < out.z; ++k)
    for (int j = 0; j < out.y; ++j)
      for (int i = 0; i < out.x; ++i) {
        int x0, x1, y0, y1, z0, z1;
        double tx, ty, tz;
        axis(i, v.dims.x, out.x, x0, x1, tx);
        axis(j, v.dims.y, out.y, y0, y1, ty);
        axis(k, v.dims.z, out.z, z0, z1, tz);
        double acc = 0.0;
        for (int c = 0; c < 8; ++c) {
          const int xi = c & 1 ? x1 : x0, yi = c & 2 ? y1 : y0, zi = c & 4 ? z1 : z0;
          const double w = (c & 1 ? tx : 1 - tx) * (c & 2 ? ty : 1 - ty) * (c & 4 ? tz : 1 - tz);
          acc += w * v.at(xi, yi, zi);
        }
        r.at(i, j, k) = static_cast<float>(acc);
      }
  return r;
}

inline BrainVolume random_volume(Dims3 d, Rng& rng) {
  BrainVolume v(d);
  for (auto& x : v.data) x = static_cast<float>(rng.normal());
  return v;
}

inline Criterion preprocessing(std::uint64_t seed) {
  Criterion c{1, "preprocessing oracle equivalence"};
  Rng rng(derive_seed(seed, "acceptance/preprocess"));
  double worst = 0.0;
  for (int n = 0; n < 20; ++n) {
    const Dims3 in{2 + static_cast<int>(rng.below(15)), 2 + static_cast<int>(rng.below(15)),
                   2 + static_cast<int>(rng.below(15))};
    const Dims3 out{1 + static_cast<int>(rng.below(24)), 1 + static_cast<int>(rng.below(24)),
                    1 + static_cast<int>(rng.below(24))};
    const auto v = random_volume(in, rng);
    const auto a = trilinear_resize(v, out), b = trilinear_direct(v, out);
    for (std::size_t i = 0; i < a.data.size(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(a.data[i] - b.data[i])));
  }

  PatchSpec spec;  // r = 14 on (83, 104, 81)
  const auto grid = spec.grid();
  VoxelMask full(spec.canonical);
  std::fill(full.bits.begin(), full.bits.end(), 1);
  const auto v = random_volume(spec.canonical, rng);
  const auto p = patchify(v, spec, full);
  const bool round_trip = depatchify(p) == v && extract_patches(depatchify(p), spec, p.index_map).values == p.values;

  c.measured = {{"resize_max_abs_diff", worst},
                {"round_trip_exact", round_trip},
                {"grid", {grid.x, grid.y, grid.z}},
                {"cubes", p.rows()},
                {"patch_dim", p.cols()}};
  c.threshold = {{"resize_max_abs_diff", 1e-6}, {"grid", {6, 8, 6}}, {"cubes", 288}, {"patch_dim", 2744}};
  c.status = verdict(worst <= 1e-6 && round_trip && grid == Dims3{6, 8, 6} && p.rows() == 288 && p.cols() == 2744);
  return c;
}

// ---- 2: gradient -----------------------------------------------------------------

inline EncoderConfig gradcheck_config() {
  // {n_layers, hidden, n_heads, mlp_ratio, patch_dim, pos_table_size, d_c, d_v, head_hidden, alpha, dropout}
  return {2, 16, 2, 2.0, 8, 6, 5, 7, 12, 1.0 / 64.0, 0.0};
}

inline Criterion gradient(std::uint64_t seed) {
  Criterion c{2, "alignment-loss gradient"};
  const auto r = gradient_check(gradcheck_config(), derive_seed(seed, "acceptance/gradcheck"), 256);
  c.measured = {{"max_rel_error", r.max_rel_error}, {"checked", r.checked}, {"worst", r.worst_parameter}};
  c.threshold = {{"max_rel_error", 1e-6}, {"checked", 200}};
  c.status = verdict(r.max_rel_error < 1e-6 && r.checked >= 200);
  return c;
}

// ---- 3: synthetic decoding -----------------------------------------------------

struct DecodingSetup {
  SyntheticWorldParams world;  // d_c 64, noise 0.5
  int train_stimuli = 256;
  int test_stimuli = 64;
  int trials = 3;
  int r = 4;
  int n_layers = 4;
  int hidden = 128;
  int epochs = 30;
};

/// Everything the later pipeline stages reuse from the decoding experiment.
struct DecodingRun {
  SyntheticWorld world;
  PatchSpec spec;
  std::vector<StimulusTargets> train_targets, test_targets;
  std::vector<PatchedSignal> train_avg, test_avg, test_single;
  std::unique_ptr<Encoder<float>> encoder;
  TrainReport report;
};

inline std::uint64_t test_stimulus(int s) { return 900000 + static_cast<std::uint64_t>(s); }
inline std::uint64_t train_stimulus(int s) { return 1000 + static_cast<std::uint64_t>(s); }

inline EncoderConfig decoding_config(const DecodingSetup& d, const PatchSpec& spec) {
  EncoderConfig cfg;
  cfg.n_layers = d.n_layers;
  cfg.hidden = d.hidden;
  cfg.n_heads = std::max(1, d.hidden / 64);
  cfg.patch_dim = static_cast<int>(spec.patch_dim());
  cfg.pos_table_size = static_cast<int>(spec.grid().count());
  cfg.d_c = d.world.d_c;
  cfg.d_v = d.world.d_v;
  cfg.head_hidden = 2 * d.hidden;
  return cfg;
}

inline DecodingRun train_decoding(const DecodingSetup& d, std::uint64_t seed, int threads,
                                  const std::function<void(int, double)>& progress = {}) {
  DecodingRun run;
  auto wp = d.world;
  wp.seed = derive_seed(seed, "acceptance/world");
  run.world = generate_synthetic_world(wp);
  run.spec.r = d.r;
  run.spec.canonical = wp.grid;
  AlignmentDataset data;
  auto add = [&](std::uint64_t stim, std::vector<StimulusTargets>& targets, std::vector<PatchedSignal>& avg,
                 std::vector<PatchedSignal>* single, bool train) {
    const auto u = draw_latent(run.world, stim);
    targets.push_back(make_targets(run.world, u, stimulus_name(stim)));
    std::vector<BrainVolume> trials;
    for (int t = 0; t < d.trials; ++t) trials.push_back(render_trial(run.world, u, stim, t));
    if (train) {
      for (const auto& v : trials) {
        data.signals.push_back(preprocess_volume(v, run.world.mask, run.spec));
        data.target_of.push_back(targets.size() - 1);
      }
    }
    avg.push_back(preprocess_volume(average_volumes(trials), run.world.mask, run.spec));
    if (single) single->push_back(preprocess_volume(trials.front(), run.world.mask, run.spec));
  };
  for (int s = 0; s < d.train_stimuli; ++s) add(train_stimulus(s), run.train_targets, run.train_avg, nullptr, true);
  for (int s = 0; s < d.test_stimuli; ++s) add(test_stimulus(s), run.test_targets, run.test_avg, &run.test_single, false);
  data.targets = run.train_targets;

  run.encoder = std::make_unique<Encoder<float>>(decoding_config(d, run.spec), derive_seed(seed, "acceptance/encoder"));
  TrainSchedule sch;
  sch.epochs = d.epochs;
  sch.seed = derive_seed(seed, "acceptance/align");
  sch.threads = threads;
  run.report = train_alignment(*run.encoder, data, sch, nullptr, progress);
  return run;
}

inline Criterion decoding(const DecodingRun& run) {
  Criterion c{3, "synthetic end-to-end decoding"};
  std::vector<std::vector<float>> truth, avg, single;
  for (std::size_t i = 0; i < run.test_targets.size(); ++i) {
    truth.push_back(run.test_targets[i].z_c);
    avg.push_back(row_vector(run.encoder->forward(run.test_avg[i]).pred_c));
    single.push_back(row_vector(run.encoder->forward(run.test_single[i]).pred_c));
  }
  const double a = two_way_identification(truth, avg).percent;
  const double s = two_way_identification(truth, single).percent;
  c.measured = {{"two_way_averaged", a},
                {"two_way_single_trial", s},
                {"single_trial_drop", a - s},
                {"final_train_loss", run.report.final_loss}};
  c.threshold = {{"two_way_averaged", 90.0}, {"single_trial_drop", 10.0}};
  c.status = verdict(a >= 90.0 && a - s < 10.0);
  return c;
}

// ---- 4: MixUp and the decoder bundle -----------------------------------------

inline Criterion identities(std::uint64_t seed) {
  Criterion c{4, "MixUp and bundle identities"};
  Rng rng(derive_seed(seed, "acceptance/identities"));
  PatchSpec spec;
  spec.r = 4;
  spec.canonical = {12, 8, 8};
  VoxelMask full(spec.canonical);
  std::fill(full.bits.begin(), full.bits.end(), 1);
  const auto b1 = patchify(random_volume(spec.canonical, rng), spec, full);
  const auto b2 = patchify(random_volume(spec.canonical, rng), spec, full);
  const bool mix_ends = mixup(b1, b2, 1.0).values == b1.values && mixup(b1, b2, 0.0).values == b2.values;

  const std::size_t n = 4 * 64 * 64;
  std::vector<float> zv(n), zc(16, 0.1f);
  for (auto& x : zv) x = static_cast<float>(rng.normal());
  const auto noise_seed = derive_seed(seed, "acceptance/bundle");
  const auto sigma = latent_noise(n, noise_seed);
  const bool beta0 = make_bundle(zv, zc, "", 0.0, noise_seed).init_latent == zv;
  const bool beta1 = make_bundle(zv, zc, "", 1.0, noise_seed).init_latent == sigma;
  const auto mid = make_bundle(zv, zc, "", 0.93, noise_seed).init_latent;
  auto variance = [](const std::vector<float>& v) {
    double m = 0.0, s = 0.0;
    for (float x : v) m += x;
    m /= static_cast<double>(v.size());
    for (float x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
  };
  const double expected = 0.07 * 0.07 * variance(zv) + 0.93 * 0.93 * variance(sigma);
  const double rel = std::abs(variance(mid) - expected) / expected;
  c.measured = {{"mixup_endpoints_exact", mix_ends},
                {"beta0_equals_zv", beta0},
                {"beta1_equals_sigma", beta1},
                {"beta093_variance", variance(mid)},
                {"beta093_expected", expected},
                {"beta093_rel_error", rel}};
  c.threshold = {{"beta093_rel_error", 0.05}};
  c.status = verdict(mix_ends && beta0 && beta1 && rel <= 0.05);
  return c;
}

// ---- 5: bridge objective ---------------------------------------------------------

struct ObjectiveSetup {
  int conversations = 16;
  double lr = 1e-3;
  int stage1_epochs = 2;
  int epochs = 120;
};

inline std::vector<BridgeSample> bridge_samples(const Encoder<float>& enc, const std::vector<PatchedSignal>& signals,
                                                const std::vector<StimulusTargets>& targets, const TemplateSet& templates,
                                                std::uint64_t seed) {
  std::vector<BridgeSample> out;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < targets.size(); ++i) index[targets[i].stimulus_id] = i;
  std::vector<ad::Matrix<float>> pen(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) pen[i] = enc.forward(signals[i]).penultimate;
  for (auto& rec : build_instruction_dataset(targets, templates, seed)) {
    const auto i = index.at(rec.stimulus_id);
    out.push_back({pen[i], std::move(rec)});
  }
  return out;
}

inline BridgeConfig bridge_config_for(const Encoder<float>& enc, const Tokenizer& tok) {
  BridgeConfig bc;
  bc.enc_hidden = enc.config().hidden;
  bc.proj_hidden = 128;
  bc.lm.vocab = tok.vocab_size();
  return bc;
}

/// Stage 1 then stage 2 on one bridge; the trained bridge is handed back
/// through `trained` for the rest of the pipeline.
inline Criterion objective(const DecodingRun& run, const ObjectiveSetup& o, std::uint64_t seed,
                           std::unique_ptr<Bridge<float>>* trained = nullptr) {
  Criterion c{5, "instruction-tuning objective"};
  const auto tok = Tokenizer::bytes();
  std::vector<StimulusTargets> targets(run.train_targets.begin(), run.train_targets.begin() + o.conversations);
  std::vector<PatchedSignal> signals(run.train_avg.begin(), run.train_avg.begin() + o.conversations);
  const auto samples =
      bridge_samples(*run.encoder, signals, targets, TemplateSet::standard().only({TaskKind::brief}), seed);
  const auto bc = bridge_config_for(*run.encoder, tok);

  Bridge<float> uniform(bc, tok, derive_seed(seed, "acceptance/uniform"));
  uniform.lm().make_uniform();
  const double uniform_loss = bridge_loss(uniform, samples.front());
  const double ln_v = std::log(static_cast<double>(tok.vocab_size()));

  // Logit rows predicting unmasked positions must receive no gradient at all.
  Bridge<float> probe(bc, tok, derive_seed(seed, "acceptance/probe"));
  ad::Graph<float> g;
  const auto lg = probe.loss_graph(g, samples.front());
  g.backward(lg.loss);
  const auto& grad = g.grad(lg.logits);
  std::vector<std::uint8_t> picked(lg.plan.size(), 0);
  for (const auto& [row, target] : Bridge<float>::picks(lg.plan)) picked[static_cast<std::size_t>(row)] = 1;
  std::size_t question_rows = 0, nonzero = 0;
  for (Eigen::Index row = 0; row < grad.rows(); ++row) {
    if (picked[static_cast<std::size_t>(row)]) continue;
    ++question_rows;
    if ((grad.row(row).array() != 0.0f).any()) ++nonzero;
  }

  auto fit = std::make_unique<Bridge<float>>(bc, tok, derive_seed(seed, "acceptance/bridge"));
  const auto lm_before = store_digest(fit->lm().params());
  const auto proj_before = store_digest(fit->projector());
  BridgeSchedule s1;
  s1.lr = o.lr;
  s1.epochs = o.stage1_epochs;
  s1.seed = derive_seed(seed, "acceptance/stage1");
  train_bridge(*fit, samples, 1, s1);
  const bool lm_same = store_digest(fit->lm().params()) == lm_before;
  const bool proj_moved = store_digest(fit->projector()) != proj_before;

  BridgeSchedule s2;
  s2.lr = o.lr;
  s2.epochs = o.epochs;
  s2.seed = derive_seed(seed, "acceptance/stage2");
  const auto rep = train_bridge(*fit, samples, 2, s2);
  if (trained) *trained = std::move(fit);

  c.measured = {{"uniform_loss", uniform_loss},
                {"ln_vocab", ln_v},
                {"question_rows", question_rows},
                {"question_rows_with_gradient", nonzero},
                {"stage1_lm_bytes_identical", lm_same},
                {"stage1_projector_updated", proj_moved},
                {"conversations", samples.size()},
                {"answer_token_accuracy", rep.final_accuracy}};
  c.threshold = {{"uniform_loss_abs_error", 1e-3}, {"answer_token_accuracy", 0.99}};
  c.status = verdict(std::abs(uniform_loss - ln_v) <= 1e-3 && question_rows > 0 && nonzero == 0 && lm_same &&
                     proj_moved && rep.final_accuracy >= 0.99);
  return c;
}

// ---- 6 and 7: localization ---------------------------------------------------------

struct PlantedSetup {
  int seeds = 5;
  int trials_per_seed = 4;
  int stimuli = 256;
  int epochs = 20;
  int r = 4;
  int n_layers = 1;
  int hidden = 64;
  double concept_latent = 3.0;
  double gain = 6.0;
  double tau = 90.0;
};

struct PlantedRun {
  SyntheticWorld world;
  PatchSpec spec;
  std::unique_ptr<Encoder<float>> encoder;
  std::vector<float> target;
};

inline PlantedConcept zebra_concept(int d_c, double gain = 2.0) {
  PlantedConcept pc;
  pc.gain = gain;
  pc.name = "zebra";
  pc.direction = standin_text_embedding(pc.name, d_c);
  pc.region = {{0, 0, 0}, {8, 8, 8}};
  return pc;
}

inline PlantedRun train_planted(const PlantedSetup& p, std::uint64_t seed, int threads) {
  PlantedRun run;
  SyntheticWorldParams wp;
  wp.seed = seed;
  wp.grid = {16, 16, 16};
  wp.mask_fraction = 0.5;
  const auto pc = zebra_concept(wp.d_c, p.gain);
  run.world = generate_synthetic_world(wp, pc);
  run.target = pc.direction;
  run.spec.r = p.r;
  run.spec.canonical = wp.grid;
  AlignmentDataset data;
  for (int s = 0; s < p.stimuli; ++s)
    for (int t = 0; t < 2; ++t) {
      const auto tr = sample_synthetic_trial(run.world, train_stimulus(s), t);
      data.signals.push_back(preprocess_volume(tr.volume, run.world.mask, run.spec));
      data.target_of.push_back(static_cast<std::size_t>(s));
      if (t == 0) data.targets.push_back(tr.targets);
    }
  EncoderConfig cfg;
  cfg.n_layers = p.n_layers;
  cfg.hidden = p.hidden;
  cfg.n_heads = 2;
  cfg.patch_dim = static_cast<int>(run.spec.patch_dim());
  cfg.pos_table_size = static_cast<int>(run.spec.grid().count());
  cfg.d_c = wp.d_c;
  cfg.d_v = wp.d_v;
  cfg.head_hidden = 2 * p.hidden;
  run.encoder = std::make_unique<Encoder<float>>(cfg, seed);
  TrainSchedule sch;
  sch.epochs = p.epochs;
  sch.seed = seed;
  sch.threads = threads;
  train_alignment(*run.encoder, data, sch);
  return run;
}

/// Trial-averaged volume of a probe stimulus in which the concept is present.
inline BrainVolume planted_probe(const PlantedRun& run, const PlantedSetup& p, std::uint64_t stim) {
  auto u = draw_latent(run.world, stim);
  u[0] = p.concept_latent;
  std::vector<BrainVolume> trials;
  for (int t = 0; t < 3; ++t) trials.push_back(render_trial(run.world, u, stim, t));
  return average_volumes(trials);
}

struct LocalizationOutcome {
  Criterion validity;
  Criterion invariances;
  std::optional<VoxelHeatmap> example;  // first seed, first probe
  std::optional<BrainVolume> example_probe;
};

inline LocalizationOutcome localization(const PlantedSetup& p, std::uint64_t seed, int threads) {
  LocalizationOutcome out;
  out.validity = {6, "localization validity"};
  out.invariances = {7, "GradCAM invariances"};
  EmbedderSpec text{EmbedderKind::text_embedding, 64, 0, ""};
  int mass_ok = 0, wins = 0, trials = 0;
  json per_seed = json::array();
  bool nonneg = true, blocked_zero = true;
  double scale_diff = 0.0;
  for (int s = 0; s < p.seeds; ++s) {
    const auto world_seed = derive_seed(seed, "acceptance/planted/" + std::to_string(s));
    const auto run = train_planted(p, world_seed, threads);
    const auto region = run.world.planted->region;
    json seed_row{{"seed", s}};
    json deltas = json::array();
    for (int e = 0; e < p.trials_per_seed; ++e) {
      const auto probe = planted_probe(run, p, test_stimulus(e));
      const auto sig = preprocess_volume(probe, run.world.mask, run.spec);
      const auto heat = localize({{run.encoder.get(), sig}}, "zebra", text);
      if (e == 0) {
        const double mass = mass_in_box(heat.values, region);
        seed_row["octant_mass"] = mass;
        mass_ok += mass >= 0.7 ? 1 : 0;
        if (s == 0) {
          out.example = heat;
          out.example_probe = probe;
        }
      }
      const auto base = run.encoder->forward(sig).pred_c;
      const auto top = nullify(probe, heat.values, p.tau);
      std::size_t count = 0;
      for (auto idx : run.world.mask_index) count += top.volume.data[idx] == 0.0f ? 1 : 0;
      const auto rnd = nullify_random(probe, run.world.mask_index, count, derive_seed(world_seed, std::uint64_t(e)));
      const double d_top = (run.encoder->forward(preprocess_volume(top.volume, run.world.mask, run.spec)).pred_c - base).norm();
      const double d_rnd = (run.encoder->forward(preprocess_volume(rnd, run.world.mask, run.spec)).pred_c - base).norm();
      deltas.push_back({{"top", d_top}, {"random", d_rnd}, {"voxels", count}});
      wins += d_top > d_rnd ? 1 : 0;
      ++trials;

      // Invariances on the same probe.
      const auto g = gradcam(*run.encoder, sig, run.target);
      for (double x : g.relevance) nonneg = nonneg && x >= 0.0;
      for (float k : {0.25f, 7.0f, 1000.0f}) {
        auto scaled = run.target;
        for (auto& x : scaled) x *= k;
        const auto gs = gradcam(*run.encoder, sig, scaled);
        for (std::size_t i = 0; i < g.relevance.size(); ++i)
          scale_diff = std::max(scale_diff, std::abs(gs.relevance[i] - g.relevance[i]));
      }
      for (double x : gradcam(*run.encoder, sig, run.target, std::nullopt, true).relevance)
        blocked_zero = blocked_zero && x == 0.0;
    }
    seed_row["nullification"] = deltas;
    per_seed.push_back(seed_row);
  }
  out.validity.measured = {{"seeds_with_octant_mass_ge_0.7", mass_ok},
                           {"nullification_wins", wins},
                           {"nullification_trials", trials},
                           {"per_seed", per_seed}};
  out.validity.threshold = {{"seeds_with_octant_mass_ge_0.7", 4}, {"of_seeds", p.seeds},
                            {"nullification_wins", 18}, {"of_trials", 20}};
  out.validity.status = verdict(mass_ok >= 4 && wins >= 18 && trials == 20 && p.seeds == 5);
  out.validity.note = "one-block encoder; GradCAM reads the normed token embeddings consumed by that block";
  out.invariances.measured = {{"relevance_nonnegative", nonneg},
                              {"max_abs_diff_under_target_scaling", scale_diff},
                              {"zero_when_score_detached", blocked_zero}};
  out.invariances.threshold = {{"max_abs_diff_under_target_scaling", 1e-6}};
  out.invariances.status = verdict(nonneg && scale_diff <= 1e-6 && blocked_zero);
  return out;
}

// ---- 8: metrics ----------------------------------------------------------------------

/// Two-way identification straight from the definition.
inline double two_way_brute_force(const std::vector<std::vector<float>>& truth, const std::vector<std::vector<float>>& recon) {
  auto corr = [](const std::vector<float>& a, const std::vector<float>& b) {
    std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
    return pearson(x, y);
  };
  const std::size_t n = truth.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double correct = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double own = corr(truth[i], recon[i]), other = corr(truth[i], recon[j]);
      correct += own > other ? 1.0 : own == other ? 0.5 : 0.0;
    }
    total += 100.0 * correct / static_cast<double>(n - 1);
  }
  return total / static_cast<double>(n);
}

/// Covariance over the product of standard deviations, two passes.
inline double pixcorr_oracle(const Image& a, const Image& b) {
  const double n = static_cast<double>(a.rgb.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    ma += a.rgb[i];
    mb += b.rgb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    cov += (a.rgb[i] - ma) * (b.rgb[i] - mb);
    va += (a.rgb[i] - ma) * (a.rgb[i] - ma);
    vb += (b.rgb[i] - mb) * (b.rgb[i] - mb);
  }
  return (cov / n) / (std::sqrt(va / n) * std::sqrt(vb / n));
}

/// SSIM with an explicit 2D Gaussian per window position.
inline double ssim_windowed(const GrayImage& a, const GrayImage& b) {
  const int win = 11;
  double w2[11][11], total_w = 0.0;
  for (int y = 0; y < win; ++y)
    for (int x = 0; x < win; ++x) total_w += w2[y][x] = std::exp(-((x - 5) * (x - 5) + (y - 5) * (y - 5)) / 4.5);
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0.0;
  int count = 0;
  for (int oy = 0; oy + win <= a.height; ++oy)
    for (int ox = 0; ox + win <= a.width; ++ox) {
      double mx = 0, my = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          mx += w2[y][x] / total_w * a.at(ox + x, oy + y);
          my += w2[y][x] / total_w * b.at(ox + x, oy + y);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          const double w = w2[y][x] / total_w, dx = a.at(ox + x, oy + y) - mx, dy = b.at(ox + x, oy + y) - my;
          vx += w * dx * dx;
          vy += w * dy * dy;
          cxy += w * dx * dy;
        }
      sum += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return sum / count;
}

inline Image random_image(int w, int h, Rng& rng) {
  Image img(w, h);
  for (auto& x : img.rgb) x = static_cast<float>(rng.uniform());
  return img;
}

inline Criterion metric_checks(std::uint64_t seed) {
  Criterion c{8, "metric correctness"};
  Rng rng(derive_seed(seed, "acceptance/metrics"));
  std::vector<std::vector<float>> truth(10), recon(10);
  for (int i = 0; i < 10; ++i) {
    truth[i].resize(32);
    recon[i].resize(32);
    for (int k = 0; k < 32; ++k) {
      truth[i][k] = static_cast<float>(rng.normal());
      recon[i][k] = static_cast<float>(0.6 * truth[i][k] + rng.normal());
    }
  }
  const double fast = two_way_identification(truth, recon).percent;
  const double slow = two_way_brute_force(truth, recon);

  const auto a = random_image(64, 64, rng);
  auto b = a;
  for (auto& x : b.rgb) x = static_cast<float>(std::clamp(x + 0.3 * rng.normal(), 0.0, 1.0));
  const double pc_diff = std::abs(pixcorr(a, b) - pixcorr_oracle(a, b));
  const double ssim_diff = std::abs(ssim(to_gray(a), to_gray(b)) - ssim_windowed(to_gray(a), to_gray(b)));

  const auto repeat = bleu("the the the the", {"the cat"});
  const bool bleu_ok = repeat == std::vector<double>{0.25, 0.0, 0.0, 0.0} &&
                       bleu("a cat sat on the mat", {"a cat sat on the mat"}) == std::vector<double>{1, 1, 1, 1} &&
                       bleu("dogs run", {"cats sleep"}) == std::vector<double>{0, 0, 0, 0};
  const double rouge = rouge_l("a b c d", "a c d");
  const double rouge_hand = (1 + 1.44) * 0.75 * 1.0 / (1.0 + 1.44 * 0.75);
  const bool rouge_ok = rouge == rouge_hand && rouge_l("x y", "x y") == 1.0 && rouge_l("x y", "p q") == 0.0;

  c.measured = {{"two_way_fast", fast},
                {"two_way_brute_force", slow},
                {"pixcorr_abs_diff", pc_diff},
                {"ssim_abs_diff", ssim_diff},
                {"bleu_cases_exact", bleu_ok},
                {"rouge_l_cases_exact", rouge_ok}};
  c.threshold = {{"two_way", "exact"}, {"pixcorr_abs_diff", 1e-10}, {"ssim_abs_diff", 1e-6}};
  c.status = verdict(fast == slow && pc_diff <= 1e-10 && ssim_diff <= 1e-6 && bleu_ok && rouge_ok);
  return c;
}

}  // namespace voxelbridge::acceptance
