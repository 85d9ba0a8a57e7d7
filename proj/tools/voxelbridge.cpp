// voxelbridge command-line front end.
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "voxelbridge/config.hpp"
#include "voxelbridge/dataset.hpp"
#include "voxelbridge/embedders.hpp"
#include "voxelbridge/encoder.hpp"
#include "voxelbridge/localizer.hpp"
#include "voxelbridge/metrics.hpp"
#include "voxelbridge/reconstructor.hpp"
#include "voxelbridge/repro.hpp"
#include "voxelbridge/run.hpp"
#include "voxelbridge/synthetic.hpp"

namespace vb = voxelbridge;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Globals {
  std::string workdir = ".";
  std::string config_path;
  std::vector<std::string> overrides;
  bool print_config = false;
};

/// Flags that shadow a config key. Given values are written into the config
/// after it is loaded, so a flag always beats the file.
class Shadows {
 public:
  void add(CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    const auto& keys = vb::config_keys();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const vb::ConfigKey& k) { return k.key == key; });
    const std::string def = it == keys.end() ? "" : it->default_value;
    auto& slot = values_[sub][key];
    sub->add_option(flag, slot, help + " [config " + key + ", default " + (def.empty() ? "\"\"" : def) + "]");
  }
  void apply(CLI::App* sub, vb::RunConfig& cfg) const {
    const auto it = values_.find(sub);
    if (it == values_.end()) return;
    for (const auto& [key, value] : it->second)
      if (value) cfg.set(key, *value);
  }

 private:
  std::map<CLI::App*, std::map<std::string, std::optional<std::string>>> values_;
};

struct Context {
  fs::path workdir;
  vb::RunConfig cfg;

  fs::path path(const std::string& p) const {
    const fs::path q(p);
    return q.is_absolute() ? q : workdir / q;
  }
  std::uint64_t seed() const { return cfg.u64("seed"); }
  int threads() const { return std::max(1, cfg.integer("threads")); }

  vb::PatchSpec patch_spec(std::optional<int> r = std::nullopt) const {
    vb::PatchSpec s;
    s.r = r.value_or(cfg.integer("r"));
    s.canonical = cfg.dims("canonical");
    s.retain_threshold = cfg.integer("retain_threshold");
    s.validate();
    return s;
  }

  vb::VoxelMask mask(const std::string& p) const {
    auto m = vb::volume_to_mask(vb::read_volume(path(p)));
    vb::require(m.dims == cfg.dims("canonical"), vb::ErrorKind::shape,
                "mask dims " + vb::to_string(m.dims) + " differ from canonical " + cfg.str("canonical") +
                    "; set `canonical` to the mask dims");
    return m;
  }

  vb::EncoderConfig encoder_config(const vb::PatchSpec& spec, int d_c, int d_v) const {
    vb::EncoderConfig e;
    e.n_layers = cfg.integer("encoder.n_layers");
    e.hidden = cfg.integer("encoder.hidden");
    e.n_heads = cfg.integer("encoder.n_heads") > 0 ? cfg.integer("encoder.n_heads") : std::max(1, e.hidden / 64);
    e.mlp_ratio = cfg.real("encoder.mlp_ratio");
    e.patch_dim = static_cast<int>(spec.patch_dim());
    e.pos_table_size = static_cast<int>(spec.grid().count());
    e.d_c = d_c;
    e.d_v = d_v;
    e.head_hidden = cfg.integer("encoder.head_hidden");
    e.alpha = cfg.real("encoder.alpha");
    e.dropout = cfg.real("encoder.dropout");
    return e;
  }

  vb::DecoderSpec decoder() const {
    vb::DecoderSpec d;
    d.seed = cfg.u64("decoder.seed");
    d.width = cfg.integer("decoder.width");
    d.height = cfg.integer("decoder.height");
    d.latent_channels = cfg.integer("decoder.latent_channels");
    d.lipschitz = cfg.real("decoder.lipschitz");
    d.residual_gain = cfg.real("decoder.residual_gain");
    d.adapter = cfg.str("decoder.adapter");
    return d;
  }

  vb::EmbedderSpec embedder(vb::EmbedderKind kind, int dim) const {
    const char* key = kind == vb::EmbedderKind::image_embedding ? "embed.image_adapter"
                      : kind == vb::EmbedderKind::image_latent  ? "embed.latent_adapter"
                                                                 : "embed.text_adapter";
    return {kind, dim, cfg.u64("embed.seed"), cfg.str(key)};
  }
};

void progress(const std::string& what, int epoch, double loss) {
  std::cerr << what << " epoch " << epoch << " loss " << loss << "\n";
}

/// Patch edge of an encoder checkpoint, recovered from its patch length.
int patch_edge(const vb::Encoder<float>& enc) {
  const int r = static_cast<int>(std::lround(std::cbrt(static_cast<double>(enc.config().patch_dim))));
  vb::require(r * r * r == enc.config().patch_dim, vb::ErrorKind::shape,
              "encoder patch_dim " + std::to_string(enc.config().patch_dim) + " is not a cube");
  return r;
}

/// One patched signal per stimulus, from the trial average of its records.
std::map<std::string, vb::PatchedSignal> averaged_signals(const Context& ctx, const vb::DatasetManifest& m,
                                                          const vb::VoxelMask& mask, const vb::PatchSpec& spec) {
  std::map<std::string, std::vector<vb::BrainVolume>> by_stim;
  for (const auto& r : m.records) by_stim[r.stimulus_id].push_back(vb::read_volume(m.resolve(r.volume_path)));
  std::map<std::string, vb::PatchedSignal> out;
  for (auto& [id, vols] : by_stim) {
    for (auto& v : vols)
      if (v.dims != spec.canonical) v = vb::trilinear_resize(v, spec.canonical);
    out.emplace(id, vb::preprocess_volume(vb::average_volumes(vols), mask, spec));
  }
  (void)ctx;
  return out;
}

vb::PatchedSignal signal_input(const Context& ctx, const std::string& signal, const std::string& volume,
                               const std::string& mask, const vb::PatchSpec& spec) {
  if (!signal.empty()) return vb::read_npat(ctx.path(signal));
  vb::require(!volume.empty() && !mask.empty(), vb::ErrorKind::usage, "give --signal, or --volume with --mask");
  return vb::preprocess_volume(vb::read_volume(ctx.path(volume)), ctx.mask(mask), spec);
}

// ---- subcommands ------------------------------------------------------------------

int cmd_synth(Context& ctx, const std::string& out, bool planted) {
  vb::SyntheticWorldParams p;
  p.seed = vb::derive_seed(ctx.seed(), "synth/world");
  p.grid = ctx.cfg.dims("synth.grid");
  p.mask_fraction = ctx.cfg.real("synth.mask_fraction");
  p.noise_sigma = ctx.cfg.real("synth.noise_sigma");
  p.latent_dim = ctx.cfg.integer("synth.latent_dim");
  p.d_c = ctx.cfg.integer("synth.d_c");
  p.d_v = ctx.cfg.integer("synth.d_v");
  std::optional<vb::PlantedConcept> pc;
  if (planted) pc = vb::acceptance::zebra_concept(p.d_c, 6.0);
  const auto world = vb::generate_synthetic_world(p, pc);
  const auto layout = vb::write_synthetic_dataset(world, ctx.path(out), ctx.cfg.u64("synth.first_stimulus"),
                                                  ctx.cfg.integer("synth.stimuli"), ctx.cfg.integer("synth.trials"));
  std::cout << layout.manifest.string() << "\n";
  return 0;
}

int cmd_preprocess(Context& ctx, const std::string& manifest, const std::string& mask_path, const std::string& out,
                   bool average) {
  const auto m = vb::read_manifest(ctx.path(manifest));
  const auto mask = ctx.mask(mask_path);
  const auto spec = ctx.patch_spec();
  const auto dir = ctx.path(out);
  fs::create_directories(dir);
  std::size_t n = 0;
  if (average) {
    for (const auto& [id, sig] : averaged_signals(ctx, m, mask, spec)) {
      vb::write_npat(sig, dir / (id + ".npat"));
      ++n;
    }
  } else {
    for (const auto& r : m.records) {
      vb::write_npat(vb::preprocess_volume(vb::read_volume(m.resolve(r.volume_path)), mask, spec),
                     dir / (r.record_id + ".npat"));
      ++n;
    }
  }
  std::cerr << "wrote " << n << " patched signals to " << dir.string() << "\n";
  return 0;
}

int cmd_train_align(Context& ctx, const std::string& manifest, const std::string& mask_path, const std::string& out) {
  const auto m = vb::read_manifest(ctx.path(manifest));
  m.validate_unique();
  const auto store = vb::TargetStore::open(m.targets_dir());
  vb::check_manifest_targets(m, store);
  const auto mask = ctx.mask(mask_path);
  const auto spec = ctx.patch_spec();
  vb::AlignmentDataset data;
  std::map<std::string, std::size_t> index;
  for (const auto& r : m.records) {
    auto [it, fresh] = index.emplace(r.stimulus_id, data.targets.size());
    if (fresh) data.targets.push_back(store.read(r.stimulus_id));
    data.signals.push_back(vb::preprocess_volume(vb::read_volume(m.resolve(r.volume_path)), mask, spec));
    data.target_of.push_back(it->second);
  }
  vb::Encoder<float> enc(ctx.encoder_config(spec, static_cast<int>(store.d_c()), static_cast<int>(store.d_v())),
                         vb::derive_seed(ctx.seed(), "train-align/init"));
  vb::TrainSchedule sch;
  sch.lr = ctx.cfg.real("align.lr");
  sch.epochs = ctx.cfg.integer("align.epochs");
  sch.batch = ctx.cfg.integer("align.batch");
  sch.mixup = ctx.cfg.flag("align.mixup");
  sch.seed = vb::derive_seed(ctx.seed(), "train-align/schedule");
  sch.threads = ctx.threads();
  const auto rep = vb::train_alignment(enc, data, sch, nullptr, [](int e, double l) { progress("align", e, l); });
  enc.save(ctx.path(out), {{"r", spec.r}, {"canonical", ctx.cfg.str("canonical")}, {"train", vb::to_json(rep)}});
  std::cout << ctx.path(out).string() << "\n";
  return 0;
}

int cmd_embed(Context& ctx, const std::string& kind, const std::string& image, const std::string& text, int dim,
              const std::string& out) {
  vb::EmbedderKind k;
  if (kind == "image_embedding") k = vb::EmbedderKind::image_embedding;
  else if (kind == "image_latent") k = vb::EmbedderKind::image_latent;
  else if (kind == "text_embedding") k = vb::EmbedderKind::text_embedding;
  else vb::fail(vb::ErrorKind::usage, "unknown embedder kind: " + kind);
  const auto spec = ctx.embedder(k, dim > 0 ? dim : ctx.cfg.integer("embed.dim"));
  std::vector<float> v;
  if (k == vb::EmbedderKind::text_embedding) {
    vb::require(!text.empty(), vb::ErrorKind::usage, "text embedding needs --text");
    v = vb::embed_text(spec, text);
  } else {
    vb::require(!image.empty(), vb::ErrorKind::usage, "image embedders need --image");
    v = vb::embed_image(spec, vb::read_ppm(ctx.path(image)));
  }
  if (out.empty()) {
    std::cout << json(v).dump() << "\n";
  } else {
    vb::io::write_f32_file(ctx.path(out), v);
  }
  return 0;
}

int cmd_train_bridge(Context& ctx, const std::string& encoder, const std::string& manifest,
                     const std::string& mask_path, const std::string& init, const std::string& stages,
                     const std::string& out) {
  const auto enc = vb::Encoder<float>::load(ctx.path(encoder));
  const auto m = vb::read_manifest(ctx.path(manifest));
  const auto store = vb::TargetStore::open(m.targets_dir());
  const auto spec = ctx.patch_spec(patch_edge(enc));
  const auto signals = averaged_signals(ctx, m, ctx.mask(mask_path), spec);

  std::vector<vb::StimulusTargets> targets;
  std::map<std::string, vb::ad::Matrix<float>> pen;
  for (const auto& [id, sig] : signals) {
    targets.push_back(store.read(id));
    pen.emplace(id, enc.forward(sig).penultimate);
  }
  auto records = vb::build_instruction_dataset(targets, vb::TemplateSet::standard(), vb::derive_seed(ctx.seed(), "train-bridge/templates"));
  for (const auto& t : targets)
    for (const auto& c : t.conversations) records.push_back(c);
  std::vector<vb::BridgeSample> samples;
  for (auto& r : records) samples.push_back({pen.at(r.stimulus_id), std::move(r)});

  const auto tok = vb::Tokenizer::bytes();
  vb::BridgeConfig bc;
  bc.enc_hidden = enc.config().hidden;
  bc.proj_hidden = ctx.cfg.integer("bridge.proj_hidden");
  bc.class_only = ctx.cfg.flag("bridge.class_only");
  bc.lm.vocab = tok.vocab_size();
  bc.lm.layers = ctx.cfg.integer("lm.layers");
  bc.lm.width = ctx.cfg.integer("lm.width");
  bc.lm.heads = ctx.cfg.integer("lm.heads");
  bc.lm.context = ctx.cfg.integer("lm.context");
  bc.lm_adapter = ctx.cfg.str("lm.adapter");
  auto bridge = init.empty() ? vb::Bridge<float>(bc, tok, vb::derive_seed(ctx.seed(), "train-bridge/init"))
                             : vb::Bridge<float>::load(ctx.path(init));

  vb::BridgeSchedule sch;
  sch.lr = ctx.cfg.real("bridge.lr");
  sch.epochs = ctx.cfg.integer("bridge.epochs");
  sch.batch = ctx.cfg.integer("bridge.batch");
  json reports = json::array();
  for (const auto& st : vb::RunConfig::split_list(stages)) {
    vb::require(st == "1" || st == "2", vb::ErrorKind::usage, "--stages takes 1, 2 or 1,2; got '" + st + "'");
    const int stage = st == "1" ? 1 : 2;
    sch.seed = vb::derive_seed(ctx.seed(), "train-bridge/stage" + st);
    const auto rep = vb::train_bridge(bridge, samples, stage, sch,
                                      [&](int e, double l) { progress("bridge stage " + st, e, l); });
    reports.push_back({{"stage", stage}, {"epoch_loss", rep.epoch_loss}, {"answer_token_accuracy", rep.final_accuracy}});
  }
  bridge.save(ctx.path(out));
  vb::io::write_file(ctx.path(out) / "train.json", reports.dump(2) + "\n");
  std::cout << ctx.path(out).string() << "\n";
  return 0;
}

int cmd_chat(Context& ctx, const std::string& encoder, const std::string& bridge_dir, const std::string& signal,
             const std::string& volume, const std::string& mask, const std::string& instruction) {
  const auto enc = vb::Encoder<float>::load(ctx.path(encoder));
  auto bridge = vb::Bridge<float>::load(ctx.path(bridge_dir));
  const auto b = signal_input(ctx, signal, volume, mask, ctx.patch_spec(patch_edge(enc)));
  const auto pen = enc.forward(b).penultimate;
  std::cout << bridge.generate(pen, instruction, ctx.cfg.integer("recon.max_tokens")) << "\n";
  return 0;
}

int cmd_reconstruct(Context& ctx, const std::string& encoder, const std::string& bridge_dir, const std::string& signal,
                    const std::string& volume, const std::string& mask, std::optional<std::uint64_t> noise_seed,
                    const std::string& out) {
  const auto enc = vb::Encoder<float>::load(ctx.path(encoder));
  std::optional<vb::Bridge<float>> bridge;
  if (!bridge_dir.empty()) bridge = vb::Bridge<float>::load(ctx.path(bridge_dir));
  const auto b = signal_input(ctx, signal, volume, mask, ctx.patch_spec(patch_edge(enc)));
  const auto r = vb::recon_pipeline(enc, bridge ? &*bridge : nullptr, ctx.decoder(), b, ctx.cfg.real("recon.beta"),
                                    noise_seed.value_or(vb::derive_seed(ctx.seed(), "reconstruct/noise")),
                                    ctx.cfg.integer("recon.max_tokens"));
  const auto path = ctx.path(out);
  vb::write_ppm(r.image, path);
  auto bundle = path;
  bundle.replace_extension(".bundle.json");
  vb::io::write_file(bundle, vb::to_json(r.bundle).dump() + "\n");
  if (!r.prompt.empty()) std::cerr << "prompt: " << r.prompt << "\n";
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_localize(Context& ctx, std::string concept_name, const std::string& instruction,
                 const std::vector<std::string>& ckpts, const std::string& volume, const std::string& mask_path,
                 const std::string& out, bool montage) {
  if (concept_name.empty()) {
    vb::require(!instruction.empty(), vb::ErrorKind::usage, "give --concept or --instruction");
    concept_name = vb::extract_concept(instruction);
  }
  vb::require(!ckpts.empty(), vb::ErrorKind::usage, "give at least one encoder checkpoint (--ckpt14/12/10 or --ckpt)");
  const auto v = vb::read_volume(ctx.path(volume));
  const auto mask = ctx.mask(mask_path);
  std::vector<vb::Encoder<float>> encoders;
  encoders.reserve(ckpts.size());
  for (const auto& c : ckpts) encoders.push_back(vb::Encoder<float>::load(ctx.path(c)));
  std::vector<vb::ScaleInput> scales;
  for (const auto& e : encoders) scales.push_back({&e, vb::preprocess_volume(v, mask, ctx.patch_spec(patch_edge(e)))});
  const auto text = ctx.embedder(vb::EmbedderKind::text_embedding, encoders.front().config().d_c);
  const auto heat = vb::localize(scales, concept_name, text);
  vb::write_heatmap(heat, ctx.path(out), ctx.cfg.real("localize.tau"), montage);
  std::cout << ctx.path(out).string() << "\n";
  return 0;
}

int cmd_nullify(Context& ctx, const std::string& heat, const std::string& in, const std::string& out) {
  const auto h = vb::read_volume(ctx.path(heat));
  const auto v = vb::read_volume(ctx.path(in));
  const auto r = vb::nullify(v, h, ctx.cfg.real("localize.tau"));
  if (r.empty_heatmap) std::cerr << "warning: heatmap is all zero; volume written unchanged\n";
  vb::write_volume(r.volume, ctx.path(out));
  std::cerr << "zeroed " << r.zeroed << " voxels\n";
  std::cout << ctx.path(out).string() << "\n";
  return 0;
}

std::vector<std::string> ppm_names(const fs::path& dir) {
  vb::require(fs::is_directory(dir), vb::ErrorKind::io, "not a directory: " + dir.string());
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

int cmd_evaluate(Context& ctx, const std::string& recon_dir, const std::string& truth_dir, const std::string& out) {
  const auto rd = ctx.path(recon_dir), td = ctx.path(truth_dir);
  const auto names = ppm_names(rd);
  vb::require(names == ppm_names(td), vb::ErrorKind::invalid_argument,
              "recon and truth directories must hold the same .ppm file names");
  vb::ImageEvalOptions o;
  o.resolution = ctx.cfg.integer("eval.resolution");
  o.metrics = vb::RunConfig::split_list(ctx.cfg.str("eval.metrics"));
  o.embedder = ctx.embedder(vb::EmbedderKind::image_embedding, ctx.cfg.integer("embed.dim"));
  std::vector<std::string> ids;
  std::vector<vb::Image> recon, truth;
  for (const auto& n : names) {
    ids.push_back(fs::path(n).stem().string());
    recon.push_back(vb::read_ppm(rd / n));
    truth.push_back(vb::read_ppm(td / n));
  }
  const auto rep = vb::evaluate_images(ids, recon, truth, o).to_json();
  vb::io::write_file(ctx.path(out), rep.dump(2) + "\n");
  std::cout << rep["aggregate"].dump() << "\n";
  return 0;
}

int cmd_repro(Context& ctx, const fs::path& run_dir) {
  const auto o = vb::run_repro(ctx.cfg, run_dir, [](const std::string& m) { std::cerr << m << "\n"; });
  for (const auto& c : o.report["criteria"])
    std::cout << "criterion " << c["id"].get<int>() << " " << c["status"].get<std::string>() << "  "
              << c["name"].get<std::string>() << "\n";
  std::cout << "report " << (run_dir / "report.json").string() << "\n";
  return o.failed == 0 && o.skipped == 0 ? 0 : 1;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fMRI-to-image/text bridge: synthetic data, alignment, bridge training, reconstruction, localization"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Globals g;
  Shadows shadows;
  app.add_option("--workdir", g.workdir, "root for every relative path and for runs/")->capture_default_str();
  app.add_option("--config", g.config_path, "key = value config file (relative to --workdir)");
  app.add_option("--set", g.overrides, "override one config key, key=value (repeatable)");
  app.add_flag("--print-config", g.print_config, "print the effective config and exit");
  shadows.add(&app, "--seed", "seed", "root seed");
  shadows.add(&app, "--threads", "threads", "worker threads; VOXELBRIDGE_THREADS overrides");

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset (volumes, mask, targets, manifest)");
  std::string synth_out = "data";
  bool planted = false;
  synth->add_option("--out", synth_out, "dataset directory")->capture_default_str();
  synth->add_flag("--planted", planted, "plant the \"zebra\" concept in the [0,8)^3 corner");
  shadows.add(synth, "--stimuli", "synth.stimuli", "stimuli");
  shadows.add(synth, "--trials", "synth.trials", "trials per stimulus");
  shadows.add(synth, "--grid", "synth.grid", "volume dims X,Y,Z");

  auto* pre = app.add_subcommand("preprocess", "resize, normalize and patch every manifest volume to NPAT1");
  std::string pre_manifest, pre_mask, pre_out = "patched";
  bool pre_average = false;
  pre->add_option("--manifest", pre_manifest, "JSONL manifest")->required();
  pre->add_option("--mask", pre_mask, "mask volume (NVOL1)")->required();
  pre->add_option("--out", pre_out, "output directory")->capture_default_str();
  pre->add_flag("--average", pre_average, "one signal per stimulus from its trial average");
  shadows.add(pre, "--r", "r", "patch edge");
  shadows.add(pre, "--canonical", "canonical", "canonical dims X,Y,Z");

  auto* align = app.add_subcommand("train-align", "train the encoder on the alignment loss");
  std::string al_manifest, al_mask, al_out = "checkpoints/encoder";
  align->add_option("--manifest", al_manifest, "JSONL manifest")->required();
  align->add_option("--mask", al_mask, "mask volume")->required();
  align->add_option("--out", al_out, "checkpoint directory")->capture_default_str();
  shadows.add(align, "--r", "r", "patch edge");
  shadows.add(align, "--canonical", "canonical", "canonical dims X,Y,Z");
  shadows.add(align, "--epochs", "align.epochs", "epochs");
  shadows.add(align, "--lr", "align.lr", "learning rate");
  shadows.add(align, "--batch", "align.batch", "batch size");

  auto* embed = app.add_subcommand("embed", "run an embedder on one image or text");
  std::string em_kind = "image_embedding", em_image, em_text, em_out;
  int em_dim = 0;
  embed->add_option("--kind", em_kind, "image_embedding | image_latent | text_embedding")->capture_default_str();
  embed->add_option("--image", em_image, "PPM input");
  embed->add_option("--text", em_text, "text input");
  embed->add_option("--dim", em_dim, "output length; 0 uses embed.dim")->capture_default_str();
  embed->add_option("--out", em_out, "float32 LE output file; stdout JSON when empty");

  auto* tb = app.add_subcommand("train-bridge", "train the projector (stage 1) and language model (stage 2)");
  std::string tb_encoder, tb_manifest, tb_mask, tb_init, tb_stages = "1,2", tb_out = "checkpoints/bridge";
  tb->add_option("--encoder", tb_encoder, "encoder checkpoint")->required();
  tb->add_option("--manifest", tb_manifest, "JSONL manifest")->required();
  tb->add_option("--mask", tb_mask, "mask volume")->required();
  tb->add_option("--init", tb_init, "bridge checkpoint to continue from");
  tb->add_option("--stages", tb_stages, "stages to run, in order")->capture_default_str();
  tb->add_option("--out", tb_out, "bridge checkpoint directory")->capture_default_str();
  shadows.add(tb, "--canonical", "canonical", "canonical dims X,Y,Z");
  shadows.add(tb, "--lr", "bridge.lr", "learning rate");
  shadows.add(tb, "--epochs", "bridge.epochs", "epochs per stage");
  shadows.add(tb, "--batch", "bridge.batch", "batch size");

  auto* chat = app.add_subcommand("chat", "answer one instruction about one brain signal");
  std::string ch_encoder, ch_bridge, ch_signal, ch_volume, ch_mask, ch_instruction = vb::brief_instructions().front();
  chat->add_option("--encoder", ch_encoder, "encoder checkpoint")->required();
  chat->add_option("--bridge", ch_bridge, "bridge checkpoint")->required();
  chat->add_option("--signal", ch_signal, "NPAT1 input");
  chat->add_option("--volume", ch_volume, "NVOL1 input (with --mask)");
  chat->add_option("--mask", ch_mask, "mask volume");
  chat->add_option("--instruction", ch_instruction, "instruction text")->capture_default_str();
  shadows.add(chat, "--canonical", "canonical", "canonical dims X,Y,Z");
  shadows.add(chat, "--max-tokens", "recon.max_tokens", "generation budget");

  auto* rec = app.add_subcommand("reconstruct", "decode an image from one brain signal");
  std::string rc_encoder, rc_bridge, rc_signal, rc_volume, rc_mask, rc_out = "recon.ppm";
  std::optional<std::uint64_t> rc_noise;
  rec->add_option("--encoder", rc_encoder, "encoder checkpoint")->required();
  rec->add_option("--bridge", rc_bridge, "bridge checkpoint; supplies the prompt");
  rec->add_option("--signal", rc_signal, "NPAT1 input");
  rec->add_option("--volume", rc_volume, "NVOL1 input (with --mask)");
  rec->add_option("--mask", rc_mask, "mask volume");
  rec->add_option("--noise-seed", rc_noise, "seed of the latent noise; derived from --seed when absent");
  rec->add_option("--out", rc_out, "PPM output; the bundle goes next to it as .bundle.json")->capture_default_str();
  shadows.add(rec, "--beta", "recon.beta", "noise share of the initial latent");
  shadows.add(rec, "--canonical", "canonical", "canonical dims X,Y,Z");

  auto* loc = app.add_subcommand("localize", "GradCAM heatmap of a text concept, fused over scales");
  std::string lc_concept, lc_instruction, lc_c14, lc_c12, lc_c10, lc_volume, lc_mask, lc_out = "heat.nvol";
  std::vector<std::string> lc_more;
  bool lc_no_montage = false;
  loc->add_option("--concept", lc_concept, "concept text");
  loc->add_option("--instruction", lc_instruction, "localization instruction; the quoted concept is used");
  loc->add_option("--ckpt14", lc_c14, "encoder checkpoint trained at r = 14");
  loc->add_option("--ckpt12", lc_c12, "encoder checkpoint trained at r = 12");
  loc->add_option("--ckpt10", lc_c10, "encoder checkpoint trained at r = 10");
  loc->add_option("--ckpt", lc_more, "further encoder checkpoints, any r (repeatable)");
  loc->add_option("--volume", lc_volume, "NVOL1 input")->required();
  loc->add_option("--mask", lc_mask, "mask volume")->required();
  loc->add_option("--out", lc_out, "heatmap NVOL1; .meta.json and .montage.ppm go next to it")->capture_default_str();
  loc->add_flag("--no-montage", lc_no_montage, "skip the axial montage");
  shadows.add(loc, "--tau", "localize.tau", "percentile recorded in the metadata");
  shadows.add(loc, "--canonical", "canonical", "canonical dims X,Y,Z");

  auto* nul = app.add_subcommand("nullify", "zero the voxels at or above the tau-th heatmap percentile");
  std::string nl_heat, nl_in, nl_out = "nullified.nvol";
  nul->add_option("--heat", nl_heat, "heatmap NVOL1")->required();
  nul->add_option("--in", nl_in, "input NVOL1")->required();
  nul->add_option("--out", nl_out, "output NVOL1")->capture_default_str();
  shadows.add(nul, "--tau", "localize.tau", "percentile over nonzero heatmap values");

  auto* ev = app.add_subcommand("evaluate", "score reconstructions against ground truth");
  std::string ev_recon, ev_truth, ev_out = "report.json";
  ev->add_option("--recon", ev_recon, "directory of reconstructed PPMs")->required();
  ev->add_option("--truth", ev_truth, "directory of ground-truth PPMs, same names")->required();
  ev->add_option("--out", ev_out, "report path")->capture_default_str();
  shadows.add(ev, "--metrics", "eval.metrics", "comma-separated metrics");
  shadows.add(ev, "--resolution", "eval.resolution", "square scoring resolution");

  auto* repro = app.add_subcommand("repro", "full synthetic pipeline and acceptance report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n" << app.help();
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  std::optional<vb::RunRecord> record;
  try {
    Context ctx;
    ctx.workdir = g.workdir;
    if (!g.config_path.empty()) ctx.cfg = vb::RunConfig::load(ctx.path(g.config_path));
    for (const auto& kv : g.overrides) {
      const auto eq = kv.find('=');
      vb::require(eq != std::string::npos, vb::ErrorKind::usage, "--set expects key=value, got '" + kv + "'");
      ctx.cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    shadows.apply(&app, ctx.cfg);
    shadows.apply(sub, ctx.cfg);
    if (const char* t = std::getenv("VOXELBRIDGE_THREADS"); t && *t) ctx.cfg.set("threads", t);
    ctx.cfg.integer("threads");
    if (g.print_config) {
      std::cout << ctx.cfg.echo();
      return 0;
    }
    record.emplace(vb::make_run_dir(ctx.workdir, sub->get_name()), sub->get_name(), ctx.cfg);

    int code = 0;
    const auto& name = sub->get_name();
    if (name == "synth") code = cmd_synth(ctx, synth_out, planted);
    else if (name == "preprocess") code = cmd_preprocess(ctx, pre_manifest, pre_mask, pre_out, pre_average);
    else if (name == "train-align") code = cmd_train_align(ctx, al_manifest, al_mask, al_out);
    else if (name == "embed") code = cmd_embed(ctx, em_kind, em_image, em_text, em_dim, em_out);
    else if (name == "train-bridge")
      code = cmd_train_bridge(ctx, tb_encoder, tb_manifest, tb_mask, tb_init, tb_stages, tb_out);
    else if (name == "chat") code = cmd_chat(ctx, ch_encoder, ch_bridge, ch_signal, ch_volume, ch_mask, ch_instruction);
    else if (name == "reconstruct")
      code = cmd_reconstruct(ctx, rc_encoder, rc_bridge, rc_signal, rc_volume, rc_mask, rc_noise, rc_out);
    else if (name == "localize") {
      std::vector<std::string> ckpts;
      for (const auto* c : {&lc_c14, &lc_c12, &lc_c10})
        if (!c->empty()) ckpts.push_back(*c);
      ckpts.insert(ckpts.end(), lc_more.begin(), lc_more.end());
      code = cmd_localize(ctx, lc_concept, lc_instruction, ckpts, lc_volume, lc_mask, lc_out, !lc_no_montage);
    } else if (name == "nullify") code = cmd_nullify(ctx, nl_heat, nl_in, nl_out);
    else if (name == "evaluate") code = cmd_evaluate(ctx, ev_recon, ev_truth, ev_out);
    else if (name == "repro") code = cmd_repro(ctx, record->dir());
    (void)repro;
    record->finish(code);
    return code;
  } catch (const vb::Error& e) {
    std::cerr << "error: " << vb::to_string(e.kind()) << ": " << one_line(e.what()) << "\n";
    if (record) record->finish(e.kind() == vb::ErrorKind::usage ? 2 : 1);
    return e.kind() == vb::ErrorKind::usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << "\n";
    if (record) record->finish(1);
    return 1;
  }
}
