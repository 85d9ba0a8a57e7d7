#include <filesystem>

#include <gtest/gtest.h>

#include "voxelbridge/acceptance.hpp"
#include "voxelbridge/encoder.hpp"
#include "voxelbridge/synthetic.hpp"

namespace vb = voxelbridge;
namespace fs = std::filesystem;

namespace {

vb::EncoderConfig tiny(int layers, int patch_dim = 8, int pos = 6) {
  vb::EncoderConfig c;
  c.n_layers = layers;
  c.hidden = 16;
  c.n_heads = 2;
  c.mlp_ratio = 2.0;
  c.patch_dim = patch_dim;
  c.pos_table_size = pos;
  c.d_c = 5;
  c.d_v = 7;
  c.head_hidden = 12;
  return c;
}

vb::PatchedSignal signal(const vb::EncoderConfig& c, std::vector<std::uint32_t> cells, std::uint64_t seed) {
  auto s = vb::make_gradient_problem(c, seed, 1, static_cast<int>(cells.size())).inputs[0];
  s.index_map.retained = std::move(cells);
  return s;
}

struct SmallData {
  vb::AlignmentDataset data;
  vb::EncoderConfig config;
};

SmallData small_dataset() {
  vb::SyntheticWorldParams p;
  p.seed = 5;
  p.grid = {8, 8, 8};
  p.mask_fraction = 0.4;
  p.d_c = 16;
  p.d_v = 16;
  const auto w = vb::generate_synthetic_world(p);
  vb::PatchSpec spec;
  spec.r = 4;
  spec.canonical = p.grid;
  SmallData s;
  for (int i = 0; i < 32; ++i) {
    const auto t = vb::sample_synthetic_trial(w, 100 + i, 0);
    s.data.signals.push_back(vb::preprocess_volume(t.volume, w.mask, spec));
    s.data.target_of.push_back(static_cast<std::size_t>(i));
    s.data.targets.push_back(t.targets);
  }
  s.config = tiny(2, 64, static_cast<int>(spec.grid().count()));
  s.config.hidden = 64;
  s.config.n_heads = 1;
  s.config.head_hidden = 64;
  s.config.d_c = 16;
  s.config.d_v = 16;
  return s;
}

}  // namespace

TEST(Encoder, JointRowPermutationLeavesOutputUnchanged) {
  const auto c = tiny(2);
  vb::Encoder<float> enc(c, 3);
  auto s = signal(c, {0, 2, 3, 5}, 9);
  const auto a = enc.forward(s).pred_c;
  auto t = s;
  std::swap(t.index_map.retained[0], t.index_map.retained[2]);
  for (int k = 0; k < c.patch_dim; ++k) std::swap(t.values[k], t.values[2 * c.patch_dim + k]);
  const auto b = enc.forward(t).pred_c;
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-5f);
  const auto d = enc.forward(s).pred_c;
  std::swap(t.index_map.retained[0], t.index_map.retained[2]);
  EXPECT_GT((enc.forward(t).pred_c - d).cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Encoder, ZeroHeadWeightsYieldBias) {
  const auto c = tiny(1);
  vb::Encoder<float> enc(c, 4);
  enc.params().get("head_c.fc2.weight").value.setZero();
  auto& bias = enc.params().get("head_c.fc2.bias").value;
  for (int i = 0; i < bias.size(); ++i) bias(0, i) = 0.25f * static_cast<float>(i) - 0.5f;
  const auto pred = enc.forward(signal(c, {1, 4}, 2)).pred_c;
  EXPECT_TRUE(pred == bias);
}

TEST(Encoder, NoBlocksClassOutputIgnoresPatches) {
  const auto c = tiny(0);
  vb::Encoder<double> enc(c, 5);
  const auto a = enc.forward(signal(c, {3}, 1)).class_final;
  const auto b = enc.forward(signal(c, {0}, 2)).class_final;
  EXPECT_TRUE(a == b);
  const auto tok = enc.params().get("class_token").value;
  const double mean = tok.mean();
  const double var = (tok.array() - mean).square().mean();
  const auto& gain = enc.params().get("final_norm.gamma").value;
  const auto& shift = enc.params().get("final_norm.beta").value;
  for (int i = 0; i < tok.cols(); ++i)
    EXPECT_NEAR(a(0, i), (tok(0, i) - mean) / std::sqrt(var + 1e-5) * gain(0, i) + shift(0, i), 1e-12);
}

TEST(Encoder, RejectsShapeMismatch) {
  const auto c = tiny(1);
  vb::Encoder<float> enc(c, 6);
  auto s = signal(c, {0, 1}, 3);
  s.index_map.retained[1] = 99;
  EXPECT_THROW(enc.forward(s), vb::Error);
  auto wide = vb::make_gradient_problem(tiny(1, 27), 1, 1, 2).inputs[0];
  EXPECT_THROW(enc.forward(wide), vb::Error);
}

TEST(AlignmentLoss, HandValues) {
  vb::ForwardTrace<double> t;
  vb::StimulusTargets tg;
  tg.z_c.assign(64, 0.5f);
  tg.z_v.assign(8, -1.0f);
  t.pred_c = vb::as_row<double>(tg.z_c);
  t.pred_v = vb::as_row<double>(tg.z_v);
  EXPECT_EQ(vb::alignment_loss(t, tg, 1.0 / 64).total, 0.0);
  t.pred_c(0, 0) += 2.0;
  EXPECT_DOUBLE_EQ(vb::alignment_loss(t, tg, 1.0 / 64).total, 0.0625);
  t.pred_v(0, 3) += 100.0;
  EXPECT_DOUBLE_EQ(vb::alignment_loss(t, tg, 0.0).total, 0.0625);
  EXPECT_THROW(vb::alignment_loss(t, vb::StimulusTargets{}, 0.0), vb::Error);
}

TEST(Gradient, LinearToyIsExact) {
  vb::Rng rng(21);
  vb::ad::ParamStore<double> store;
  const auto lin = vb::nn::add_linear(store, "lin", 6, 4, rng);
  vb::ad::Matrix<double> x(3, 6), t(3, 4);
  for (auto i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (auto i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  auto loss = [&](bool grad) {
    vb::ad::Graph<double> g;
    const auto l = vb::ad::mse(g, vb::nn::apply(g, store, lin, g.input(x)), t);
    if (grad) g.backward(l);
    return g.value(l)(0, 0);
  };
  store.zero_grad();
  loss(true);
  double worst = 0.0;
  for (std::size_t s = 0; s < store.size(); ++s)
    for (auto i = 0; i < store[s].value.size(); ++i) {
      double& w = store[s].value.data()[i];
      const double saved = w;
      w = saved + 1e-4;
      const double up = loss(false);
      w = saved - 1e-4;
      const double down = loss(false);
      w = saved;
      worst = std::max(worst, vb::relative_error(store[s].grad.data()[i], (up - down) / 2e-4));
    }
  EXPECT_LT(worst, 1e-8);
}

TEST(Gradient, TinyModelDoublePrecision) {
  const auto r = vb::gradient_check(tiny(2), 22, 256);
  EXPECT_GE(r.checked, 200u);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_parameter;
}

TEST(Gradient, HeadBiasClosedForm) {
  const auto c = tiny(1);
  vb::Encoder<double> enc(c, 8);
  const auto p = vb::make_gradient_problem(c, 8, 3, 3);
  vb::batch_alignment_loss(enc, p, true);
  const auto& grad = enc.params().get("head_c.fc2.bias").grad;
  for (int i = 0; i < c.d_c; ++i) {
    double want = 0.0;
    for (std::size_t b = 0; b < p.inputs.size(); ++b)
      want += 2.0 * (enc.forward(p.inputs[b]).pred_c(0, i) - p.targets[b].z_c[i]) / c.d_c / p.inputs.size();
    EXPECT_NEAR(grad(0, i), want, 1e-15);
  }
}

TEST(Training, LossFallsOnSmallSet) {
  auto s = small_dataset();
  vb::Encoder<float> enc(s.config, 1);
  vb::TrainSchedule sch;
  sch.lr = 1e-3;
  sch.epochs = 12;
  sch.batch = 8;
  sch.mixup = false;
  sch.eval_each_epoch = true;
  const auto r = vb::train_alignment(enc, s.data, sch);
  for (int e = 1; e <= 5; ++e) EXPECT_LT(r.eval_loss[e], r.eval_loss[e - 1]) << "epoch " << e;
  EXPECT_LT(r.eval_loss.back(), 0.25 * r.eval_loss.front());
}

TEST(Training, ZeroLearningRateKeepsParameters) {
  auto s = small_dataset();
  vb::Encoder<float> enc(s.config, 1);
  const auto before = vb::acceptance::store_digest(enc.params());
  vb::TrainSchedule sch;
  sch.lr = 0.0;
  sch.epochs = 1;
  vb::train_alignment(enc, s.data, sch);
  EXPECT_EQ(vb::acceptance::store_digest(enc.params()), before);
}

TEST(Training, SameSeedSameCheckpoint) {
  auto s = small_dataset();
  const auto root = fs::temp_directory_path() / "vb_test_enc_det";
  fs::remove_all(root);
  for (int run = 0; run < 2; ++run) {
    vb::Encoder<float> enc(s.config, 2);
    vb::TrainSchedule sch;
    sch.epochs = 2;
    sch.batch = 8;
    vb::train_alignment(enc, s.data, sch);
    enc.save(root / std::to_string(run));
  }
  for (const auto& e : fs::directory_iterator(root / "0"))
    EXPECT_EQ(vb::io::read_file(e.path()), vb::io::read_file(root / "1" / e.path().filename())) << e.path();
}

TEST(Checkpoint, SaveLoadForwardIsBitExact) {
  auto s = small_dataset();
  vb::Encoder<float> enc(s.config, 3);
  const auto dir = fs::temp_directory_path() / "vb_test_enc_ckpt";
  fs::remove_all(dir);
  enc.save(dir);
  const auto back = vb::Encoder<float>::load(dir);
  EXPECT_TRUE(back.forward(s.data.signals[0]).pred_c == enc.forward(s.data.signals[0]).pred_c);
  EXPECT_EQ(back.config().hidden, s.config.hidden);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "config.json"));
}
