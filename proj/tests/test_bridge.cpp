#include <algorithm>
#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "voxelbridge/acceptance.hpp"
#include "voxelbridge/bridge.hpp"
#include "voxelbridge/localizer.hpp"

namespace vb = voxelbridge;

namespace {

const std::string kLetters = "abcdefghijklmnopqrstuvwxyz .?[]<>:\"";

vb::BridgeConfig small_config(const vb::Tokenizer& tok, int enc_hidden = 8) {
  vb::BridgeConfig c;
  c.enc_hidden = enc_hidden;
  c.proj_hidden = 16;
  c.lm.vocab = tok.vocab_size();
  c.lm.layers = 1;
  c.lm.width = 32;
  c.lm.heads = 2;
  c.lm.context = 96;
  return c;
}

vb::ad::Matrix<float> random_rows(int rows, int cols, std::uint64_t seed) {
  vb::Rng rng(seed);
  vb::ad::Matrix<float> m(rows, cols);
  for (auto i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

vb::BridgeSample sample(const std::string& instruction, const std::string& answer, std::uint64_t seed, int rows = 3) {
  return {random_rows(rows, 8, seed), vb::make_single_turn("s" + std::to_string(seed), vb::TaskKind::brief, instruction, answer)};
}

vb::BridgeSchedule schedule(double lr, int epochs, int batch = 4) {
  vb::BridgeSchedule s;
  s.lr = lr;
  s.epochs = epochs;
  s.batch = batch;
  s.seed = 3;
  return s;
}

}  // namespace

TEST(SequencePlan, SingleTurnLayout) {
  const auto tok = vb::Tokenizer::bytes();
  const auto rec = vb::make_single_turn("s", vb::TaskKind::brief, "abcde", "xyz");
  const auto plan = vb::plan_sequence(tok, rec, 10);
  const std::size_t framing = vb::kHumanTag.size() + vb::kBotTag.size() + 1;  // tags plus the space after [image]
  EXPECT_EQ(plan.size(), framing + 5 + 10 + 3 + 1);
  EXPECT_EQ(plan.masked(), 4u);
  for (std::size_t p = 0; p < plan.size(); ++p) EXPECT_EQ(plan.loss_mask[p], p + 4 >= plan.size() ? 1 : 0);
  EXPECT_EQ(plan.ids.back(), tok.eot());
  EXPECT_EQ(std::count(plan.ids.begin(), plan.ids.end(), -1), 10);
}

TEST(SequencePlan, EmptyAnswerMasksOnlyTerminator) {
  const auto tok = vb::Tokenizer::bytes();
  const auto plan = vb::plan_sequence(tok, vb::make_single_turn("s", vb::TaskKind::brief, "q", ""), 2);
  EXPECT_EQ(plan.masked(), 1u);
  EXPECT_EQ(plan.loss_mask.back(), 1);
}

TEST(SequencePlan, TwoTurnsMaskBothAnswers) {
  const auto tok = vb::Tokenizer::bytes();
  auto rec = vb::make_single_turn("s", vb::TaskKind::dialogue, "what?", "AA");
  rec.turns.push_back({vb::Role::human, "and?"});
  rec.turns.push_back({vb::Role::bot, "BBB"});
  const auto plan = vb::plan_sequence(tok, rec, 1);
  EXPECT_EQ(plan.masked(), 2u + 1u + 3u + 1u);
  std::string masked;
  for (std::size_t p = 0; p < plan.size(); ++p)
    if (plan.loss_mask[p] && plan.ids[p] != tok.eot()) masked.push_back(static_cast<char>(plan.ids[p]));
  EXPECT_EQ(masked, "AABBB");
  auto broken = rec;
  broken.turns[0].text = "no placeholder";
  EXPECT_THROW(vb::plan_sequence(tok, broken, 1), vb::Error);
}

TEST(Objective, UniformModelGivesLogVocab) {
  const auto tok = vb::Tokenizer::alphabet("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ01234567");
  ASSERT_EQ(tok.vocab_size(), 64);
  vb::Bridge<float> b(small_config(tok), tok, 1);
  b.lm().make_uniform();
  EXPECT_NEAR(vb::bridge_loss(b, sample("describe.", "a dog", 4)), std::log(64.0), 1e-3);
}

TEST(Objective, PerfectPredictionGivesZero) {
  vb::ad::Graph<double> g;
  vb::ad::Matrix<double> logits = vb::ad::Matrix<double>::Zero(3, 5);
  logits(0, 2) = logits(1, 4) = logits(2, 0) = 1e4;
  const auto l = vb::ad::cross_entropy(g, g.input(logits), {{0, 2}, {1, 4}, {2, 0}});
  EXPECT_EQ(g.value(l)(0, 0), 0.0);
}

TEST(Objective, PositionInsensitiveModelIgnoresFmriCount) {
  const auto tok = vb::Tokenizer::bytes();
  vb::Bridge<double> b(small_config(tok), tok, 2);
  b.lm().make_position_insensitive();
  const auto s = sample("describe the image.", "a red bus", 5, 3);
  vb::BridgeSample doubled = s;
  doubled.penultimate.resize(6, 8);
  doubled.penultimate << s.penultimate, s.penultimate;
  EXPECT_NEAR(vb::bridge_loss(b, s), vb::bridge_loss(b, doubled), 1e-5);
}

TEST(Objective, QuestionRowsGetNoGradient) {
  const auto tok = vb::Tokenizer::bytes();
  vb::Bridge<float> b(small_config(tok), tok, 3);
  vb::ad::Graph<float> g;
  const auto lg = b.loss_graph(g, sample("describe the image.", "a cat", 6));
  g.backward(lg.loss);
  const auto& grad = g.grad(lg.logits);
  std::vector<bool> picked(lg.plan.size(), false);
  for (const auto& [row, target] : vb::Bridge<float>::picks(lg.plan)) picked[row] = true;
  int answer_rows = 0;
  for (auto row = 0; row < grad.rows(); ++row) {
    if (picked[row]) {
      ++answer_rows;
      EXPECT_GT(grad.row(row).cwiseAbs().maxCoeff(), 0.0f);
    } else {
      EXPECT_EQ(grad.row(row).cwiseAbs().maxCoeff(), 0.0f) << "row " << row;
    }
  }
  EXPECT_EQ(answer_rows, 6);
}

TEST(Training, StageOneFreezesLanguageModel) {
  const auto tok = vb::Tokenizer::bytes();
  vb::Bridge<float> b(small_config(tok), tok, 4);
  const auto lm = vb::acceptance::store_digest(b.lm().params());
  const auto proj = vb::acceptance::store_digest(b.projector());
  vb::train_bridge(b, {sample("describe.", "a cat", 7), sample("describe.", "a dog", 8)}, 1, schedule(1e-3, 2));
  EXPECT_EQ(vb::acceptance::store_digest(b.lm().params()), lm);
  EXPECT_NE(vb::acceptance::store_digest(b.projector()), proj);
  EXPECT_EQ(b.stage(), 1);
}

TEST(Training, ZeroLearningRateChangesNothing) {
  const auto tok = vb::Tokenizer::bytes();
  vb::Bridge<float> b(small_config(tok), tok, 5);
  const auto lm = vb::acceptance::store_digest(b.lm().params());
  const auto proj = vb::acceptance::store_digest(b.projector());
  vb::train_bridge(b, {sample("describe.", "a cat", 9)}, 2, schedule(0.0, 2));
  EXPECT_EQ(vb::acceptance::store_digest(b.lm().params()), lm);
  EXPECT_EQ(vb::acceptance::store_digest(b.projector()), proj);
}

TEST(Training, ExternalModelRefusesStageTwo) {
  const auto tok = vb::Tokenizer::bytes();
  auto c = small_config(tok);
  c.lm_adapter = "some-hosted-model";
  vb::Bridge<float> b(c, tok, 6);
  try {
    vb::train_bridge(b, {sample("describe.", "a cat", 10)}, 2, schedule(1e-3, 1));
    FAIL();
  } catch (const vb::Error& e) {
    EXPECT_EQ(e.kind(), vb::ErrorKind::capability);
  }
}

TEST(Training, OverfitsSixteenConversations) {
  const auto tok = vb::Tokenizer::alphabet(kLetters);
  const char* words[] = {"cat", "dog", "bus", "owl", "elk", "yak", "ram", "cow",
                         "bee", "ant", "fox", "hen", "pig", "rat", "emu", "gnu"};
  std::vector<vb::BridgeSample> samples;
  for (int i = 0; i < 16; ++i) samples.push_back(sample("what?", words[i], 100 + i));
  vb::Bridge<float> b(small_config(tok), tok, 7);
  vb::train_bridge(b, samples, 1, schedule(3e-3, 2));
  const auto r = vb::train_bridge(b, samples, 2, schedule(3e-3, 150));
  EXPECT_GE(r.final_accuracy, 0.99);
}

TEST(Generation, OverfitCaptionIsEmittedVerbatim) {
  const auto tok = vb::Tokenizer::alphabet(kLetters);
  const std::string caption = "a zebra in a field";
  const auto s = sample("Describe the image concisely.", caption, 11);
  vb::Bridge<float> b(small_config(tok), tok, 8);
  vb::train_bridge(b, {s}, 2, schedule(3e-3, 120, 1));
  EXPECT_EQ(b.generate(s.penultimate, "Describe the image concisely.", 40), caption);
  EXPECT_EQ(b.generate(s.penultimate, "Describe the image concisely.", 40),
            b.generate(s.penultimate, "Describe the image concisely.", 40));
  EXPECT_EQ(b.generate(s.penultimate, "Describe the image concisely.", 0), "");
}

TEST(Generation, FreeFormConceptThroughBridge) {
  const auto tok = vb::Tokenizer::alphabet(kLetters);
  const auto s = sample("where is the train?", "train", 12);
  vb::Bridge<float> b(small_config(tok), tok, 9);
  vb::train_bridge(b, {s}, 2, schedule(3e-3, 80, 1));
  EXPECT_EQ(vb::extract_concept("where is the train?", &b, &s.penultimate), "train");
  EXPECT_EQ(vb::extract_concept("Locating the concept of \"zebra\""), "zebra");
  EXPECT_THROW(vb::extract_concept("where is the train?"), vb::Error);
}

TEST(Checkpoint, BridgeRoundTrip) {
  const auto tok = vb::Tokenizer::bytes();
  vb::Bridge<float> b(small_config(tok), tok, 10);
  b.set_stage(2);
  const auto dir = std::filesystem::temp_directory_path() / "vb_test_bridge_ckpt";
  std::filesystem::remove_all(dir);
  b.save(dir);
  auto back = vb::Bridge<float>::load(dir);
  EXPECT_EQ(back.stage(), 2);
  EXPECT_EQ(vb::acceptance::store_digest(back.lm().params()), vb::acceptance::store_digest(b.lm().params()));
  EXPECT_EQ(vb::acceptance::store_digest(back.projector()), vb::acceptance::store_digest(b.projector()));
}

TEST(InstructionData, BriefOnlyDrawsFromTable) {
  vb::StimulusTargets t;
  t.stimulus_id = "stim1";
  t.captions = {"a dog in a park", "a dog runs"};
  t.objects = {"dog"};
  const auto recs = vb::build_instruction_dataset({t}, vb::TemplateSet::standard().only({vb::TaskKind::brief}), 4);
  ASSERT_EQ(recs.size(), 1u);
  const auto& q = recs[0].turns[0].text;
  const auto& table = vb::brief_instructions();
  EXPECT_NE(std::find(table.begin(), table.end(), q.substr(std::string(vb::kImagePlaceholder).size() + 1)), table.end());
  EXPECT_EQ(recs[0].turns[1].text, "a dog in a park");
}

TEST(InstructionData, LocalizationSubstitution) {
  EXPECT_EQ(vb::fill_object(vb::localization_instructions().front(), "zebra"), "Locating the concept of \"zebra\"");
  vb::StimulusTargets t;
  t.stimulus_id = "stim2";
  t.captions = {"x"};
  t.objects = {"zebra"};
  const auto recs = vb::build_instruction_dataset({t}, vb::TemplateSet::standard().only({vb::TaskKind::concept_loc}), 1);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].turns[0].text, "[image] Locating the concept of \"zebra\"");
  EXPECT_EQ(recs[0].turns[1].text, "zebra");
}

TEST(InstructionData, Errors) {
  vb::TemplateSet empty;
  empty.by_kind[vb::TaskKind::brief] = {};
  EXPECT_THROW(vb::build_instruction_dataset({}, empty, 1), vb::Error);
  vb::StimulusTargets t;
  t.stimulus_id = "nocap";
  std::size_t skipped = 0;
  EXPECT_TRUE(vb::build_instruction_dataset({t}, vb::TemplateSet::standard(), 1, &skipped).empty());
  EXPECT_EQ(skipped, 1u);
}

TEST(LocalizationParse, EscapedQuote) {
  EXPECT_EQ(vb::parse_localization("Locating the concept of \"say \\\"hi\\\"\""), "say \"hi\"");
}
