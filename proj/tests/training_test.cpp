/* Copyright 2026 The LayoutForge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cmath>
#include <cstring>
#include <vector>

#include <gtest/gtest.h>

#include "layoutforge/training.hpp"

namespace lf {
namespace {

const LayoutSchema& ui_schema() {
  static const LayoutSchema s = synthetic_schema();
  return s;
}

ModelConfig desk_config() { return ModelConfig::desk(Vocab(ui_schema()).size(), ui_schema().max_seq_len()); }

std::vector<TokenSequence> tokenize_all(const std::vector<Layout>& layouts, std::size_t n) {
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < n && i < layouts.size(); ++i) out.push_back(tokenize(layouts[i], ui_schema()));
  return out;
}

bool same_params(const ModelParams<float>& a, const ModelParams<float>& b) {
  const auto na = a.named(), nb = b.named();
  for (std::size_t i = 0; i < na.size(); ++i)
    if (std::memcmp(na[i].second.data(), nb[i].second.data(), na[i].second.size() * sizeof(float)) != 0) return false;
  return true;
}

TEST(MaskedLossTest, UniformLogitsGiveLogVocab) {
  Tape<double> tape(false);
  Tensor<double> logits({7, 41}, 0.0);
  const double loss = masked_loss<double>(tape, logits, {{3, 20}}).item();
  EXPECT_NEAR(loss, std::log(41.0), 1e-12);
  EXPECT_NEAR(loss, 3.7136, 1e-4);
}

TEST(MaskedLossTest, ConfidentCorrectLogitsApproachZero) {
  Tape<double> tape(false);
  Tensor<double> logits({5, 41}, 0.0);
  const std::map<int, int> targets = {{1, 10}, {3, 30}};
  for (const auto& [pos, id] : targets) logits[static_cast<std::size_t>(pos) * 41 + static_cast<std::size_t>(id)] = 20.0;
  EXPECT_LT(masked_loss<double>(tape, logits, targets).item(), 1e-6);
}

TEST(MaskedLossTest, UnmaskedPositionsContributeNothing) {
  Rng rng(1);
  Tensor<double> logits({6, 41}, 0.0, true);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = standard_normal(rng);
  Tape<double> tape;
  const auto loss = masked_loss<double>(tape, logits, {{2, 7}, {4, 9}});
  const double before = loss.item();
  tape.backward(loss);
  for (std::size_t r : {0u, 1u, 3u, 5u})
    for (std::size_t c = 0; c < 41; ++c) EXPECT_EQ(logits.grad()[r * 41 + c], 0.0);
  // Changing logits at unmasked rows (where a target would sit) leaves the value alone.
  Tensor<double> changed = logits.clone();
  for (std::size_t c = 0; c < 41; ++c) changed[1 * 41 + c] += 5.0 * standard_normal(rng);
  Tape<double> t2(false);
  EXPECT_EQ(masked_loss<double>(t2, changed, {{2, 7}, {4, 9}}).item(), before);
}

TEST(MaskedLossTest, EmptyMaskIsAContractError) {
  Tape<double> tape(false);
  Tensor<double> logits({3, 41}, 0.0);
  try {
    masked_loss<double>(tape, logits, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kContract);
  }
}

TEST(MaskedLossTest, UnmaskedTargetTokensDoNotChangeLoss) {
  const auto corpus = generate_synthetic(8, 2);
  const auto params = init_params<double>(desk_config(), 3, 0.2);
  const auto seq = tokenize(corpus.train.front(), ui_schema());
  Rng rng(4);
  const auto plan = sample_hierarchical(seq, rng, Group::kPosition);
  const auto masked = apply_mask(seq, plan);
  std::map<int, int> dense;
  for (int p : seq.attr_positions()) dense[p] = seq.ids[static_cast<std::size_t>(p)];
  const std::vector<TokenSequence> in{masked.sequence};
  const auto batch = make_batch(in);
  Tape<double> tape(false);
  const auto logits = forward(tape, params, batch);
  const double base = masked_loss<double>(tape, logits, dense, plan.positions()).item();
  EXPECT_EQ(base, masked_loss<double>(tape, logits, masked.targets).item());
  for (int p : seq.attr_positions()) {
    if (masked.targets.count(p)) continue;
    auto perturbed = dense;
    perturbed[p] = perturbed[p] == 20 ? 21 : 20;
    EXPECT_EQ(masked_loss<double>(tape, logits, perturbed, plan.positions()).item(), base) << p;
  }
  auto missing = dense;
  missing.erase(plan.positions().front());
  EXPECT_THROW(masked_loss<double>(tape, logits, missing, plan.positions()), Error);
}

TEST(AdamTest, ZeroGradientLeavesParametersUnchanged) {
  TrainState<float> state(init_params<float>(desk_config(), 5));
  const auto before = cast_params<float>(state.params);
  TrainConfig cfg;
  adam_update(state, cfg);
  EXPECT_TRUE(same_params(before, state.params));
  EXPECT_EQ(state.step, 1);
  for (const auto& m : state.adam_m)
    for (float v : m) ASSERT_EQ(v, 0.0f);
}

TEST(AdamTest, FirstStepMovesEachWeightByLearningRate) {
  TrainState<double> state(init_params<double>(desk_config(), 6));
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  const double before = state.params.out_bias[3];
  state.params.out_bias.grad_buffer()[3] = -0.5;
  adam_update(state, cfg);
  // Bias-corrected first step: m_hat = g, v_hat = g^2, so the update is lr * sign(g).
  EXPECT_NEAR(state.params.out_bias[3] - before, 0.01, 1e-9);
}

TEST(TrainStepTest, ZeroLearningRateKeepsParameters) {
  const auto corpus = generate_synthetic(64, 7);
  TrainState<float> state(init_params<float>(desk_config(), 8));
  const auto before = cast_params<float>(state.params);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  const auto batch = tokenize_all(corpus.train, 16);
  const double loss = train_step(state, std::span<const TokenSequence>(batch), cfg);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_TRUE(same_params(before, state.params));
  EXPECT_EQ(state.step, 1);
}

TEST(TrainStepTest, EmptyBatchIsAContractError) {
  TrainState<float> state(init_params<float>(desk_config(), 8));
  std::vector<TokenSequence> none;
  EXPECT_THROW(train_step(state, std::span<const TokenSequence>(none), TrainConfig{}), Error);
}

TEST(TrainStepTest, NonFiniteLossReportsDivergence) {
  const auto corpus = generate_synthetic(16, 7);
  TrainState<float> state(init_params<float>(desk_config(), 8));
  state.params.out_bias[10] = std::numeric_limits<float>::quiet_NaN();
  const auto batch = tokenize_all(corpus.train, 4);
  try {
    train_step(state, std::span<const TokenSequence>(batch), TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 0"), std::string::npos);
    EXPECT_NE(msg.find("lr="), std::string::npos);
    EXPECT_NE(msg.find("grad_norm="), std::string::npos);
  }
}

TEST(TrainerTest, SameSeedSameTrajectory) {
  const auto corpus = generate_synthetic(200, 9);
  TrainConfig cfg;
  cfg.seed = 10;
  cfg.batch_size = 8;
  auto run = [&]() {
    Trainer<float> trainer(init_params<float>(desk_config(), 11), cfg, corpus.train, ui_schema());
    std::vector<double> losses;
    for (int i = 0; i < 6; ++i) losses.push_back(trainer.step());
    return losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainerTest, BatchScheduleDependsOnlyOnStep) {
  const auto corpus = generate_synthetic(50, 12);
  TrainConfig cfg;
  cfg.batch_size = 16;
  Trainer<float> a(init_params<float>(desk_config(), 1), cfg, corpus.train, ui_schema());
  Trainer<float> b(init_params<float>(desk_config(), 1), cfg, corpus.train, ui_schema());
  for (long s : {0L, 5L, 2L, 5L}) EXPECT_EQ(a.batch_at(s), b.batch_at(s));
  // Every record appears once per epoch.
  const std::size_t n = corpus.train.size();
  TrainConfig one;
  one.batch_size = static_cast<int>(n);
  one.shuffle_elements = false;
  Trainer<float> c(init_params<float>(desk_config(), 1), one, corpus.train, ui_schema());
  auto epoch = c.batch_at(0);
  auto expected = tokenize_all(corpus.train, n);
  auto key = [](const TokenSequence& s) { return s.ids; };
  std::vector<std::vector<int>> ea, eb;
  for (const auto& s : epoch) ea.push_back(key(s));
  for (const auto& s : expected) eb.push_back(key(s));
  std::sort(ea.begin(), ea.end());
  std::sort(eb.begin(), eb.end());
  EXPECT_EQ(ea, eb);
}

TEST(TrainerTest, ElementShuffleMovesWholeBlocks) {
  const auto corpus = generate_synthetic(40, 13);
  TrainConfig cfg;
  cfg.batch_size = static_cast<int>(corpus.train.size());
  Trainer<float> t(init_params<float>(desk_config(), 1), cfg, corpus.train, ui_schema());
  const auto batch = t.batch_at(0);
  bool any_moved = false;
  for (const auto& seq : batch) {
    // Each 5-token block must equal one of the source layout's element blocks.
    const Layout l = detokenize(seq, ui_schema());
    const auto original = std::find_if(corpus.train.begin(), corpus.train.end(), [&](const Layout& src) {
      if (src.elements.size() != l.elements.size()) return false;
      return std::is_permutation(src.elements.begin(), src.elements.end(), l.elements.begin(),
                                 [](const Element& a, const Element& b) {
                                   return a.category == b.category && a.bins == b.bins;
                                 });
    });
    ASSERT_NE(original, corpus.train.end());
    if (original->elements.front().category != l.elements.front().category) any_moved = true;
  }
  EXPECT_TRUE(any_moved);
}

TEST(EvaluateTest, UntrainedModelIsNearUniform) {
  const auto corpus = generate_synthetic(300, 14);
  const auto params = init_params<float>(desk_config(), 15);
  const double a = evaluate_loss(params, corpus.val, ui_schema(), MaskingPolicy::hierarchical(), 3);
  const double b = evaluate_loss(params, corpus.val, ui_schema(), MaskingPolicy::hierarchical(), 3);
  EXPECT_EQ(a, b);
  EXPECT_NEAR(a, std::log(static_cast<double>(desk_config().vocab_size)), 0.3);
}

TEST(EvaluateTest, ShortTrainingRunBeatsUntrained) {
  const auto corpus = generate_synthetic(400, 16);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.steps = 60;
  cfg.eval_interval = 30;
  cfg.seed = 17;
  Trainer<float> trainer(init_params<float>(desk_config(), 18), cfg, corpus.train, ui_schema());
  const double untrained = evaluate_loss(trainer.state().params, corpus.val, ui_schema(), cfg.policy, 5);
  std::vector<TrainLogRecord> log;
  trainer.run(corpus.val, [&](const TrainLogRecord& r) { log.push_back(r); });
  ASSERT_EQ(log.size(), 2u);
  EXPECT_EQ(log[0].step, 30);
  EXPECT_EQ(log[1].step, 60);
  EXPECT_TRUE(log[1].eval_loss.has_value());
  const auto j = log[1].to_json();
  for (const char* key : {"step", "train_loss", "eval_loss", "lr", "wallclock_ms"}) EXPECT_TRUE(j.contains(key));
  const double trained = evaluate_loss(trainer.state().params, corpus.val, ui_schema(), cfg.policy, 5);
  EXPECT_LT(trained, untrained);
}

TEST(TrainStateTest, CheckpointRoundTripIsBitExact) {
  const auto corpus = generate_synthetic(100, 19);
  TrainConfig cfg;
  cfg.batch_size = 8;
  Trainer<float> trainer(init_params<float>(desk_config(), 20), cfg, corpus.train, ui_schema());
  for (int i = 0; i < 3; ++i) trainer.step();
  const std::string path = testing::TempDir() + "/state.lfm";
  save_train_state(path, trainer.state(), cfg);
  const auto loaded = load_train_state<float>(path);
  EXPECT_EQ(loaded.step, 3);
  EXPECT_TRUE(same_params(loaded.params, trainer.state().params));
  EXPECT_EQ(loaded.adam_m, trainer.state().adam_m);
  EXPECT_EQ(loaded.adam_v, trainer.state().adam_v);

  // Resuming from the checkpoint continues the same trajectory.
  const double next = trainer.step();
  Trainer<float> resumed(cast_params<float>(loaded.params), cfg, corpus.train, ui_schema());
  resumed.state().adam_m = loaded.adam_m;
  resumed.state().adam_v = loaded.adam_v;
  resumed.state().step = loaded.step;
  EXPECT_EQ(resumed.step(), next);
}

TEST(TrainStateTest, PlainModelCheckpointHasNoOptimizerState) {
  const std::string path = testing::TempDir() + "/plain.lfm";
  save_checkpoint(path, init_params<float>(desk_config(), 1));
  try {
    load_train_state<float>(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCheckpoint);
  }
}

TEST(TrainConfigTest, JsonRoundTripAndValidation) {
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.policy = MaskingPolicy::random(0.15);
  const auto again = train_config_from_json(train_config_to_json(cfg));
  EXPECT_DOUBLE_EQ(again.learning_rate, 3e-3);
  EXPECT_EQ(again.policy, cfg.policy);
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.beta2 = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
}

}  // namespace
}  // namespace lf
