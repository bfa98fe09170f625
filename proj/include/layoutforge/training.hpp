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

#pragma once

// Masked-attribute training: L_mask over the masked positions of each
// sequence, Adam with bias correction, global-norm clipping and a
// deterministic batch schedule.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "layoutforge/dataset.hpp"
#include "layoutforge/error.hpp"
#include "layoutforge/layout.hpp"
#include "layoutforge/masking.hpp"
#include "layoutforge/model.hpp"
#include "layoutforge/random.hpp"
#include "layoutforge/tensor.hpp"

namespace lf {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_epsilon = 1e-8;
  int batch_size = 32;
  int steps = 2000;
  int eval_interval = 200;
  std::uint64_t seed = 0;
  MaskingPolicy policy = MaskingPolicy::hierarchical();
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  bool shuffle_elements = true;

  void validate() const {
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorCode::kInvalidInput,
            "train config: learning rate must be finite and >= 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::kInvalidInput,
            "train config: Adam betas must be in [0,1)");
    require(batch_size >= 1, ErrorCode::kInvalidInput, "train config: batch size must be >= 1");
    require(steps >= 0 && eval_interval >= 1, ErrorCode::kInvalidInput, "train config: bad step counts");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1},       {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},   {"batch_size", c.batch_size}, {"steps", c.steps},
          {"eval_interval", c.eval_interval}, {"seed", c.seed},         {"policy", c.policy.to_string()},
          {"grad_clip", c.grad_clip},         {"shuffle_elements", c.shuffle_elements}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.seed = j.value("seed", c.seed);
  c.policy = MaskingPolicy::parse(j.value("policy", std::string("hierarchical")));
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.shuffle_elements = j.value("shuffle_elements", c.shuffle_elements);
  c.validate();
  return c;
}

// Packs sequences into one [B x S] batch, trimming the all-PAD tail shared by
// every row. Padding never reaches attention keys or the loss, so trimming
// does not change any logit at a non-PAD position.
inline TokenBatch make_batch(std::span<const TokenSequence> seqs) {
  require(!seqs.empty(), ErrorCode::kContract, "make_batch: no sequences");
  std::size_t len = 0;
  for (const auto& s : seqs) len = std::max(len, static_cast<std::size_t>(s.content_length()));
  TokenBatch batch;
  batch.batch = seqs.size();
  batch.seq_len = len;
  batch.ids.reserve(seqs.size() * len);
  batch.valid.reserve(seqs.size() * len);
  for (const auto& s : seqs) {
    for (std::size_t i = 0; i < len; ++i) {
      batch.ids.push_back(s.ids[i]);
      batch.valid.push_back(s.slots[i].kind != SlotKind::kPad);
    }
  }
  return batch;
}

// -(1/|M|) sum_{i in M} log p(l_i | l^M) for logits [S x V] of one sequence
// (rows starting at `row_offset`). `targets` may hold entries outside M; they
// contribute nothing.
template <typename T>
Tensor<T> masked_loss(Tape<T>& tape, Tensor<T> logits, const std::map<int, int>& targets,
                      std::span<const int> masked_positions, std::size_t row_offset = 0) {
  require(!masked_positions.empty(), ErrorCode::kContract, "masked_loss: no masked positions");
  std::vector<int> tgt(logits.dim(0), 0);
  std::vector<T> weights(logits.dim(0), T(0));
  const T w = T(1) / static_cast<T>(masked_positions.size());
  for (int pos : masked_positions) {
    const auto it = targets.find(pos);
    require(it != targets.end(), ErrorCode::kContract,
            "masked_loss: masked position " + std::to_string(pos) + " has no target");
    const std::size_t row = row_offset + static_cast<std::size_t>(pos);
    require(row < logits.dim(0), ErrorCode::kContract, "masked_loss: position outside logits");
    tgt[row] = it->second;
    weights[row] += w;
  }
  return weighted_cross_entropy<T>(tape, logits, tgt, weights);
}

// Masked loss where M is exactly the target map's key set.
template <typename T>
Tensor<T> masked_loss(Tape<T>& tape, Tensor<T> logits, const std::map<int, int>& targets,
                      std::size_t row_offset = 0) {
  std::vector<int> positions;
  for (const auto& [pos, id] : targets) positions.push_back(pos);
  return masked_loss<T>(tape, logits, targets, positions, row_offset);
}

// Batch loss: mean over sequences of each sequence's masked loss.
template <typename T>
Tensor<T> batch_masked_loss(Tape<T>& tape, Tensor<T> logits, std::span<const MaskedSequence> masked,
                            std::size_t seq_len) {
  std::vector<int> tgt(logits.dim(0), 0);
  std::vector<T> weights(logits.dim(0), T(0));
  const T per_seq = T(1) / static_cast<T>(masked.size());
  for (std::size_t b = 0; b < masked.size(); ++b) {
    require(!masked[b].targets.empty(), ErrorCode::kContract, "masked_loss: no masked positions");
    const T w = per_seq / static_cast<T>(masked[b].targets.size());
    for (const auto& [pos, id] : masked[b].targets) {
      const std::size_t row = b * seq_len + static_cast<std::size_t>(pos);
      tgt[row] = id;
      weights[row] = w;
    }
  }
  return weighted_cross_entropy<T>(tape, logits, tgt, weights);
}

template <typename T>
struct TrainState {
  ModelParams<T> params;
  std::vector<std::vector<T>> adam_m;  // mirrors params.named()
  std::vector<std::vector<T>> adam_v;
  long step = 0;
  double last_loss = 0.0;
  double last_grad_norm = 0.0;

  explicit TrainState(ModelParams<T> p) : params(std::move(p)) {
    for (const auto& [name, t] : params.named()) {
      adam_m.emplace_back(t.size(), T(0));
      adam_v.emplace_back(t.size(), T(0));
    }
  }
};

namespace detail {

// Element order shuffled once per (epoch, record) as whole attribute blocks.
inline Layout shuffled_elements(const Layout& layout, std::uint64_t seed, long epoch, std::size_t record) {
  Layout out = layout;
  Rng rng(derive_seed(derive_seed(seed, static_cast<std::uint64_t>(epoch) + 1), record));
  shuffle(out.elements, rng);
  return out;
}

}  // namespace detail

// Adam moments for an arbitrary parameter list.
template <typename T>
struct AdamMoments {
  std::vector<std::vector<T>> m, v;
  long step = 0;

  AdamMoments() = default;
  explicit AdamMoments(const std::vector<Tensor<T>>& params) {
    for (const auto& t : params) {
      m.emplace_back(t.size(), T(0));
      v.emplace_back(t.size(), T(0));
    }
  }
};

// One bias-corrected Adam step from the gradients currently held by `params`
// (scaled by `grad_scale`); a tensor with no gradient counts as zero.
// Gradients are cleared afterwards.
template <typename T>
void adam_apply(std::vector<Tensor<T>>& params, std::vector<std::vector<T>>& m, std::vector<std::vector<T>>& v,
                long& step, const TrainConfig& cfg, double grad_scale = 1.0) {
  ++step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i];
    auto& mi = m[i];
    auto& vi = v[i];
    const bool has = t.has_grad();
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double g = has ? static_cast<double>(t.grad()[k]) * grad_scale : 0.0;
      const double mk = cfg.beta1 * static_cast<double>(mi[k]) + (1.0 - cfg.beta1) * g;
      const double vk = cfg.beta2 * static_cast<double>(vi[k]) + (1.0 - cfg.beta2) * g * g;
      mi[k] = static_cast<T>(mk);
      vi[k] = static_cast<T>(vk);
      const double update = cfg.learning_rate * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.adam_epsilon);
      t[k] = static_cast<T>(static_cast<double>(t[k]) - update);
    }
    t.zero_grad();
  }
}

template <typename T>
void adam_update(TrainState<T>& state, const TrainConfig& cfg, double grad_scale = 1.0) {
  auto params = state.params.tensors();
  adam_apply(params, state.adam_m, state.adam_v, state.step, cfg, grad_scale);
}

// Global L2 norm of the gradients held by `params`.
template <typename T>
double grad_norm(const std::vector<Tensor<T>>& params) {
  double sq = 0;
  for (const auto& t : params)
    if (t.has_grad())
      for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sq);
}

// One optimization step on a batch of fully specified sequences. Masks are
// drawn from the configured policy with an RNG derived from (seed, step).
template <typename T>
double train_step(TrainState<T>& state, std::span<const TokenSequence> batch_seqs, const TrainConfig& cfg) {
  require(!batch_seqs.empty(), ErrorCode::kContract, "train_step: empty batch");
  Rng mask_rng(derive_seed(cfg.seed ^ 0x4D41534Bull, static_cast<std::uint64_t>(state.step)));
  std::vector<MaskedSequence> masked;
  std::vector<TokenSequence> inputs;
  masked.reserve(batch_seqs.size());
  for (const auto& seq : batch_seqs) {
    masked.push_back(apply_mask(seq, cfg.policy.sample(seq, mask_rng)));
    inputs.push_back(masked.back().sequence);
  }
  const TokenBatch batch = make_batch(inputs);

  auto named = state.params.named();
  for (auto& [n, t] : named) t.zero_grad();
  Tape<T> tape(true, derive_seed(cfg.seed ^ 0x44524F50ull, static_cast<std::uint64_t>(state.step)));
  Tensor<T> logits = forward(tape, state.params, batch, true);
  Tensor<T> loss = batch_masked_loss<T>(tape, logits, masked, batch.seq_len);
  const double loss_value = static_cast<double>(loss.item());
  tape.backward(loss);

  const double norm = grad_norm(state.params.tensors());
  if (!std::isfinite(loss_value) || !std::isfinite(norm)) {
    fail(ErrorCode::kDivergence, "training diverged at step " + std::to_string(state.step) +
                                     ": loss=" + std::to_string(loss_value) + " lr=" +
                                     std::to_string(cfg.learning_rate) + " grad_norm=" + std::to_string(norm));
  }
  const double clip = (cfg.grad_clip > 0 && norm > cfg.grad_clip) ? cfg.grad_clip / norm : 1.0;
  adam_update(state, cfg, clip);
  state.last_loss = loss_value;
  state.last_grad_norm = norm;
  return loss_value;
}

// Mean per-sequence masked loss with mask draws fixed by `seed`. Does not
// modify parameters.
template <typename T>
double evaluate_loss(const ModelParams<T>& params, const std::vector<Layout>& layouts, const LayoutSchema& schema,
                     const MaskingPolicy& policy, std::uint64_t seed, std::size_t chunk = 64) {
  require(!layouts.empty(), ErrorCode::kInvalidInput, "evaluate_loss: split is empty");
  double total = 0;
  for (std::size_t start = 0; start < layouts.size(); start += chunk) {
    const std::size_t end = std::min(layouts.size(), start + chunk);
    std::vector<MaskedSequence> masked;
    std::vector<TokenSequence> inputs;
    for (std::size_t i = start; i < end; ++i) {
      Rng rng(derive_seed(seed, i));
      const auto seq = tokenize(layouts[i], schema);
      masked.push_back(apply_mask(seq, policy.sample(seq, rng)));
      inputs.push_back(masked.back().sequence);
    }
    const TokenBatch batch = make_batch(inputs);
    Tape<T> tape(false);
    Tensor<T> logits = forward(tape, params, batch, false);
    // batch_masked_loss averages over the chunk; rescale to a sum.
    total += static_cast<double>(batch_masked_loss<T>(tape, logits, masked, batch.seq_len).item()) *
             static_cast<double>(end - start);
  }
  return total / static_cast<double>(layouts.size());
}

struct TrainLogRecord {
  long step = 0;
  double train_loss = 0;
  std::optional<double> eval_loss;
  double lr = 0;
  double wallclock_ms = 0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"step", step}, {"train_loss", train_loss}, {"lr", lr}, {"wallclock_ms", wallclock_ms}};
    j["eval_loss"] = eval_loss ? nlohmann::json(*eval_loss) : nlohmann::json(nullptr);
    return j;
  }
};

// Drives train_step over a training split with a deterministic schedule:
// the epoch permutation and per-record element shuffles are pure functions of
// (seed, epoch), so the batch at any step depends only on (seed, step).
template <typename T>
class Trainer {
 public:
  Trainer(ModelParams<T> params, TrainConfig config, std::vector<Layout> train, LayoutSchema schema)
      : state_(std::move(params)), config_(std::move(config)), train_(std::move(train)), schema_(std::move(schema)) {
    config_.validate();
    require(!train_.empty(), ErrorCode::kInvalidInput, "trainer: training split is empty");
  }

  TrainState<T>& state() { return state_; }
  const TrainState<T>& state() const { return state_; }
  const TrainConfig& config() const { return config_; }
  const LayoutSchema& schema() const { return schema_; }

  std::vector<TokenSequence> batch_at(long step) const {
    std::vector<TokenSequence> out;
    const std::size_t n = train_.size();
    const std::size_t bs = static_cast<std::size_t>(config_.batch_size);
    for (std::size_t j = 0; j < bs; ++j) {
      const std::size_t flat = static_cast<std::size_t>(step) * bs + j;
      const long epoch = static_cast<long>(flat / n);
      const std::size_t pos = flat % n;
      const std::size_t record = permutation(epoch)[pos];
      const Layout& l = train_[record];
      out.push_back(tokenize(config_.shuffle_elements ? detail::shuffled_elements(l, config_.seed, epoch, record) : l,
                             schema_));
    }
    return out;
  }

  double step() {
    const auto batch = batch_at(state_.step);
    return train_step(state_, std::span<const TokenSequence>(batch), config_);
  }

  // Runs until config.steps, logging every eval_interval steps (and at the
  // end). `val` may be empty, in which case eval_loss is omitted.
  void run(const std::vector<Layout>& val, const std::function<void(const TrainLogRecord&)>& on_log = {}) {
    const auto start = std::chrono::steady_clock::now();
    double acc = 0;
    int acc_n = 0;
    while (state_.step < config_.steps) {
      acc += step();
      ++acc_n;
      if (state_.step % config_.eval_interval == 0 || state_.step == config_.steps) {
        TrainLogRecord rec;
        rec.step = state_.step;
        rec.train_loss = acc / acc_n;
        rec.lr = config_.learning_rate;
        if (!val.empty())
          rec.eval_loss = evaluate_loss(state_.params, val, schema_, config_.policy, config_.seed + 1);
        rec.wallclock_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        if (on_log) on_log(rec);
        acc = 0;
        acc_n = 0;
      }
    }
  }

 private:
  const std::vector<std::size_t>& permutation(long epoch) const {
    if (epoch != cached_epoch_) {
      cached_perm_.resize(train_.size());
      std::iota(cached_perm_.begin(), cached_perm_.end(), std::size_t{0});
      Rng rng(derive_seed(config_.seed ^ 0x45504F43ull, static_cast<std::uint64_t>(epoch)));
      shuffle(cached_perm_, rng);
      cached_epoch_ = epoch;
    }
    return cached_perm_;
  }

  TrainState<T> state_;
  TrainConfig config_;
  std::vector<Layout> train_;
  LayoutSchema schema_;
  mutable long cached_epoch_ = -1;
  mutable std::vector<std::size_t> cached_perm_;
};

// Parameters, Adam moments and step counter in one blob file.
template <typename T>
void save_train_state(const std::string& path, const TrainState<T>& state, const TrainConfig& config,
                      nlohmann::json extra_meta = nlohmann::json::object()) {
  Blob blob;
  blob.meta = std::move(extra_meta);
  blob.meta["kind"] = "layout_model";
  blob.meta["checkpoint_version"] = kCheckpointVersion;
  blob.meta["config"] = config_to_json(state.params.config);
  blob.meta["train_config"] = train_config_to_json(config);
  blob.meta["train_step"] = state.step;
  put_params(blob, state.params);
  const auto named = state.params.named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    blob.put_raw<T>("adam.m." + named[i].first, named[i].second.shape(), state.adam_m[i]);
    blob.put_raw<T>("adam.v." + named[i].first, named[i].second.shape(), state.adam_v[i]);
  }
  write_blob(path, blob);
}

template <typename T>
TrainState<T> load_train_state(const std::string& path) {
  auto loaded = load_checkpoint<T>(path);
  TrainState<T> state(std::move(loaded.params));
  state.step = loaded.meta.value("train_step", 0L);
  const auto named = state.params.named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const std::string& n = named[i].first;
    if (!loaded.blob.has("adam.m." + n)) fail(ErrorCode::kCheckpoint, "'" + path + "' has no optimizer state");
    state.adam_m[i] = loaded.blob.at("adam.m." + n).template as<T>();
    state.adam_v[i] = loaded.blob.at("adam.v." + n).template as<T>();
    if (state.adam_m[i].size() != named[i].second.size() || state.adam_v[i].size() != named[i].second.size())
      fail(ErrorCode::kCheckpoint, "optimizer state for '" + n + "' has the wrong size");
  }
  return state;
}

}  // namespace lf
