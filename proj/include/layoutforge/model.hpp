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

// Bidirectional transformer encoder over layout token sequences: token plus
// learned position embeddings, pre-norm attention blocks with full (non
// causal) self-attention over non-PAD keys, a final layer norm and an untied
// per-position vocabulary head.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "layoutforge/blob.hpp"
#include "layoutforge/error.hpp"
#include "layoutforge/random.hpp"
#include "layoutforge/tensor.hpp"

namespace lf {

struct ModelConfig {
  int num_layers = 2;
  int num_heads = 4;
  int embed_dim = 64;
  int ffn_dim = 128;
  int max_seq_len = 42;
  int vocab_size = 41;
  double dropout = 0.1;

  // Full-size configuration.
  static ModelConfig full_scale(int vocab_size, int max_seq_len) {
    return ModelConfig{4, 8, 512, 2048, max_seq_len, vocab_size, 0.1};
  }
  // Desk-scale configuration used for tests and acceptance runs.
  static ModelConfig desk(int vocab_size, int max_seq_len) {
    return ModelConfig{2, 4, 64, 128, max_seq_len, vocab_size, 0.1};
  }

  int head_dim() const { return embed_dim / num_heads; }

  void validate() const {
    require(num_layers >= 1 && num_heads >= 1 && embed_dim >= 1 && ffn_dim >= 1, ErrorCode::kInvalidInput,
            "model config: layer/head/width counts must be positive");
    require(embed_dim % num_heads == 0, ErrorCode::kInvalidInput,
            "model config: embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                std::to_string(num_heads));
    require(max_seq_len >= 7, ErrorCode::kInvalidInput, "model config: max_seq_len must be >= 7");
    require(vocab_size >= 5, ErrorCode::kInvalidInput, "model config: vocab_size too small");
    require(dropout >= 0.0 && dropout < 1.0, ErrorCode::kInvalidInput, "model config: dropout must be in [0,1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"num_heads", c.num_heads}, {"embed_dim", c.embed_dim},
          {"ffn_dim", c.ffn_dim},       {"max_seq_len", c.max_seq_len}, {"vocab_size", c.vocab_size},
          {"dropout", c.dropout}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

template <typename T>
struct LayerParams {
  Tensor<T> ln1_gain, ln1_bias;
  // Keys carry no bias: it would add the same q.b_k to every score of a
  // query, which softmax cancels.
  Tensor<T> wq, bq, wk, wv, bv, wo, bo;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Tensor<T> token_embedding;     // [V x D]
  Tensor<T> position_embedding;  // [max_seq_len x D]
  std::vector<LayerParams<T>> layers;
  Tensor<T> final_gain, final_bias;
  Tensor<T> out_weight, out_bias;  // [D x V], [V]

  // Every learnable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor<T>>> named() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.emplace_back("token_embedding", token_embedding);
    out.emplace_back("position_embedding", position_embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& p = layers[l];
      const std::string pre = "layer" + std::to_string(l) + ".";
      for (auto&& [n, t] : std::initializer_list<std::pair<const char*, const Tensor<T>*>>{
               {"ln1_gain", &p.ln1_gain}, {"ln1_bias", &p.ln1_bias}, {"wq", &p.wq}, {"bq", &p.bq},
               {"wk", &p.wk}, {"wv", &p.wv}, {"bv", &p.bv}, {"wo", &p.wo}, {"bo", &p.bo},
               {"ln2_gain", &p.ln2_gain}, {"ln2_bias", &p.ln2_bias}, {"w1", &p.w1}, {"b1", &p.b1},
               {"w2", &p.w2}, {"b2", &p.b2}})
        out.emplace_back(pre + n, *t);
    }
    out.emplace_back("final_gain", final_gain);
    out.emplace_back("final_bias", final_bias);
    out.emplace_back("out_weight", out_weight);
    out.emplace_back("out_bias", out_bias);
    return out;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (auto& [n, t] : named()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named()) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [n, t] : named()) {
      Tensor<T> handle = t;
      handle.zero_grad();
    }
  }
};

namespace detail {

template <typename T>
Tensor<T> truncated_normal(const Shape& shape, double stddev, Rng& rng) {
  Tensor<T> t(shape, T(0), true);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double z;
    do {
      z = standard_normal(rng);
    } while (std::abs(z) > 2.0);
    t[i] = static_cast<T>(z * stddev);
  }
  return t;
}

template <typename T>
Tensor<T> filled(const Shape& shape, T value) {
  return Tensor<T>(shape, value, true);
}

}  // namespace detail

// Weights ~ truncated normal(0, stddev) clipped at two deviations, biases
// zero, layer-norm gains one. Deterministic in (config, seed).
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed, double stddev = 0.02) {
  config.validate();
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(config.embed_dim);
  const auto f = static_cast<std::size_t>(config.ffn_dim);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  ModelParams<T> p;
  p.config = config;
  p.token_embedding = detail::truncated_normal<T>({v, d}, stddev, rng);
  p.position_embedding = detail::truncated_normal<T>({static_cast<std::size_t>(config.max_seq_len), d}, stddev, rng);
  for (int l = 0; l < config.num_layers; ++l) {
    LayerParams<T> L;
    L.ln1_gain = detail::filled<T>({d}, T(1));
    L.ln1_bias = detail::filled<T>({d}, T(0));
    L.wq = detail::truncated_normal<T>({d, d}, stddev, rng);
    L.bq = detail::filled<T>({d}, T(0));
    L.wk = detail::truncated_normal<T>({d, d}, stddev, rng);
    L.wv = detail::truncated_normal<T>({d, d}, stddev, rng);
    L.bv = detail::filled<T>({d}, T(0));
    L.wo = detail::truncated_normal<T>({d, d}, stddev, rng);
    L.bo = detail::filled<T>({d}, T(0));
    L.ln2_gain = detail::filled<T>({d}, T(1));
    L.ln2_bias = detail::filled<T>({d}, T(0));
    L.w1 = detail::truncated_normal<T>({d, f}, stddev, rng);
    L.b1 = detail::filled<T>({f}, T(0));
    L.w2 = detail::truncated_normal<T>({f, d}, stddev, rng);
    L.b2 = detail::filled<T>({d}, T(0));
    p.layers.push_back(std::move(L));
  }
  p.final_gain = detail::filled<T>({d}, T(1));
  p.final_bias = detail::filled<T>({d}, T(0));
  p.out_weight = detail::truncated_normal<T>({d, v}, stddev, rng);
  p.out_bias = detail::filled<T>({v}, T(0));
  return p;
}

// Allocates fresh tensors with the right shapes (zero-filled), for loading.
template <typename T>
ModelParams<T> empty_params(const ModelConfig& config) {
  return init_params<T>(config, 0, 0.0);
}

// Deep copy, optionally changing precision.
template <typename U, typename T>
ModelParams<U> cast_params(const ModelParams<T>& src) {
  ModelParams<U> dst = empty_params<U>(src.config);
  auto from = src.named();
  auto to = dst.named();
  for (std::size_t i = 0; i < from.size(); ++i) {
    auto& out = to[i].second.values();
    const auto& in = from[i].second.values();
    for (std::size_t k = 0; k < in.size(); ++k) out[k] = static_cast<U>(in[k]);
  }
  return dst;
}

// A flattened batch of token rows: ids and non-PAD flags, both [B x S].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> valid;
};

// Receives per-layer attention probabilities [(B*H) x S x S].
template <typename T>
using AttentionSink = std::vector<Tensor<T>>;

template <typename T>
void validate_batch(const ModelConfig& config, const TokenBatch& batch) {
  require(batch.batch >= 1 && batch.seq_len >= 1, ErrorCode::kShape, "forward: empty batch");
  require(batch.ids.size() == batch.batch * batch.seq_len && batch.valid.size() == batch.ids.size(),
          ErrorCode::kShape, "forward: ids/validity do not match [B x S]");
  if (batch.seq_len > static_cast<std::size_t>(config.max_seq_len))
    fail(ErrorCode::kCapacity, "forward: sequence length " + std::to_string(batch.seq_len) +
                                   " exceeds max_seq_len " + std::to_string(config.max_seq_len));
  for (int id : batch.ids)
    if (id < 0 || id >= config.vocab_size)
      fail(ErrorCode::kVocabulary,
           "forward: token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(config.vocab_size));
}

// Final hidden states [(B*S) x D] after the closing layer norm.
template <typename T>
Tensor<T> encode(Tape<T>& tape, const ModelParams<T>& p, const TokenBatch& batch, bool training,
                 AttentionSink<T>* sink = nullptr) {
  validate_batch<T>(p.config, batch);
  const auto& cfg = p.config;
  const double rate = training ? cfg.dropout : 0.0;
  const std::size_t b = batch.batch, s = batch.seq_len, heads = static_cast<std::size_t>(cfg.num_heads);
  const T attn_scale = T(1) / std::sqrt(static_cast<T>(cfg.head_dim()));

  Tensor<T> x = embedding(tape, p.token_embedding, std::span<const int>(batch.ids));
  x = add_positional(tape, x, p.position_embedding, s);
  x = dropout(tape, x, rate, training);
  for (const auto& L : p.layers) {
    Tensor<T> h = layer_norm(tape, x, L.ln1_gain, L.ln1_bias);
    Tensor<T> q = split_heads(tape, add_bias(tape, matmul(tape, h, L.wq), L.bq), b, s, heads);
    Tensor<T> k = split_heads(tape, matmul(tape, h, L.wk), b, s, heads);
    Tensor<T> v = split_heads(tape, add_bias(tape, matmul(tape, h, L.wv), L.bv), b, s, heads);
    Tensor<T> scores = scale(tape, bmm(tape, q, k, false, true), attn_scale);
    Tensor<T> probs = masked_softmax(tape, scores, std::span<const std::uint8_t>(batch.valid), heads);
    if (sink) sink->push_back(probs);
    probs = dropout(tape, probs, rate, training);
    Tensor<T> ctx = merge_heads(tape, bmm(tape, probs, v), b, heads);
    Tensor<T> attn_out = add_bias(tape, matmul(tape, ctx, L.wo), L.bo);
    x = add(tape, x, dropout(tape, attn_out, rate, training));

    Tensor<T> h2 = layer_norm(tape, x, L.ln2_gain, L.ln2_bias);
    Tensor<T> ff = gelu(tape, add_bias(tape, matmul(tape, h2, L.w1), L.b1));
    ff = add_bias(tape, matmul(tape, ff, L.w2), L.b2);
    x = add(tape, x, dropout(tape, ff, rate, training));
  }
  return layer_norm(tape, x, p.final_gain, p.final_bias);
}

// Vocabulary logits [(B*S) x V]. Rows at PAD positions are computed but
// carry no meaning.
template <typename T>
Tensor<T> forward(Tape<T>& tape, const ModelParams<T>& p, const TokenBatch& batch, bool training = false) {
  Tensor<T> hidden = encode(tape, p, batch, training);
  return add_bias(tape, matmul(tape, hidden, p.out_weight), p.out_bias);
}

// Inference-only forward for a single row; returns logits [S x V].
template <typename T>
Tensor<T> infer_logits(const ModelParams<T>& p, std::span<const int> ids, std::span<const std::uint8_t> valid) {
  TokenBatch batch{1, ids.size(), std::vector<int>(ids.begin(), ids.end()),
                   std::vector<std::uint8_t>(valid.begin(), valid.end())};
  Tape<T> tape(false);
  return forward(tape, p, batch, false);
}

// Attention weights of every layer and head for one sequence, as a tensor of
// shape [L x H x S x S]. Dropout is disabled.
template <typename T>
Tensor<T> export_attention(const ModelParams<T>& p, std::span<const int> ids, std::span<const std::uint8_t> valid) {
  TokenBatch batch{1, ids.size(), std::vector<int>(ids.begin(), ids.end()),
                   std::vector<std::uint8_t>(valid.begin(), valid.end())};
  Tape<T> tape(false);
  AttentionSink<T> sink;
  encode(tape, p, batch, false, &sink);
  const std::size_t layers = sink.size(), heads = static_cast<std::size_t>(p.config.num_heads), s = ids.size();
  Tensor<T> out({layers, heads, s, s});
  for (std::size_t l = 0; l < layers; ++l)
    std::copy(sink[l].values().begin(), sink[l].values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(l * heads * s * s));
  return out;
}

inline constexpr int kCheckpointVersion = 1;

template <typename T>
void put_params(Blob& blob, const ModelParams<T>& p, const std::string& prefix = "") {
  for (const auto& [name, t] : p.named()) blob.put(prefix + name, t);
}

template <typename T>
void read_params(const Blob& blob, ModelParams<T>& p, const std::string& prefix = "") {
  for (auto& [name, t] : p.named()) {
    Tensor<T> handle = t;
    blob.read_into(prefix + name, handle);
  }
}

// Writes model parameters and config. `extra_meta` is merged into the
// metadata (schema, length prior, ...).
template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& p,
                     const nlohmann::json& extra_meta = nlohmann::json::object()) {
  Blob blob;
  blob.meta = extra_meta;
  blob.meta["kind"] = "layout_model";
  blob.meta["checkpoint_version"] = kCheckpointVersion;
  blob.meta["config"] = config_to_json(p.config);
  put_params(blob, p);
  write_blob(path, blob);
}

template <typename T>
struct LoadedModel {
  ModelParams<T> params;
  nlohmann::json meta;
  Blob blob;  // full file contents, for optimizer state and extras
};

// Loads a checkpoint. When `expected_vocab` is given, a config with a
// different vocabulary size is rejected.
template <typename T>
LoadedModel<T> load_checkpoint(const std::string& path, std::optional<int> expected_vocab = std::nullopt) {
  Blob blob = read_blob(path);
  if (blob.meta.value("checkpoint_version", -1) != kCheckpointVersion)
    fail(ErrorCode::kCheckpoint, "'" + path + "' has checkpoint version " +
                                     blob.meta.value("checkpoint_version", nlohmann::json(-1)).dump() +
                                     ", expected " + std::to_string(kCheckpointVersion));
  ModelConfig config;
  try {
    config = config_from_json(blob.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCheckpoint, "'" + path + "' config is malformed: " + e.what());
  }
  if (expected_vocab && *expected_vocab != config.vocab_size)
    fail(ErrorCode::kCheckpoint, "'" + path + "' vocab_size " + std::to_string(config.vocab_size) +
                                     " does not match the schema's vocabulary of " + std::to_string(*expected_vocab));
  ModelParams<T> params = empty_params<T>(config);
  read_params(blob, params);
  return LoadedModel<T>{std::move(params), blob.meta, std::move(blob)};
}

}  // namespace lf
