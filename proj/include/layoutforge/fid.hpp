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

// Feature extractor for the Frechet layout distance: a small transformer
// classifier trained to tell real layouts from position-jittered copies. Its
// mean-pooled final hidden state is the feature vector.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "layoutforge/blob.hpp"
#include "layoutforge/error.hpp"
#include "layoutforge/layout.hpp"
#include "layoutforge/metrics.hpp"
#include "layoutforge/model.hpp"
#include "layoutforge/random.hpp"
#include "layoutforge/training.hpp"

namespace lf {

struct FidConfig {
  int steps = 400;
  int batch_size = 32;  // half real, half jittered
  double learning_rate = 1e-3;
  int jitter_bins = 3;
  int num_layers = 2;
  int num_heads = 4;
  int embed_dim = 64;
  int ffn_dim = 128;
};

// Shifts every x and y bin by an independent uniform integer in
// [-jitter_bins, jitter_bins], clamped to the grid.
inline Layout jitter_positions(const Layout& layout, int num_bins, int jitter_bins, Rng& rng) {
  Layout out = layout;
  for (auto& e : out.elements) {
    require(e.bins.has_value(), ErrorCode::kContract, "jitter: layout is not quantized");
    for (Attr a : {Attr::kX, Attr::kY}) {
      const int b = std::clamp(e.bin(a) + uniform_int(rng, -jitter_bins, jitter_bins), 0, num_bins - 1);
      (*e.bins)[static_cast<std::size_t>(coord_index(a))] = b;
      e.set_coord(a, dequantize(b, num_bins));
    }
  }
  return out;
}

class FidExtractor {
 public:
  FidExtractor(LayoutSchema schema, ModelParams<float> encoder, Tensor<float> head_w, Tensor<float> head_b)
      : schema_(std::move(schema)), encoder_(std::move(encoder)), head_w_(std::move(head_w)), head_b_(std::move(head_b)) {}

  const LayoutSchema& schema() const { return schema_; }
  const ModelParams<float>& encoder() const { return encoder_; }
  int dim() const { return encoder_.config.embed_dim; }

  std::vector<Tensor<float>> tensors() const {
    auto out = encoder_.tensors();
    out.push_back(head_w_);
    out.push_back(head_b_);
    return out;
  }

  // Pooled features and real-class logits for a batch of layouts.
  Tensor<float> pooled(Tape<float>& tape, const TokenBatch& batch, bool training) const {
    Tensor<float> hidden = encode(tape, encoder_, batch, training);
    return masked_mean_pool(tape, hidden, std::span<const std::uint8_t>(batch.valid), batch.batch);
  }
  Tensor<float> classify(Tape<float>& tape, Tensor<float> pooled_features) const {
    return add_bias(tape, matmul(tape, pooled_features, head_w_), head_b_);
  }

  // One feature row per layout.
  Eigen::MatrixXd features(const std::vector<Layout>& layouts, std::size_t chunk = 128) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(layouts.size()), dim());
    for (std::size_t start = 0; start < layouts.size(); start += chunk) {
      const std::size_t end = std::min(layouts.size(), start + chunk);
      const TokenBatch batch = batch_of(layouts, start, end);
      Tape<float> tape(false);
      const Tensor<float> f = pooled(tape, batch, false);
      for (std::size_t i = start; i < end; ++i)
        for (int c = 0; c < dim(); ++c)
          out(static_cast<Eigen::Index>(i), c) = f[(i - start) * static_cast<std::size_t>(dim()) + static_cast<std::size_t>(c)];
    }
    return out;
  }

  // Fraction classified correctly, real layouts as class 1 and fakes as 0.
  double accuracy(const std::vector<Layout>& real, const std::vector<Layout>& fake) const {
    std::size_t correct = 0;
    auto count = [&](const std::vector<Layout>& ls, int label) {
      for (std::size_t start = 0; start < ls.size(); start += 128) {
        const std::size_t end = std::min(ls.size(), start + 128);
        Tape<float> tape(false);
        const Tensor<float> logits = classify(tape, pooled(tape, batch_of(ls, start, end), false));
        for (std::size_t i = 0; i < end - start; ++i) correct += (logits[2 * i + 1] > logits[2 * i]) == (label == 1);
      }
    };
    count(real, 1);
    count(fake, 0);
    return static_cast<double>(correct) / static_cast<double>(real.size() + fake.size());
  }

  TokenBatch batch_of(const std::vector<Layout>& layouts, std::size_t start, std::size_t end) const {
    std::vector<TokenSequence> seqs;
    for (std::size_t i = start; i < end; ++i) seqs.push_back(tokenize(layouts[i], schema_));
    return make_batch(seqs);
  }

  void save(const std::string& path) const {
    Blob blob;
    blob.meta["kind"] = "fid_extractor";
    blob.meta["checkpoint_version"] = kCheckpointVersion;
    blob.meta["config"] = config_to_json(encoder_.config);
    blob.meta["schema"] = schema_to_json(schema_);
    put_params(blob, encoder_);
    blob.put("head_w", head_w_);
    blob.put("head_b", head_b_);
    write_blob(path, blob);
  }

  static FidExtractor load(const std::string& path) {
    Blob blob = read_blob(path);
    if (blob.meta.value("kind", std::string()) != "fid_extractor")
      fail(ErrorCode::kCheckpoint, "'" + path + "' is not a feature extractor checkpoint");
    ModelParams<float> enc = empty_params<float>(config_from_json(blob.meta.at("config")));
    read_params(blob, enc);
    Tensor<float> w({static_cast<std::size_t>(enc.config.embed_dim), 2}, 0.0f, true);
    Tensor<float> b({2}, 0.0f, true);
    blob.read_into("head_w", w);
    blob.read_into("head_b", b);
    return FidExtractor(schema_from_json(blob.meta.at("schema")), std::move(enc), std::move(w), std::move(b));
  }

 private:
  LayoutSchema schema_;
  ModelParams<float> encoder_;
  Tensor<float> head_w_, head_b_;
};

// Trains the real-vs-jittered classifier on `train`. Each step draws
// batch_size/2 real layouts and jitters another batch_size/2.
inline FidExtractor train_fid_extractor(const std::vector<Layout>& train, const LayoutSchema& schema,
                                        std::uint64_t seed, const FidConfig& cfg = {}) {
  require(!train.empty(), ErrorCode::kInvalidInput, "fid extractor: training split is empty");
  ModelConfig mc;
  mc.num_layers = cfg.num_layers;
  mc.num_heads = cfg.num_heads;
  mc.embed_dim = cfg.embed_dim;
  mc.ffn_dim = cfg.ffn_dim;
  mc.vocab_size = Vocab(schema).size();
  mc.max_seq_len = schema.max_seq_len();
  Rng init(derive_seed(seed, 1));
  FidExtractor ex(schema, init_params<float>(mc, derive_seed(seed, 2)),
                  detail::truncated_normal<float>({static_cast<std::size_t>(mc.embed_dim), 2}, 0.02, init),
                  Tensor<float>({2}, 0.0f, true));
  auto params = ex.tensors();
  AdamMoments<float> adam(params);
  TrainConfig tc;
  tc.learning_rate = cfg.learning_rate;
  Rng rng(derive_seed(seed, 3));
  const int half = std::max(1, cfg.batch_size / 2);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Layout> layouts;
    std::vector<int> labels;
    for (int i = 0; i < half; ++i) {
      layouts.push_back(train[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(train.size()) - 1))]);
      labels.push_back(1);
    }
    for (int i = 0; i < half; ++i) {
      const Layout& src = train[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(train.size()) - 1))];
      layouts.push_back(jitter_positions(src, schema.num_bins, cfg.jitter_bins, rng));
      labels.push_back(0);
    }
    const TokenBatch batch = ex.batch_of(layouts, 0, layouts.size());
    Tape<float> tape(true, derive_seed(seed ^ 0x464944ull, static_cast<std::uint64_t>(step)));
    const Tensor<float> logits = ex.classify(tape, ex.pooled(tape, batch, true));
    const std::vector<std::uint8_t> all(labels.size(), 1);
    const Tensor<float> loss = cross_entropy<float>(tape, logits, labels, all);
    const double value = loss.item();
    tape.backward(loss);
    const double norm = grad_norm(params);
    if (!std::isfinite(value) || !std::isfinite(norm))
      fail(ErrorCode::kDivergence, "fid extractor training diverged at step " + std::to_string(step) +
                                       ": loss=" + std::to_string(value) + " lr=" + std::to_string(cfg.learning_rate) +
                                       " grad_norm=" + std::to_string(norm));
    adam_apply(params, adam.m, adam.v, adam.step, tc, norm > 1.0 ? 1.0 / norm : 1.0);
  }
  return ex;
}

}  // namespace lf
