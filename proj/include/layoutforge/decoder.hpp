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

// Non-autoregressive decoding by iterative attribute refinement: groups are
// completed one at a time; within a group every unknown slot is predicted in
// parallel and the least confident predictions are re-masked on a shrinking
// schedule.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "layoutforge/dataset.hpp"
#include "layoutforge/error.hpp"
#include "layoutforge/layout.hpp"
#include "layoutforge/model.hpp"
#include "layoutforge/random.hpp"

namespace lf {

struct Predictor {
  enum class Kind { kGreedy, kTopK } kind = Kind::kGreedy;
  int k = 5;

  static Predictor greedy() { return {}; }
  static Predictor top_k(int k) { return {Kind::kTopK, k}; }

  // "greedy" or "topk:<k>".
  static Predictor parse(std::string_view text) {
    if (text == "greedy") return greedy();
    if (text.rfind("topk", 0) == 0) {
      int k = 5;
      if (text.size() > 4) {
        require(text[4] == ':', ErrorCode::kInvalidInput, "predictor: expected topk:<k>");
        try {
          std::size_t used = 0;
          k = std::stoi(std::string(text.substr(5)), &used);
          require(used == text.size() - 5, ErrorCode::kInvalidInput, "predictor: bad k");
        } catch (const std::exception&) {
          fail(ErrorCode::kInvalidInput, "predictor: bad k in '" + std::string(text) + "'", "predictor");
        }
      }
      require(k >= 1, ErrorCode::kInvalidInput, "predictor: k must be >= 1", "predictor");
      return top_k(k);
    }
    fail(ErrorCode::kInvalidInput, "unknown predictor '" + std::string(text) + "'", "predictor");
  }

  std::string to_string() const { return kind == Kind::kGreedy ? "greedy" : "topk:" + std::to_string(k); }
  bool operator==(const Predictor&) const = default;
};

struct DecodeConfig {
  int T = 12;
  std::vector<Group> group_order = {Group::kCategory, Group::kSize, Group::kPosition};
  Predictor predictor = Predictor::greedy();
  std::uint64_t seed = 0;
  bool trace = false;

  // Defaults for generation without conditions: top-k(5) sampling.
  static DecodeConfig unconditional() {
    DecodeConfig c;
    c.predictor = Predictor::top_k(5);
    return c;
  }

  int groups() const { return static_cast<int>(group_order.size()); }
  // T_g = ceil(T / |groups|).
  int per_group_budget() const { return (T + groups() - 1) / groups(); }

  void validate(const LayoutSchema& schema) const {
    std::vector<Group> want = schema.present_groups();
    std::vector<Group> have = group_order;
    std::sort(want.begin(), want.end());
    std::sort(have.begin(), have.end());
    require(have == want, ErrorCode::kInvalidInput,
            "group order '" + group_order_string(group_order) + "' is not a permutation of the schema's groups",
            "group_order");
    require(T >= groups(), ErrorCode::kInvalidInput,
            "T=" + std::to_string(T) + " is smaller than the number of groups", "T");
  }
};

inline json decode_config_to_json(const DecodeConfig& c) {
  return {{"T", c.T},
          {"group_order", group_order_string(c.group_order)},
          {"predictor", c.predictor.to_string()},
          {"seed", c.seed},
          {"trace", c.trace}};
}

// Applies overrides {T, group_order, predictor, seed, trace} on top of `base`.
inline DecodeConfig decode_config_from_json(const json& j, DecodeConfig base = {}) {
  try {
    if (j.contains("T")) base.T = j.at("T").get<int>();
    if (j.contains("group_order")) base.group_order = parse_group_order(j.at("group_order").get<std::string>());
    if (j.contains("predictor")) base.predictor = Predictor::parse(j.at("predictor").get<std::string>());
    if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("trace")) base.trace = j.at("trace").get<bool>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidInput, std::string("decode config: ") + e.what());
  }
  return base;
}

// n_i = floor((T_g - i) / T_g * |g|), evaluated in integers.
inline int remask_count(int per_group_budget, int iteration, int group_size) {
  return (per_group_budget - iteration) * group_size / per_group_budget;
}

// Forward passes of one refinement when every group has unknown slots; the
// number of elements does not enter.
inline int count_model_invocations(const DecodeConfig& config, int /*num_elements*/) {
  return config.groups() * config.per_group_budget();
}

// Forward passes of the autoregressive schedule: one per generated token
// (every attribute, then the end token).
inline int count_autoregressive_invocations(int num_elements, int attributes_per_element = kNumAttrs) {
  return attributes_per_element * num_elements + 1;
}

struct PositionRecord {
  int position = 0;
  int token = 0;
  double confidence = 0;
  bool remasked = false;
};

struct IterationRecord {
  Group group = Group::kCategory;
  int iteration = 0;  // 1-based within the group
  double mask_ratio = 0;
  int remask_count = 0;
  std::vector<PositionRecord> positions;  // in sequence order
  std::vector<int> snapshot;              // token ids after this iteration
};

struct DecodeTrace {
  std::vector<IterationRecord> iterations;
  int invocations = 0;

  json to_json() const {
    json out = json::array();
    for (const auto& it : iterations) {
      json pos = json::array();
      for (const auto& p : it.positions)
        pos.push_back({{"position", p.position}, {"token", p.token}, {"confidence", p.confidence},
                       {"remasked", p.remasked}});
      out.push_back({{"group", std::string(1, group_tag(it.group))},
                     {"iteration", it.iteration},
                     {"mask_ratio", it.mask_ratio},
                     {"remask_count", it.remask_count},
                     {"positions", pos},
                     {"snapshot", it.snapshot}});
    }
    return out;
  }
};

// Anything that maps a token sequence to per-position vocabulary logits.
// `logits` returns a row-major [content_length x vocab_size] table.
template <typename M>
concept LogitSource = requires(const M& m, const TokenSequence& seq) {
  { m.vocab_size() } -> std::convertible_to<int>;
  { m.logits(seq) } -> std::same_as<std::vector<double>>;
};

// Logit source backed by model parameters. The all-PAD tail is not fed to
// the network; PAD positions are never attended to, so real-position logits
// are unchanged.
template <typename T>
class ModelLogits {
 public:
  explicit ModelLogits(const ModelParams<T>& params) : params_(&params) {}

  int vocab_size() const { return params_->config.vocab_size; }

  std::vector<double> logits(const TokenSequence& seq) const {
    const auto n = static_cast<std::size_t>(seq.content_length());
    const std::vector<std::uint8_t> valid(n, 1);
    const Tensor<T> out = infer_logits(*params_, std::span<const int>(seq.ids.data(), n), valid);
    return std::vector<double>(out.values().begin(), out.values().end());
  }

 private:
  const ModelParams<T>* params_;
};

struct DecodeResult {
  TokenSequence sequence;
  DecodeTrace trace;
};

namespace detail {

struct Prediction {
  int token = 0;
  double confidence = 0;
};

inline Prediction predict_slot(std::span<const double> row, std::pair<int, int> legal, const Predictor& predictor,
                               Rng& rng) {
  const auto [lo, hi] = legal;
  if (predictor.kind == Predictor::Kind::kGreedy) {
    int best = lo;
    for (int t = lo + 1; t < hi; ++t)
      if (row[static_cast<std::size_t>(t)] > row[static_cast<std::size_t>(best)]) best = t;
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (double v : row) z += std::exp(v - mx);
    return {best, std::exp(row[static_cast<std::size_t>(best)] - mx) / z};
  }
  std::vector<int> ids(static_cast<std::size_t>(hi - lo));
  std::iota(ids.begin(), ids.end(), lo);
  const std::size_t k = std::min(ids.size(), static_cast<std::size_t>(predictor.k));
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), [&](int a, int b) {
    const double la = row[static_cast<std::size_t>(a)], lb = row[static_cast<std::size_t>(b)];
    return la != lb ? la > lb : a < b;
  });
  ids.resize(k);
  const double mx = row[static_cast<std::size_t>(ids.front())];
  std::vector<double> p(k);
  double z = 0;
  for (std::size_t i = 0; i < k; ++i) z += p[i] = std::exp(row[static_cast<std::size_t>(ids[i])] - mx);
  const double u = uniform_real(rng) * z;
  double acc = 0;
  std::size_t pick = k - 1;
  for (std::size_t i = 0; i < k; ++i) {
    acc += p[i];
    if (u < acc) {
      pick = i;
      break;
    }
  }
  return {ids[pick], p[pick] / z};
}

}  // namespace detail

// Completes every UNKNOWN slot of `input`. LOCKED slots are never predicted or
// re-masked. Groups with no unknown slots are skipped without forward passes.
template <LogitSource M>
DecodeResult refine(const M& model, const TokenSequence& input, const LayoutSchema& schema,
                    const DecodeConfig& config) {
  config.validate(schema);
  const Vocab vocab(schema);
  require(model.vocab_size() == vocab.size(), ErrorCode::kContract,
          "decoder: model vocabulary " + std::to_string(model.vocab_size()) + " does not match schema vocabulary " +
              std::to_string(vocab.size()));
  DecodeResult result{input, {}};
  const std::vector<int> unknown = input.unknown_positions();
  if (unknown.empty()) return result;
  for (int p : unknown) {
    const Group g = input.slots[static_cast<std::size_t>(p)].group;
    require(std::find(config.group_order.begin(), config.group_order.end(), g) != config.group_order.end(),
            ErrorCode::kContract, std::string("decoder: unknown slot in group ") + group_tag(g) + " outside group order");
  }

  TokenSequence& seq = result.sequence;
  const int tg = config.per_group_budget();
  const auto v = static_cast<std::size_t>(vocab.size());
  Rng rng(config.seed);
  for (Group g : config.group_order) {
    std::vector<int> slots;
    for (int p : unknown)
      if (input.slots[static_cast<std::size_t>(p)].group == g) slots.push_back(p);
    if (slots.empty()) continue;
    const int size = static_cast<int>(slots.size());
    for (int i = 1; i <= tg; ++i) {
      const std::vector<double> logits = model.logits(seq);
      ++result.trace.invocations;
      require(logits.size() == static_cast<std::size_t>(seq.content_length()) * v, ErrorCode::kContract,
              "decoder: logit table has the wrong size");
      std::vector<detail::Prediction> preds;
      preds.reserve(slots.size());
      for (int p : slots) {
        const std::span<const double> row(logits.data() + static_cast<std::size_t>(p) * v, v);
        preds.push_back(detail::predict_slot(row, vocab.legal_range(seq.slots[static_cast<std::size_t>(p)].attr),
                                             config.predictor, rng));
      }
      // Most confident first, ties to the lower position; the tail is re-masked.
      std::vector<std::size_t> order(slots.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return preds[a].confidence > preds[b].confidence;
      });
      const int n = remask_count(tg, i, size);
      std::vector<bool> remask(slots.size(), false);
      for (int r = 0; r < n; ++r) remask[order[order.size() - 1 - static_cast<std::size_t>(r)]] = true;
      for (std::size_t s = 0; s < slots.size(); ++s) {
        const auto p = static_cast<std::size_t>(slots[s]);
        seq.ids[p] = remask[s] ? Vocab::kMask : preds[s].token;
        seq.slots[p].status = remask[s] ? SlotStatus::kUnknown : SlotStatus::kCommitted;
      }
      if (config.trace) {
        IterationRecord rec;
        rec.group = g;
        rec.iteration = i;
        rec.mask_ratio = static_cast<double>(tg - i) / tg;
        rec.remask_count = n;
        for (std::size_t s = 0; s < slots.size(); ++s)
          rec.positions.push_back({slots[s], preds[s].token, preds[s].confidence, remask[s]});
        rec.snapshot = seq.ids;
        result.trace.iterations.push_back(std::move(rec));
      }
    }
  }
  return result;
}

struct Generation {
  Layout layout;
  TokenSequence sequence;
  DecodeTrace trace;
};

template <LogitSource M>
Generation generate_conditional(const M& model, std::span<const PartialElement> elements, const LayoutSchema& schema,
                                const DecodeConfig& config, double canvas_w = 1.0, double canvas_h = 1.0) {
  const TokenSequence input = make_conditional_input(elements, schema);
  DecodeResult r = refine(model, input, schema, config);
  Layout layout = detokenize(r.sequence, schema, canvas_w, canvas_h);
  return {std::move(layout), std::move(r.sequence), std::move(r.trace)};
}

// K is drawn from the prior with a stream derived from config.seed, then an
// all-unknown sequence of K elements is refined.
template <LogitSource M>
Generation generate_unconditional(const M& model, const LengthPrior& prior, const LayoutSchema& schema,
                                  const DecodeConfig& config, std::optional<int> fixed_count = std::nullopt) {
  int k = 0;
  if (fixed_count) {
    k = *fixed_count;
  } else {
    Rng rng(derive_seed(config.seed, 0x4C454E47ull));
    k = prior.sample(rng);
  }
  const std::vector<PartialElement> blank(static_cast<std::size_t>(k));
  return generate_conditional(model, blank, schema, config);
}

// The autoregressive baseline's cost profile: one forward pass of the same
// network per generated token, each over the full-length sequence, committing
// one greedy token per pass in flattening order.
template <LogitSource M>
TokenSequence simulate_autoregressive(const M& model, int num_elements, const LayoutSchema& schema,
                                      int* invocations = nullptr) {
  const std::vector<PartialElement> blank(static_cast<std::size_t>(num_elements));
  TokenSequence seq = make_conditional_input(blank, schema);
  const Vocab vocab(schema);
  const auto v = static_cast<std::size_t>(vocab.size());
  const std::vector<int> order = seq.attr_positions();
  int calls = 0;
  Rng unused(0);
  for (std::size_t step = 0; step <= order.size(); ++step) {
    const std::vector<double> logits = model.logits(seq);
    ++calls;
    if (step == order.size()) break;  // the end token: nothing left to commit
    const auto p = static_cast<std::size_t>(order[step]);
    const std::span<const double> row(logits.data() + p * v, v);
    seq.ids[p] = detail::predict_slot(row, vocab.legal_range(seq.slots[p].attr), Predictor::greedy(), unused).token;
    seq.slots[p].status = SlotStatus::kCommitted;
  }
  if (invocations) *invocations = calls;
  return seq;
}

}  // namespace lf
