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

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "layoutforge/dataset.hpp"
#include "layoutforge/decoder.hpp"
#include "layoutforge/metrics.hpp"
#include "layoutforge/training.hpp"

namespace lf {

// One arm of an ablation. Exactly one factor is set, and it is the same
// factor for every variant of a spec.
struct AblationVariant {
  std::string name;
  std::optional<MaskingPolicy> policy;
  std::optional<std::vector<Group>> group_order;

  std::string factor() const { return policy ? "policy" : "group_order"; }
};

struct AblationSpec {
  std::string name = "ablation";
  // Corpus: a JSONL file with its schema, or a synthetic corpus.
  std::optional<std::string> corpus_path;
  std::optional<std::string> schema_path;
  int synthetic_n = 2000;
  std::uint64_t synthetic_seed = 1;

  std::vector<AblationVariant> variants;
  TrainConfig train;
  DecodeConfig decode;
  std::optional<ModelConfig> model;  // desk configuration when unset
  int trials = 3;
  std::uint64_t seed_base = 0;
  // "category": complete test layouts from their categories; "unconditional":
  // draw counts from the training prior.
  std::string condition = "category";
  int eval_count = 0;  // 0 uses the whole test split
  std::vector<std::string> metrics = {"iou", "overlap", "alignment"};

  void validate() const {
    require(!variants.empty(), ErrorCode::kInvalidInput, "ablation: no variants", "variants");
    require(trials >= 1, ErrorCode::kInvalidInput, "ablation: trials must be >= 1", "trials");
    require(condition == "category" || condition == "unconditional", ErrorCode::kInvalidInput,
            "ablation: condition must be 'category' or 'unconditional'", "condition");
    require(eval_count >= 0, ErrorCode::kInvalidInput, "ablation: eval_count must be >= 0", "eval_count");
    for (const auto& v : variants) {
      require(v.policy.has_value() != v.group_order.has_value(), ErrorCode::kInvalidInput,
              "ablation: variant '" + v.name + "' must set exactly one of policy, group_order", "variants");
      require(v.factor() == variants.front().factor(), ErrorCode::kInvalidInput,
              "ablation: variants must all vary the same factor", "variants");
    }
    train.validate();
  }

  static AblationSpec from_json(const json& j) {
    AblationSpec s;
    try {
      s.name = j.value("name", s.name);
      if (j.contains("corpus")) {
        const json& c = j.at("corpus");
        if (c.contains("path")) {
          s.corpus_path = c.at("path").get<std::string>();
          s.schema_path = c.at("schema").get<std::string>();
        } else {
          const json& syn = c.contains("synthetic") ? c.at("synthetic") : c;
          s.synthetic_n = syn.value("n", s.synthetic_n);
          s.synthetic_seed = syn.value("seed", s.synthetic_seed);
        }
      }
      for (const auto& jv : j.at("variants")) {
        AblationVariant v;
        if (jv.contains("policy")) v.policy = MaskingPolicy::parse(jv.at("policy").get<std::string>());
        if (jv.contains("group_order")) v.group_order = parse_group_order(jv.at("group_order").get<std::string>());
        v.name = jv.value("name", v.policy ? v.policy->to_string() : v.group_order ? group_order_string(*v.group_order) : "");
        s.variants.push_back(std::move(v));
      }
      if (j.contains("train")) s.train = train_config_from_json(j.at("train"));
      if (j.contains("decode")) s.decode = decode_config_from_json(j.at("decode"), s.decode);
      if (j.contains("model")) s.model = config_from_json(j.at("model"));
      s.trials = j.value("trials", s.trials);
      s.seed_base = j.value("seed_base", s.seed_base);
      s.condition = j.value("condition", s.condition);
      s.eval_count = j.value("eval_count", s.eval_count);
      if (j.contains("metrics")) s.metrics = j.at("metrics").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kInvalidInput, std::string("ablation spec: ") + e.what());
    }
    s.validate();
    return s;
  }

  json to_json() const {
    json vs = json::array();
    for (const auto& v : variants) {
      json jv = {{"name", v.name}};
      if (v.policy) jv["policy"] = v.policy->to_string();
      if (v.group_order) jv["group_order"] = group_order_string(*v.group_order);
      vs.push_back(jv);
    }
    json corpus = corpus_path ? json{{"path", *corpus_path}, {"schema", *schema_path}}
                              : json{{"synthetic", {{"n", synthetic_n}, {"seed", synthetic_seed}}}};
    json out = {{"name", name},           {"corpus", corpus},       {"variants", vs},
                {"train", train_config_to_json(train)}, {"decode", decode_config_to_json(decode)},
                {"trials", trials},       {"seed_base", seed_base}, {"condition", condition},
                {"eval_count", eval_count}, {"metrics", metrics}};
    if (model) out["model"] = config_to_json(*model);
    return out;
  }
};

inline AblationSpec load_ablation_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open ablation spec '" + path + "'");
  try {
    return AblationSpec::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kInvalidInput, "ablation spec '" + path + "': " + e.what());
  }
}

inline LayoutCorpus load_ablation_corpus(const AblationSpec& spec) {
  if (!spec.corpus_path) return generate_synthetic(spec.synthetic_n, spec.synthetic_seed);
  std::ifstream in(*spec.schema_path);
  if (!in) fail(ErrorCode::kIo, "cannot open schema '" + *spec.schema_path + "'");
  return load_corpus(*spec.corpus_path, schema_from_json(json::parse(in)));
}

struct TrialResult {
  std::uint64_t seed = 0;
  bool diverged = false;
  std::string error;
  std::map<std::string, double> means;
};

struct VariantResult {
  AblationVariant variant;
  std::vector<TrialResult> trials;
  std::map<std::string, MetricSummary> summary;  // over non-diverged trials
  bool flagged = false;                           // some trial diverged

  json to_json() const {
    json ts = json::array();
    for (const auto& t : trials) {
      json jt = {{"seed", t.seed}, {"diverged", t.diverged}, {"metrics", t.means}};
      if (!t.error.empty()) jt["error"] = t.error;
      ts.push_back(jt);
    }
    json s = json::object();
    for (const auto& [m, sum] : summary) s[m] = sum.to_json();
    return {{"variant", variant.name}, {"flagged", flagged}, {"trials", ts}, {"summary", s}};
  }
};

struct AblationResult {
  AblationSpec spec;
  std::vector<VariantResult> variants;

  json to_json() const {
    json vs = json::array();
    for (const auto& v : variants) vs.push_back(v.to_json());
    return {{"spec", spec.to_json()}, {"variants", vs}};
  }

  std::string to_markdown() const {
    std::ostringstream os;
    os << "## " << spec.name << "\n\n| variant | trials |";
    for (const auto& m : spec.metrics) os << ' ' << m << " |";
    os << "\n|---|---|";
    for (std::size_t i = 0; i < spec.metrics.size(); ++i) os << "---|";
    os << '\n';
    os.setf(std::ios::fixed);
    os.precision(4);
    for (const auto& v : variants) {
      std::size_t ok = 0;
      for (const auto& t : v.trials) ok += !t.diverged;
      os << "| " << v.variant.name << (v.flagged ? " (diverged trials)" : "") << " | " << ok << '/'
         << v.trials.size() << " |";
      for (const auto& m : spec.metrics) {
        const auto it = v.summary.find(m);
        if (it == v.summary.end())
          os << " n/a |";
        else
          os << ' ' << it->second.mean << " ± " << it->second.std << " |";
      }
      os << '\n';
    }
    return os.str();
  }
};

// Trained parameters keyed by everything that determines them, so variants
// that only change decoding (and repeated runs) train once.
class ModelCache {
 public:
  const ModelParams<float>* find(const std::string& key) const {
    const auto it = models_.find(key);
    return it == models_.end() ? nullptr : &it->second;
  }
  const ModelParams<float>& put(const std::string& key, ModelParams<float> params) {
    return models_.insert_or_assign(key, std::move(params)).first->second;
  }

 private:
  std::map<std::string, ModelParams<float>> models_;
};

using AblationLog = std::function<void(const std::string&)>;

namespace detail {

inline std::string file_safe(std::string name) {
  for (char& c : name)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return name;
}

// Trains one trial's model. The trial seed fixes initialization and batch
// order, so paired variants differ only in the factor under study.
inline const ModelParams<float>& trial_model(const AblationSpec& spec, const AblationVariant& variant,
                                             const LayoutCorpus& corpus, std::uint64_t trial_seed,
                                             ModelCache& cache, const AblationLog& log) {
  TrainConfig tc = spec.train;
  if (variant.policy) tc.policy = *variant.policy;
  tc.seed = derive_seed(trial_seed, 1);
  const ModelConfig mc = spec.model.value_or(ModelConfig::desk(Vocab(corpus.schema).size(), corpus.schema.max_seq_len()));
  const std::uint64_t init_seed = derive_seed(trial_seed, 2);
  const std::string key = corpus.provenance + "|" + config_to_json(mc).dump() + "|" + train_config_to_json(tc).dump() +
                          "|" + std::to_string(init_seed);
  if (const auto* hit = cache.find(key)) return *hit;
  if (log) log("train " + variant.name + " seed=" + std::to_string(trial_seed) + " policy=" + tc.policy.to_string());
  Trainer<float> trainer(init_params<float>(mc, init_seed), tc, corpus.train, corpus.schema);
  trainer.run({});
  return cache.put(key, std::move(trainer.state().params));
}

inline std::vector<Layout> trial_generations(const AblationSpec& spec, const AblationVariant& variant,
                                             const LayoutCorpus& corpus, const ModelParams<float>& params,
                                             std::uint64_t trial_seed) {
  DecodeConfig dc = spec.decode;
  if (variant.group_order) dc.group_order = *variant.group_order;
  dc.trace = false;
  const ModelLogits<float> model(params);
  const auto& test = corpus.test.empty() ? corpus.val : corpus.test;
  std::size_t n = spec.eval_count > 0 ? static_cast<std::size_t>(spec.eval_count) : test.size();
  std::vector<Layout> out;
  if (spec.condition == "unconditional") {
    const LengthPrior prior = estimate_length_prior(corpus.train);
    for (std::size_t i = 0; i < n; ++i) {
      DecodeConfig c = dc;
      c.seed = derive_seed(trial_seed, 1000 + i);
      out.push_back(generate_unconditional(model, prior, corpus.schema, c).layout);
    }
    return out;
  }
  require(!test.empty(), ErrorCode::kInvalidInput, "ablation: corpus has no test layouts");
  n = std::min(n, test.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<PartialElement> parts;
    for (const auto& e : test[i].elements) {
      PartialElement p;
      p.category = e.category;
      parts.push_back(p);
    }
    DecodeConfig c = dc;
    c.seed = derive_seed(trial_seed, 1000 + i);
    out.push_back(generate_conditional(model, parts, corpus.schema, c).layout);
  }
  return out;
}

}  // namespace detail

// Runs every variant for every trial and, when `results_dir` is set, writes
// one JSON per variant plus summary.json and summary.md there.
inline AblationResult run_ablation(const AblationSpec& spec, const LayoutCorpus& corpus,
                                   const std::optional<std::string>& results_dir = std::nullopt,
                                   ModelCache* cache = nullptr, const AblationLog& log = {}) {
  spec.validate();
  ModelCache local;
  ModelCache& models = cache ? *cache : local;
  AblationResult result{spec, {}};
  for (const auto& variant : spec.variants) {
    VariantResult vr{variant, {}, {}, false};
    std::map<std::string, std::vector<double>> per_metric;
    for (int t = 0; t < spec.trials; ++t) {
      TrialResult tr;
      tr.seed = spec.seed_base + static_cast<std::uint64_t>(t);
      try {
        const ModelParams<float>& params = detail::trial_model(spec, variant, corpus, tr.seed, models, log);
        const std::vector<Layout> generated = detail::trial_generations(spec, variant, corpus, params, tr.seed);
        const MetricReport report = evaluate_layouts(generated, spec.metrics);
        for (const auto& [m, s] : report.summary) {
          tr.means[m] = s.mean;
          per_metric[m].push_back(s.mean);
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDivergence) throw;
        tr.diverged = true;
        tr.error = e.what();
        vr.flagged = true;
      }
      if (log) {
        std::ostringstream os;
        os << variant.name << " trial " << t << (tr.diverged ? " diverged" : "");
        for (const auto& [m, v] : tr.means) os << ' ' << m << '=' << v;
        log(os.str());
      }
      vr.trials.push_back(std::move(tr));
    }
    for (const auto& [m, values] : per_metric) vr.summary[m] = summarize(values);
    result.variants.push_back(std::move(vr));
  }
  if (results_dir) {
    std::filesystem::create_directories(*results_dir);
    auto write = [&](const std::string& file, const std::string& text) {
      std::ofstream out(*results_dir + "/" + file, std::ios::trunc);
      if (!out) fail(ErrorCode::kIo, "cannot write '" + *results_dir + "/" + file + "'");
      out << text;
    };
    for (const auto& v : result.variants) write(detail::file_safe(v.variant.name) + ".json", v.to_json().dump(2) + "\n");
    write("summary.json", result.to_json().dump(2) + "\n");
    write("summary.md", result.to_markdown());
  }
  return result;
}

}  // namespace lf
