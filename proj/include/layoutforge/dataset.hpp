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

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "layoutforge/error.hpp"
#include "layoutforge/layout.hpp"
#include "layoutforge/random.hpp"

namespace lf {

enum class Split { kTrain, kVal, kTest };

// 80/10/10 split by a hash of the record index.
inline Split split_of_record(std::size_t index) {
  const auto bucket = splitmix64(static_cast<std::uint64_t>(index) ^ 0x5EED5EEDull) % 10;
  return bucket < 8 ? Split::kTrain : bucket == 8 ? Split::kVal : Split::kTest;
}

inline Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  fail(ErrorCode::kInvalidInput, "unknown split '" + std::string(name) + "'");
}

struct LayoutCorpus {
  LayoutSchema schema;
  std::vector<Layout> train, val, test;
  std::string provenance;

  const std::vector<Layout>& split(Split s) const {
    return s == Split::kTrain ? train : s == Split::kVal ? val : test;
  }
  std::size_t size() const { return train.size() + val.size() + test.size(); }

  void add(Layout layout, std::size_t record_index) {
    switch (split_of_record(record_index)) {
      case Split::kTrain: train.push_back(std::move(layout)); break;
      case Split::kVal: val.push_back(std::move(layout)); break;
      case Split::kTest: test.push_back(std::move(layout)); break;
    }
  }

  // All layouts in record order is not retained; this concatenates splits.
  std::vector<Layout> all() const {
    std::vector<Layout> out = train;
    out.insert(out.end(), val.begin(), val.end());
    out.insert(out.end(), test.begin(), test.end());
    return out;
  }
};

struct IngestionIssue {
  std::size_t line = 0;  // 1-based
  ErrorCode code = ErrorCode::kIngestion;
  std::string message;
};

struct IngestionReport {
  std::size_t lines = 0;
  std::size_t loaded = 0;
  std::size_t rejected = 0;  // malformed, invalid or filtered
  std::size_t filtered = 0;  // well-formed but more than max_elements objects
  std::vector<IngestionIssue> issues;
};

// Parses JSONL layouts, one object per line. Layouts with more elements than
// the schema allows are filtered (counted as rejected, not an error). Every
// other problem is recorded per line.
inline LayoutCorpus load_corpus_lenient(std::istream& in, const LayoutSchema& schema, IngestionReport& report,
                                        std::string provenance = "stream") {
  schema.validate();
  LayoutCorpus corpus;
  corpus.schema = schema;
  corpus.provenance = std::move(provenance);
  std::string line;
  while (std::getline(in, line)) {
    ++report.lines;
    const std::size_t lineno = report.lines;
    try {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        fail(ErrorCode::kIngestion, std::string("unparseable JSON: ") + e.what());
      }
      if (j.contains("elements") && j["elements"].is_array() &&
          static_cast<int>(j["elements"].size()) > schema.max_elements) {
        ++report.filtered;
        ++report.rejected;
        continue;
      }
      corpus.add(layout_from_json(j, schema), report.loaded);
      ++report.loaded;
    } catch (const Error& e) {
      ++report.rejected;
      report.issues.push_back({lineno, e.code() == ErrorCode::kVocabulary ? ErrorCode::kVocabulary : ErrorCode::kIngestion,
                               e.what()});
    }
  }
  return corpus;
}

// Strict load: any malformed or invalid line fails the whole load with an
// error listing every offending line.
inline LayoutCorpus load_corpus(const std::string& path, const LayoutSchema& schema) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open corpus '" + path + "'");
  IngestionReport report;
  LayoutCorpus corpus = load_corpus_lenient(in, schema, report, path);
  if (!report.issues.empty()) {
    const bool all_vocab = std::all_of(report.issues.begin(), report.issues.end(),
                                       [](const IngestionIssue& i) { return i.code == ErrorCode::kVocabulary; });
    std::ostringstream msg;
    msg << path << ": " << report.issues.size() << " bad line(s)";
    for (const auto& issue : report.issues) msg << "\n  line " << issue.line << ": " << issue.message;
    fail(all_vocab ? ErrorCode::kVocabulary : ErrorCode::kIngestion, msg.str());
  }
  return corpus;
}

inline void write_corpus(std::ostream& out, const std::vector<Layout>& layouts, const LayoutSchema& schema) {
  for (const auto& l : layouts) out << layout_to_json(l, schema).dump() << '\n';
}

inline void write_corpus(const std::string& path, const std::vector<Layout>& layouts, const LayoutSchema& schema) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  write_corpus(out, layouts, schema);
}

// Parameters of the synthetic mobile-UI style: a full-width header and footer
// around a stack of left-aligned list items that share one width.
struct SyntheticStyle {
  int min_items = 1;
  int max_items = 6;
  double header_height = 0.08;
  double footer_height = 0.08;
  double item_height_min = 0.05;
  double item_height_max = 0.10;
  double gap = 0.02;
  double margin_min = 0.04;
  double margin_max = 0.12;
  double width_min = 0.45;
  double width_max = 0.85;
  // Coordinate jitter, in quantization bins (uniform in +-jitter_bins / 2).
  double jitter_bins = 0.5;
  int num_bins = 32;
  int max_elements = 25;
};

inline const std::vector<std::string>& synthetic_categories() {
  static const std::vector<std::string> kCategories = {"header", "footer", "text", "image", "button"};
  return kCategories;
}

inline LayoutSchema synthetic_schema(const SyntheticStyle& style = {}) {
  LayoutSchema s = default_schema(synthetic_categories(), style.max_elements);
  s.num_bins = style.num_bins;
  s.validate();
  return s;
}

inline Layout synthesize_layout(const SyntheticStyle& style, Rng& rng) {
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * uniform_real(rng); };
  const double jitter_scale = style.jitter_bins / style.num_bins;
  auto jitter = [&]() { return (uniform_real(rng) - 0.5) * jitter_scale; };

  Layout layout;
  Element header{0, 0.5, style.header_height / 2, 1.0, style.header_height, std::nullopt};
  layout.elements.push_back(header);

  const int items = uniform_int(rng, style.min_items, style.max_items);
  const double margin = between(style.margin_min, style.margin_max);
  const double width = between(style.width_min, style.width_max);
  const double item_h = between(style.item_height_min, style.item_height_max);
  double top = style.header_height + style.gap;
  for (int i = 0; i < items; ++i) {
    Element item;
    item.category = uniform_int(rng, 2, 4);
    item.w = width + jitter();
    item.h = item_h + jitter();
    item.x = margin + width / 2 + jitter();
    item.y = top + item_h / 2 + jitter();
    top += item_h + style.gap;
    layout.elements.push_back(item);
  }
  Element footer{1, 0.5, 1.0 - style.footer_height / 2, 1.0, style.footer_height, std::nullopt};
  layout.elements.push_back(footer);
  return quantize_layout(std::move(layout), style.num_bins);
}

// Deterministic synthetic corpus: a pure function of (n, seed, style).
inline LayoutCorpus generate_synthetic(int n, std::uint64_t seed, const SyntheticStyle& style = {}) {
  require(n >= 1, ErrorCode::kInvalidInput, "generate_synthetic: n must be >= 1");
  require(style.min_items >= 1 && style.max_items >= style.min_items &&
              style.max_items + 2 <= style.max_elements,
          ErrorCode::kInvalidInput, "generate_synthetic: invalid item range");
  LayoutCorpus corpus;
  corpus.schema = synthetic_schema(style);
  corpus.provenance = "synthetic(n=" + std::to_string(n) + ", seed=" + std::to_string(seed) + ")";
  Rng rng(seed);
  for (int i = 0; i < n; ++i) corpus.add(synthesize_layout(style, rng), static_cast<std::size_t>(i));
  return corpus;
}

// Empirical distribution of object counts over a training split.
struct LengthPrior {
  std::map<int, long> counts;
  long total = 0;

  double probability(int k) const {
    const auto it = counts.find(k);
    return it == counts.end() || total == 0 ? 0.0 : static_cast<double>(it->second) / static_cast<double>(total);
  }

  int sample(Rng& rng) const {
    require(total > 0, ErrorCode::kContract, "length prior is empty");
    const double u = uniform_real(rng) * static_cast<double>(total);
    double acc = 0;
    for (const auto& [k, c] : counts) {
      acc += static_cast<double>(c);
      if (u < acc) return k;
    }
    return counts.rbegin()->first;
  }

  json to_json() const {
    json c = json::object();
    for (const auto& [k, n] : counts) c[std::to_string(k)] = n;
    json p = json::object();
    for (const auto& [k, n] : counts) p[std::to_string(k)] = probability(k);
    return json{{"counts", c}, {"total", total}, {"probabilities", p}};
  }

  static LengthPrior from_json(const json& j) {
    LengthPrior prior;
    for (const auto& [k, n] : j.at("counts").items()) {
      prior.counts[std::stoi(k)] = n.get<long>();
      prior.total += n.get<long>();
    }
    return prior;
  }
};

inline LengthPrior estimate_length_prior(const std::vector<Layout>& train_split) {
  require(!train_split.empty(), ErrorCode::kInvalidInput, "length prior: training split is empty");
  LengthPrior prior;
  for (const auto& l : train_split) {
    ++prior.counts[static_cast<int>(l.elements.size())];
    ++prior.total;
  }
  return prior;
}

inline LengthPrior estimate_length_prior(const LayoutCorpus& corpus) { return estimate_length_prior(corpus.train); }

}  // namespace lf
