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

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "layoutforge/dataset.hpp"
#include "layoutforge/decoder.hpp"
#include "layoutforge/fid.hpp"
#include "layoutforge/metrics.hpp"
#include "layoutforge/model.hpp"

namespace lf {

// A checkpoint loaded for inference, with the schema and length prior stored
// in its metadata.
struct ServedModel {
  std::string id;
  std::string path;
  ModelParams<float> params;
  LayoutSchema schema;
  std::optional<LengthPrior> prior;
  json meta;
  std::shared_ptr<const FidExtractor> fid;
};

// Metadata written next to trained parameters so a checkpoint is
// self-describing for generation.
inline json model_metadata(const LayoutSchema& schema, const std::optional<LengthPrior>& prior,
                           const json& extra = json::object()) {
  json meta = extra;
  meta["schema"] = schema_to_json(schema);
  if (prior) meta["length_prior"] = prior->to_json();
  return meta;
}

inline ServedModel load_served_model(const std::string& path, std::string id = "default") {
  LoadedModel<float> loaded = load_checkpoint<float>(path);
  if (!loaded.meta.contains("schema"))
    fail(ErrorCode::kCheckpoint, "'" + path + "' has no schema in its metadata");
  ServedModel m;
  m.id = std::move(id);
  m.path = path;
  m.schema = schema_from_json(loaded.meta.at("schema"));
  require(Vocab(m.schema).size() == loaded.params.config.vocab_size, ErrorCode::kCheckpoint,
          "'" + path + "' vocabulary does not match its schema");
  if (loaded.meta.contains("length_prior")) m.prior = LengthPrior::from_json(loaded.meta.at("length_prior"));
  m.params = std::move(loaded.params);
  m.meta = std::move(loaded.meta);
  return m;
}

class ModelRegistry {
 public:
  void add(std::shared_ptr<const ServedModel> model) {
    require(!models_.count(model->id), ErrorCode::kInvalidInput, "duplicate model id '" + model->id + "'");
    if (default_id_.empty()) default_id_ = model->id;
    models_[model->id] = std::move(model);
  }

  // An empty id selects the first model added.
  const ServedModel& get(const std::string& id) const {
    const std::string& key = id.empty() ? default_id_ : id;
    const auto it = models_.find(key);
    if (it == models_.end()) fail(ErrorCode::kNotFound, "unknown model '" + key + "'", "model");
    return *it->second;
  }

  json list() const {
    json out = json::array();
    for (const auto& [id, m] : models_) {
      out.push_back({{"id", id},
                     {"default", id == default_id_},
                     {"path", m->path},
                     {"schema", schema_to_json(m->schema)},
                     {"config", config_to_json(m->params.config)},
                     {"train_config", m->meta.value("train_config", json())},
                     {"has_prior", m->prior.has_value()},
                     {"has_fid_extractor", m->fid != nullptr}});
    }
    return json{{"models", out}};
  }

 private:
  std::map<std::string, std::shared_ptr<const ServedModel>> models_;
  std::string default_id_;
};

// ---------------------------------------------------------------------------
// Generation requests

// An element of a request. Present fields are locked; absent ones are
// generated.
struct RequestElement {
  std::optional<std::string> category;
  std::array<std::optional<double>, 4> coords{};  // x, y, w, h
};

struct GenerateRequest {
  std::string model;
  bool unconditional = false;
  std::vector<RequestElement> elements;
  double canvas_w = 1.0, canvas_h = 1.0;
  bool absolute = false;
  json config_overrides = json::object();
  bool trace = false;
  std::optional<int> num_elements;  // unconditional only; overrides the prior draw
};

namespace detail {

inline std::string element_field(std::size_t i, std::string_view name) {
  return "elements[" + std::to_string(i) + "]." + std::string(name);
}

}  // namespace detail

// Parses and validates a request body. Every rejection names the offending
// field.
inline GenerateRequest parse_generate_request(const json& j) {
  require(j.is_object(), ErrorCode::kInvalidInput, "request must be a JSON object");
  GenerateRequest r;
  auto typed = [&](const char* key, auto check, const char* what) {
    require(check(j.at(key)), ErrorCode::kInvalidInput, std::string(key) + " must be " + what, key);
  };
  for (const auto& [key, _] : j.items()) {
    static const std::vector<std::string> kKeys = {"model", "mode", "elements", "canvas", "coords",
                                                   "config", "trace", "num_elements"};
    require(std::find(kKeys.begin(), kKeys.end(), key) != kKeys.end(), ErrorCode::kInvalidInput,
            "unknown request field '" + key + "'", key);
  }
  if (j.contains("model")) {
    typed("model", [](const json& v) { return v.is_string(); }, "a string");
    r.model = j.at("model").get<std::string>();
  }
  std::string mode = "conditional";
  if (j.contains("mode")) {
    typed("mode", [](const json& v) { return v.is_string(); }, "a string");
    mode = j.at("mode").get<std::string>();
  }
  require(mode == "conditional" || mode == "unconditional", ErrorCode::kInvalidInput,
          "mode must be 'conditional' or 'unconditional'", "mode");
  r.unconditional = mode == "unconditional";
  if (j.contains("coords")) {
    typed("coords", [](const json& v) { return v.is_string(); }, "a string");
    const auto c = j.at("coords").get<std::string>();
    require(c == "normalized" || c == "absolute", ErrorCode::kInvalidInput,
            "coords must be 'normalized' or 'absolute'", "coords");
    r.absolute = c == "absolute";
  }
  if (j.contains("canvas")) {
    const json& c = j.at("canvas");
    for (const char* k : {"w", "h"}) {
      const std::string field = std::string("canvas.") + k;
      require(c.is_object() && c.contains(k) && c.at(k).is_number() && c.at(k).get<double>() > 0 &&
                  std::isfinite(c.at(k).get<double>()),
              ErrorCode::kInvalidInput, field + " must be a positive number", field);
    }
    r.canvas_w = c.at("w").get<double>();
    r.canvas_h = c.at("h").get<double>();
  }
  if (j.contains("trace")) {
    typed("trace", [](const json& v) { return v.is_boolean(); }, "a boolean");
    r.trace = j.at("trace").get<bool>();
  }
  if (j.contains("config")) {
    typed("config", [](const json& v) { return v.is_object(); }, "an object");
    r.config_overrides = j.at("config");
    for (const auto& [key, _] : r.config_overrides.items()) {
      static const std::vector<std::string> kKeys = {"T", "group_order", "predictor", "seed", "trace"};
      require(std::find(kKeys.begin(), kKeys.end(), key) != kKeys.end(), ErrorCode::kInvalidInput,
              "unknown config field '" + key + "'", "config." + key);
    }
  }
  if (j.contains("num_elements")) {
    typed("num_elements", [](const json& v) { return v.is_number_integer(); }, "an integer");
    r.num_elements = j.at("num_elements").get<int>();
    require(r.unconditional, ErrorCode::kInvalidInput, "num_elements applies to unconditional mode only",
            "num_elements");
  }
  if (j.contains("elements")) {
    typed("elements", [](const json& v) { return v.is_array(); }, "an array");
    const json& elements = j.at("elements");
    for (std::size_t i = 0; i < elements.size(); ++i) {
      const json& je = elements[i];
      require(je.is_object(), ErrorCode::kInvalidInput, "element must be an object",
              "elements[" + std::to_string(i) + "]");
      RequestElement e;
      for (const auto& [key, value] : je.items()) {
        const std::string field = detail::element_field(i, key);
        if (key == "category") {
          require(value.is_string(), ErrorCode::kInvalidInput, field + " must be a category name", field);
          e.category = value.get<std::string>();
          continue;
        }
        Attr a;
        try {
          a = attr_from_name(key);
        } catch (const Error&) {
          fail(ErrorCode::kInvalidInput, "unknown element field '" + key + "'", field);
        }
        require(value.is_number() && std::isfinite(value.get<double>()), ErrorCode::kInvalidInput,
                field + " must be a finite number", field);
        const double v = value.get<double>();
        const double limit = !r.absolute ? 1.0 : (a == Attr::kX || a == Attr::kW) ? r.canvas_w : r.canvas_h;
        require(v >= 0.0, ErrorCode::kInvalidInput, field + " must be >= 0, got " + value.dump(), field);
        require(v <= limit, ErrorCode::kInvalidInput,
                field + " must be <= " + json(limit).dump() + ", got " + value.dump(), field);
        e.coords[static_cast<std::size_t>(coord_index(a))] = v;
      }
      r.elements.push_back(std::move(e));
    }
  }
  if (r.unconditional)
    require(r.elements.empty(), ErrorCode::kInvalidInput, "unconditional mode forbids elements", "elements");
  else
    require(!r.elements.empty(), ErrorCode::kInvalidInput, "conditional mode requires at least one element",
            "elements");
  return r;
}

inline DecodeConfig resolve_decode_config(const GenerateRequest& r, const LayoutSchema& schema) {
  const DecodeConfig base = r.unconditional ? DecodeConfig::unconditional() : DecodeConfig{};
  DecodeConfig c;
  try {
    c = decode_config_from_json(r.config_overrides, base);
  } catch (const Error& e) {
    fail(e.code(), e.what(), e.field().empty() ? "config" : "config." + e.field());
  }
  c.trace = c.trace || r.trace;
  try {
    c.validate(schema);
  } catch (const Error& e) {
    fail(e.code(), e.what(), "config." + e.field());
  }
  return c;
}

struct GenerateOutcome {
  Layout layout;   // normalized, as decoded
  json body;       // {"layout": ..., "trace"?: ...}
  int invocations = 0;
};

// Runs one generation. Locked fields are echoed with the caller's original
// values; generated coordinates are bin centers in the request's coordinate
// system.
inline GenerateOutcome handle_generate(const ServedModel& m, const GenerateRequest& r) {
  const LayoutSchema& schema = m.schema;
  const DecodeConfig config = resolve_decode_config(r, schema);
  const ModelLogits<float> model(m.params);
  Generation gen;
  if (r.unconditional) {
    if (r.num_elements) {
      require(*r.num_elements >= 1 && *r.num_elements <= schema.max_elements, ErrorCode::kCapacity,
              "num_elements must be in [1, " + std::to_string(schema.max_elements) + "]", "num_elements");
    } else {
      require(m.prior.has_value(), ErrorCode::kInvalidInput,
              "model '" + m.id + "' has no length prior; pass num_elements", "num_elements");
    }
    gen = generate_unconditional(model, m.prior.value_or(LengthPrior{}), schema, config, r.num_elements);
  } else {
    require(static_cast<int>(r.elements.size()) <= schema.max_elements, ErrorCode::kCapacity,
            std::to_string(r.elements.size()) + " elements exceed max_elements=" +
                std::to_string(schema.max_elements),
            "elements");
    std::vector<PartialElement> parts;
    for (std::size_t i = 0; i < r.elements.size(); ++i) {
      const RequestElement& e = r.elements[i];
      PartialElement p;
      if (e.category) {
        try {
          p.category = schema.category_index(*e.category);
        } catch (const Error& err) {
          fail(ErrorCode::kInvalidInput, err.what(), detail::element_field(i, "category"));
        }
      }
      for (Attr a : kCoordAttrs) {
        const auto& v = e.coords[static_cast<std::size_t>(coord_index(a))];
        if (!v) continue;
        const double extent = !r.absolute ? 1.0 : (a == Attr::kX || a == Attr::kW) ? r.canvas_w : r.canvas_h;
        p.set(a, quantize(*v / extent, schema.num_bins));
      }
      parts.push_back(p);
    }
    gen = generate_conditional(model, parts, schema, config, r.canvas_w, r.canvas_h);
  }

  json elements = json::array();
  for (std::size_t i = 0; i < gen.layout.elements.size(); ++i) {
    const Element& out = gen.layout.elements[i];
    const RequestElement* in = r.unconditional ? nullptr : &r.elements[i];
    json je;
    je["category"] = in && in->category ? *in->category : schema.categories.at(static_cast<std::size_t>(out.category));
    for (Attr a : kCoordAttrs) {
      const auto idx = static_cast<std::size_t>(coord_index(a));
      const double extent = !r.absolute ? 1.0 : (a == Attr::kX || a == Attr::kW) ? r.canvas_w : r.canvas_h;
      je[std::string(attr_name(a))] = in && in->coords[idx] ? *in->coords[idx] : out.coord(a) * extent;
    }
    elements.push_back(std::move(je));
  }
  GenerateOutcome outcome;
  outcome.invocations = gen.trace.invocations;
  outcome.body["layout"] = {{"canvas", {{"w", r.canvas_w}, {"h", r.canvas_h}}},
                            {"coords", r.absolute ? "absolute" : "normalized"},
                            {"elements", std::move(elements)}};
  if (config.trace) outcome.body["trace"] = gen.trace.to_json();
  outcome.layout = std::move(gen.layout);
  return outcome;
}

// ---------------------------------------------------------------------------
// Metrics, prior and attention

// {"layouts": [...], "references"?: [...], "metrics"?: "iou,..." | [...]}
inline json handle_evaluate(const ServedModel& m, const json& j) {
  require(j.is_object() && j.contains("layouts") && j.at("layouts").is_array(), ErrorCode::kInvalidInput,
          "layouts must be an array of layouts", "layouts");
  auto parse_all = [&](const char* key) {
    std::vector<Layout> out;
    const json& arr = j.at(key);
    require(arr.is_array(), ErrorCode::kInvalidInput, std::string(key) + " must be an array", key);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      try {
        out.push_back(layout_from_json(arr[i], m.schema));
      } catch (const Error& e) {
        fail(ErrorCode::kInvalidInput, e.what(), std::string(key) + "[" + std::to_string(i) + "]");
      }
    }
    return out;
  };
  const std::vector<Layout> layouts = parse_all("layouts");
  std::optional<std::vector<Layout>> refs;
  if (j.contains("references")) refs = parse_all("references");
  std::vector<std::string> metrics;
  if (j.contains("metrics")) {
    const json& jm = j.at("metrics");
    std::string text;
    if (jm.is_string()) {
      text = jm.get<std::string>();
    } else {
      require(jm.is_array(), ErrorCode::kInvalidInput, "metrics must be a list", "metrics");
      for (const auto& x : jm) {
        require(x.is_string(), ErrorCode::kInvalidInput, "metrics must be strings", "metrics");
        text += x.get<std::string>() + ",";
      }
    }
    metrics = parse_metric_list(text);
  } else {
    metrics = {"iou", "overlap", "alignment"};
    if (refs && refs->size() == layouts.size()) metrics.push_back("docsim");
  }
  std::function<Eigen::MatrixXd(const std::vector<Layout>&)> features;
  if (m.fid) features = [&](const std::vector<Layout>& ls) { return m.fid->features(ls); };
  return evaluate_layouts(layouts, metrics, refs ? &*refs : nullptr, features).to_json();
}

inline json handle_prior(const ServedModel& m) {
  if (!m.prior) fail(ErrorCode::kNotFound, "model '" + m.id + "' has no length prior");
  return m.prior->to_json();
}

// `seq` is a comma-separated list of token ids.
inline json handle_attention(const ServedModel& m, const std::string& seq) {
  std::vector<int> ids;
  std::stringstream ss(seq);
  std::string item;
  const int v = m.params.config.vocab_size;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int id = -1;
    try {
      id = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == item.size() && !item.empty(), ErrorCode::kInvalidInput, "seq: '" + item + "' is not a token id",
            "seq");
    require(id >= 0 && id < v, ErrorCode::kInvalidInput,
            "seq: token " + std::to_string(id) + " outside [0, " + std::to_string(v) + ")", "seq");
    ids.push_back(id);
  }
  require(!ids.empty(), ErrorCode::kInvalidInput, "seq must list at least one token", "seq");
  require(static_cast<int>(ids.size()) <= m.params.config.max_seq_len, ErrorCode::kInvalidInput,
          "seq is longer than the model's maximum length", "seq");
  std::vector<std::uint8_t> valid(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) valid[i] = ids[i] != Vocab::kPad;
  require(valid[0] != 0, ErrorCode::kInvalidInput, "seq must not start with PAD", "seq");
  const Tensor<float> att = export_attention(m.params, ids, valid);
  const auto& shape = att.shape();
  json weights = json::array();
  std::size_t off = 0;
  for (std::size_t l = 0; l < shape[0]; ++l) {
    json layer = json::array();
    for (std::size_t h = 0; h < shape[1]; ++h) {
      json head = json::array();
      for (std::size_t r = 0; r < shape[2]; ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < shape[3]; ++c) row.push_back(att[off++]);
        head.push_back(std::move(row));
      }
      layer.push_back(std::move(head));
    }
    weights.push_back(std::move(layer));
  }
  return {{"tokens", ids}, {"layers", shape[0]}, {"heads", shape[1]}, {"length", shape[2]}, {"weights", weights}};
}

// ---------------------------------------------------------------------------
// Error mapping

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput:
    case ErrorCode::kCapacity:
    case ErrorCode::kVocabulary:
    case ErrorCode::kSampleSize:
    case ErrorCode::kIngestion:
      return 400;
    case ErrorCode::kNotFound:
      return 404;
    default:
      return 500;
  }
}

// CLI exit codes: 0 success, 2 usage, 3 IO, 4 validation, 5 internal.
inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo:
    case ErrorCode::kCheckpoint:
      return 3;
    case ErrorCode::kInvalidInput:
    case ErrorCode::kCapacity:
    case ErrorCode::kVocabulary:
    case ErrorCode::kSampleSize:
    case ErrorCode::kIngestion:
    case ErrorCode::kNotFound:
      return 4;
    default:
      return 5;
  }
}

inline json error_body(const Error& e) {
  json body = {{"code", error_code_name(e.code())}, {"message", e.what()}};
  if (!e.field().empty()) body["field"] = e.field();
  return body;
}

}  // namespace lf
