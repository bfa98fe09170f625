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


// layoutforge: command-line front end for training, generation, evaluation,
// benchmarking, ablations and the HTTP service.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "layoutforge/layoutforge.hpp"
#include "layoutforge/server.hpp"

namespace {

using lf::ErrorCode;
using lf::json;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) lf::fail(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    lf::fail(ErrorCode::kInvalidInput, "'" + path + "' is not valid JSON: " + e.what());
  }
}

// "-" means standard output.
void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text << std::flush;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) lf::fail(ErrorCode::kIo, "cannot write '" + path + "'");
  out << text;
  if (!out) lf::fail(ErrorCode::kIo, "write to '" + path + "' failed");
}

std::vector<int> parse_int_list(const std::string& text, const std::string& flag) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      lf::fail(ErrorCode::kInvalidInput, flag + ": '" + item + "' is not an integer", flag);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, schema, out, policy = "hierarchical", log, resume;
  int steps = 2000, batch_size = 32, eval_interval = 200;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  int layers = 2, heads = 4, embed = 64, ffn = 128;
  double dropout = 0.1;
};

int run_train(const TrainArgs& a) {
  const lf::LayoutSchema schema = lf::schema_from_json(read_json(a.schema));
  const lf::LayoutCorpus corpus = lf::load_corpus(a.data, schema);
  lf::TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.steps = a.steps;
  tc.batch_size = a.batch_size;
  tc.eval_interval = a.eval_interval;
  tc.seed = a.seed;
  tc.policy = lf::MaskingPolicy::parse(a.policy);
  tc.validate();
  lf::ModelConfig mc{a.layers, a.heads, a.embed, a.ffn, schema.max_seq_len(), lf::Vocab(schema).size(), a.dropout};
  mc.validate();
  lf::ModelParams<float> init = a.resume.empty() ? lf::init_params<float>(mc, lf::derive_seed(a.seed, 2))
                                                 : lf::ModelParams<float>{};
  lf::Trainer<float> trainer(std::move(init), tc, corpus.train, schema);
  if (!a.resume.empty()) trainer.state() = lf::load_train_state<float>(a.resume);
  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) lf::fail(ErrorCode::kIo, "cannot write '" + log_path + "'");
  trainer.run(corpus.val, [&](const lf::TrainLogRecord& r) {
    log << r.to_json().dump() << '\n' << std::flush;
    std::cerr << r.to_json().dump() << '\n';
  });
  const json meta = lf::model_metadata(schema, lf::estimate_length_prior(corpus),
                                       {{"train_config", lf::train_config_to_json(tc)}, {"corpus", corpus.provenance}});
  lf::save_train_state(a.out, trainer.state(), tc, meta);
  return 0;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string model, input, out = "-", trace, svg, order, predictor;
  bool unconditional = false;
  std::optional<int> T, num_elements;
  std::optional<std::uint64_t> seed;
};

int run_generate(const GenerateArgs& a) {
  json request = a.input.empty() ? json::object() : read_json(a.input);
  if (a.unconditional) request["mode"] = "unconditional";
  if (a.num_elements) request["num_elements"] = *a.num_elements;
  json& config = request["config"];
  if (!config.is_object()) config = json::object();
  if (a.T) config["T"] = *a.T;
  if (!a.order.empty()) config["group_order"] = a.order;
  if (!a.predictor.empty()) config["predictor"] = a.predictor;
  if (a.seed) config["seed"] = *a.seed;
  if (!a.trace.empty()) request["trace"] = true;
  const lf::GenerateRequest r = lf::parse_generate_request(request);
  const lf::ServedModel model = lf::load_served_model(a.model);
  const lf::GenerateOutcome outcome = lf::handle_generate(model, r);
  write_text(a.out, outcome.body.at("layout").dump(2) + "\n");
  if (!a.trace.empty()) write_text(a.trace, outcome.body.at("trace").dump(2) + "\n");
  if (!a.svg.empty()) write_text(a.svg, lf::render_svg(outcome.layout, model.schema));
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string model, data, schema, layouts, metrics = "iou,overlap,alignment,docsim", fid_extractor, out = "-", csv;
  std::uint64_t seed = 0;
  int limit = 0;
};

int run_eval(const EvalArgs& a) {
  std::optional<lf::ServedModel> model;
  if (!a.model.empty()) model = lf::load_served_model(a.model);
  lf::LayoutSchema schema;
  if (!a.schema.empty())
    schema = lf::schema_from_json(read_json(a.schema));
  else if (model)
    schema = model->schema;
  else
    lf::fail(ErrorCode::kInvalidInput, "eval needs --model or --schema", "schema");
  std::vector<lf::Layout> refs = lf::load_corpus(a.data, schema).all();
  if (a.limit > 0 && refs.size() > static_cast<std::size_t>(a.limit)) refs.resize(static_cast<std::size_t>(a.limit));
  std::vector<lf::Layout> generated;
  if (!a.layouts.empty()) {
    generated = lf::load_corpus(a.layouts, schema).all();
    if (a.limit > 0 && generated.size() > static_cast<std::size_t>(a.limit))
      generated.resize(static_cast<std::size_t>(a.limit));
  } else {
    if (!model) lf::fail(ErrorCode::kInvalidInput, "eval needs --model or --layouts", "model");
    // Category-conditioned completion of every reference layout.
    const lf::ModelLogits<float> logits(model->params);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      std::vector<lf::PartialElement> parts(refs[i].elements.size());
      for (std::size_t e = 0; e < parts.size(); ++e) parts[e].category = refs[i].elements[e].category;
      lf::DecodeConfig c;
      c.seed = lf::derive_seed(a.seed, i);
      generated.push_back(lf::generate_conditional(logits, parts, schema, c).layout);
    }
  }
  const std::vector<std::string> metrics = lf::parse_metric_list(a.metrics);
  std::function<Eigen::MatrixXd(const std::vector<lf::Layout>&)> features;
  std::optional<lf::FidExtractor> extractor;
  if (std::find(metrics.begin(), metrics.end(), "fid") != metrics.end()) {
    if (!a.fid_extractor.empty()) {
      extractor = lf::FidExtractor::load(a.fid_extractor);
    } else {
      std::cerr << "training a feature extractor on the reference layouts\n";
      extractor = lf::train_fid_extractor(refs, schema, a.seed);
    }
    features = [&](const std::vector<lf::Layout>& ls) { return extractor->features(ls); };
  }
  const lf::MetricReport report = lf::evaluate_layouts(generated, metrics, &refs, features);
  write_text(a.out, report.to_json().dump(2) + "\n");
  if (!a.csv.empty()) write_text(a.csv, report.to_csv());
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string model, objects = "5,10,15,20,25", out = "-", order = "CSP";
  int repeats = 100, T = 12;
  std::uint64_t seed = 0;
};

int run_bench(const BenchArgs& a) {
  const lf::ServedModel model = lf::load_served_model(a.model);
  lf::DecodeConfig c = lf::DecodeConfig::unconditional();
  c.T = a.T;
  c.group_order = lf::parse_group_order(a.order);
  c.seed = a.seed;
  const lf::BenchReport report =
      lf::run_bench(lf::ModelLogits<float>(model.params), model.schema, parse_int_list(a.objects, "objects"), a.repeats, c);
  write_text(a.out, report.to_json().dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::vector<std::string> models;
  std::string host = "127.0.0.1", fid_extractor;
  std::optional<int> port;
};

httplib::Server* g_server = nullptr;

int run_serve(const ServeArgs& a) {
  lf::ModelRegistry registry;
  std::shared_ptr<const lf::FidExtractor> fid;
  if (!a.fid_extractor.empty()) fid = std::make_shared<const lf::FidExtractor>(lf::FidExtractor::load(a.fid_extractor));
  for (const std::string& spec : a.models) {
    // "id=path" or a bare path served as "default".
    const auto eq = spec.find('=');
    const std::string id = eq == std::string::npos ? "default" : spec.substr(0, eq);
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    auto m = std::make_shared<lf::ServedModel>(lf::load_served_model(path, id));
    m->fid = fid;
    registry.add(std::move(m));
  }
  lf::ServiceCounters counters;
  httplib::Server server;
  lf::install_routes(server, registry, counters);
  const int requested = a.port.value_or(lf::default_port());
  int port = requested;
  if (requested == 0) {
    port = server.bind_to_any_port(a.host);
  } else if (!server.bind_to_port(a.host, requested)) {
    port = -1;
  }
  if (port <= 0) lf::fail(ErrorCode::kIo, "cannot listen on " + a.host + ":" + std::to_string(requested));
  std::cout << "listening on http://" << a.host << ":" << port << std::endl;
  g_server = &server;
  std::signal(SIGINT, [](int) { g_server->stop(); });
  std::signal(SIGTERM, [](int) { g_server->stop(); });
  server.listen_after_bind();
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  int n = 2000;
  std::uint64_t seed = 0;
  std::string out, schema_out;
  lf::SyntheticStyle style;
};

int run_synth(const SynthArgs& a) {
  const lf::LayoutCorpus corpus = lf::generate_synthetic(a.n, a.seed, a.style);
  std::ostringstream os;
  lf::write_corpus(os, corpus.all(), corpus.schema);
  write_text(a.out, os.str());
  if (!a.schema_out.empty()) write_text(a.schema_out, lf::schema_to_json(corpus.schema).dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string spec, results = "ablation_results";
};

int run_ablate(const AblateArgs& a) {
  const lf::AblationSpec spec = lf::load_ablation_spec(a.spec);
  const lf::LayoutCorpus corpus = lf::load_ablation_corpus(spec);
  const lf::AblationResult result =
      lf::run_ablation(spec, corpus, a.results, nullptr, [](const std::string& line) { std::cerr << line << '\n'; });
  std::cout << result.to_markdown();
  return 0;
}

struct FidTrainArgs {
  std::string data, schema, out;
  std::uint64_t seed = 0;
  int steps = 400;
};

int run_fid_train(const FidTrainArgs& a) {
  const lf::LayoutSchema schema = lf::schema_from_json(read_json(a.schema));
  const lf::LayoutCorpus corpus = lf::load_corpus(a.data, schema);
  lf::FidConfig cfg;
  cfg.steps = a.steps;
  const lf::FidExtractor ex = lf::train_fid_extractor(corpus.train, schema, a.seed, cfg);
  std::vector<lf::Layout> fake;
  lf::Rng rng(lf::derive_seed(a.seed, 9));
  for (const auto& l : corpus.test) fake.push_back(lf::jitter_positions(l, schema.num_bins, cfg.jitter_bins, rng));
  if (!corpus.test.empty()) std::cerr << "held-out accuracy " << ex.accuracy(corpus.test, fake) << '\n';
  ex.save(a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  lf::configure_allocator();
  CLI::App app{"LayoutForge: layout generation by iterative attribute refinement"};
  app.require_subcommand(1);
  std::function<int()> action;

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model on a JSONL corpus");
  t->add_option("--data", train.data, "Corpus (JSONL)")->required();
  t->add_option("--schema", train.schema, "Schema JSON")->required();
  t->add_option("--out", train.out, "Checkpoint path")->required();
  t->add_option("--policy", train.policy, "hierarchical | random:<ratio>");
  t->add_option("--steps", train.steps);
  t->add_option("--seed", train.seed);
  t->add_option("--lr", train.lr);
  t->add_option("--batch-size", train.batch_size);
  t->add_option("--eval-interval", train.eval_interval);
  t->add_option("--log", train.log, "Training log (JSONL); defaults to <out>.log.jsonl");
  t->add_option("--resume", train.resume, "Continue from a checkpoint with optimizer state");
  t->add_option("--layers", train.layers);
  t->add_option("--heads", train.heads);
  t->add_option("--embed", train.embed);
  t->add_option("--ffn", train.ffn);
  t->add_option("--dropout", train.dropout);
  t->callback([&] { action = [&] { return run_train(train); }; });

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Complete a partial layout or sample an unconditional one");
  g->add_option("--model", gen.model, "Checkpoint")->required();
  auto* input = g->add_option("--input", gen.input, "Generation request JSON");
  auto* uncond = g->add_flag("--unconditional", gen.unconditional, "Sample without conditions");
  input->excludes(uncond);
  g->add_option("--num-elements", gen.num_elements, "Fixed element count for unconditional sampling");
  g->add_option("--T", gen.T, "Refinement iterations");
  g->add_option("--order", gen.order, "Group order, e.g. CSP");
  g->add_option("--predictor", gen.predictor, "greedy | topk:<k>");
  g->add_option("--seed", gen.seed);
  g->add_option("--out", gen.out, "Layout JSON output ('-' for stdout)");
  g->add_option("--trace", gen.trace, "Write the refinement trace here");
  g->add_option("--svg", gen.svg, "Write an SVG rendering here");
  g->callback([&] {
    if (gen.input.empty() && !gen.unconditional) throw CLI::ValidationError("generate", "needs --input or --unconditional");
    action = [&] { return run_generate(gen); };
  });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compute layout metrics");
  e->add_option("--model", ev.model, "Checkpoint; completes each reference from its categories");
  e->add_option("--data", ev.data, "Reference layouts (JSONL)")->required();
  e->add_option("--schema", ev.schema, "Schema JSON (defaults to the model's)");
  e->add_option("--layouts", ev.layouts, "Evaluate these layouts instead of generating");
  e->add_option("--metrics", ev.metrics, "Comma-separated: iou,overlap,alignment,docsim,fid");
  e->add_option("--fid-extractor", ev.fid_extractor, "Feature extractor checkpoint for fid");
  e->add_option("--seed", ev.seed);
  e->add_option("--limit", ev.limit, "Use at most this many layouts");
  e->add_option("--out", ev.out, "MetricReport JSON output");
  e->add_option("--csv", ev.csv, "Per-layout CSV output");
  e->callback([&] { action = [&] { return run_eval(ev); }; });

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Time refinement against the autoregressive schedule");
  b->add_option("--model", bench.model, "Checkpoint")->required();
  b->add_option("--objects", bench.objects, "Comma-separated object counts");
  b->add_option("--repeats", bench.repeats);
  b->add_option("--T", bench.T);
  b->add_option("--order", bench.order);
  b->add_option("--seed", bench.seed);
  b->add_option("--out", bench.out);
  b->callback([&] { action = [&] { return run_bench(bench); }; });

  ServeArgs serve;
  auto* s = app.add_subcommand("serve", "Start the HTTP service");
  s->add_option("--model", serve.models, "Checkpoint, or id=checkpoint (repeatable)")->required();
  s->add_option("--port", serve.port, "Port (0 picks a free one; default $LAYOUTFORGE_PORT or 8080)");
  s->add_option("--host", serve.host);
  s->add_option("--fid-extractor", serve.fid_extractor, "Feature extractor for fid in /v1/metrics/evaluate");
  s->callback([&] { action = [&] { return run_serve(serve); }; });

  SynthArgs synth;
  auto* y = app.add_subcommand("synth", "Write a synthetic corpus");
  y->add_option("--n", synth.n);
  y->add_option("--seed", synth.seed);
  y->add_option("--out", synth.out, "Corpus output (JSONL)")->required();
  y->add_option("--schema-out", synth.schema_out, "Also write the schema here");
  y->add_option("--min-items", synth.style.min_items);
  y->add_option("--max-items", synth.style.max_items);
  y->add_option("--jitter-bins", synth.style.jitter_bins);
  y->add_option("--num-bins", synth.style.num_bins);
  y->add_option("--max-elements", synth.style.max_elements);
  y->callback([&] { action = [&] { return run_synth(synth); }; });

  AblateArgs ablate;
  auto* ab = app.add_subcommand("ablate", "Run an ablation spec");
  ab->add_option("--spec", ablate.spec, "Ablation spec JSON")->required();
  ab->add_option("--results", ablate.results, "Results directory");
  ab->callback([&] { action = [&] { return run_ablate(ablate); }; });

  FidTrainArgs fid;
  auto* f = app.add_subcommand("fid-train", "Train the feature extractor used by fid");
  f->add_option("--data", fid.data)->required();
  f->add_option("--schema", fid.schema)->required();
  f->add_option("--out", fid.out)->required();
  f->add_option("--seed", fid.seed);
  f->add_option("--steps", fid.steps);
  f->callback([&] { action = [&] { return run_fid_train(fid); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }
  try {
    return action();
  } catch (const lf::Error& err) {
    std::cerr << "error [" << lf::error_code_name(err.code()) << "]: " << err.what();
    if (!err.field().empty()) std::cerr << " (field " << err.field() << ")";
    std::cerr << '\n';
    return lf::exit_code(err.code());
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << '\n';
    return 5;
  }
}
