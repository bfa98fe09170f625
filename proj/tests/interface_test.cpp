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

#include <fstream>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "layoutforge/layoutforge.hpp"
#include "layoutforge/server.hpp"
#include "process_util.hpp"

namespace lf {
namespace {

using testing_support::slurp;
using testing_support::spit;

// Runs the CLI to completion and returns its exit status.
int run_cli(const std::vector<std::string>& args, std::string* stderr_text = nullptr) {
  const std::string err_path = testing::TempDir() + "/cli_stderr.txt";
  const int status = testing_support::run_process(LAYOUTFORGE_CLI, args, err_path);
  if (stderr_text) *stderr_text = slurp(err_path);
  return status;
}

class ServiceTest : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new std::string(testing::TempDir() + "/service_test");
    std::filesystem::create_directories(*dir_);
    const LayoutCorpus corpus = generate_synthetic(400, 21);
    corpus_ = new LayoutCorpus(corpus);
    TrainConfig tc;
    tc.steps = 40;
    tc.seed = 5;
    const ModelConfig mc = ModelConfig::desk(Vocab(corpus.schema).size(), corpus.schema.max_seq_len());
    Trainer<float> trainer(init_params<float>(mc, 6), tc, corpus.train, corpus.schema);
    trainer.run({});
    checkpoint_ = new std::string(*dir_ + "/model.lfm");
    save_train_state(*checkpoint_, trainer.state(), tc,
                     model_metadata(corpus.schema, estimate_length_prior(corpus), {{"train_config", train_config_to_json(tc)}}));
    auto model = std::make_shared<ServedModel>(load_served_model(*checkpoint_));
    model_ = model.get();
    registry_ = new ModelRegistry;
    registry_->add(model);
    counters_ = new ServiceCounters;
    server_ = new httplib::Server;
    install_routes(*server_, *registry_, *counters_);
    port_ = server_->bind_to_any_port("127.0.0.1");
    thread_ = new std::thread([] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }
  static void TearDownTestSuite() {
    server_->stop();
    thread_->join();
    delete thread_;
    delete server_;
    delete counters_;
    delete registry_;
    delete corpus_;
    delete checkpoint_;
    delete dir_;
  }

  static httplib::Result post(const std::string& path, const std::string& body) {
    httplib::Client client("127.0.0.1", port_);
    return client.Post(path, body, "application/json");
  }
  static httplib::Result get(const std::string& path) {
    httplib::Client client("127.0.0.1", port_);
    return client.Get(path);
  }

  static std::string* dir_;
  static std::string* checkpoint_;
  static LayoutCorpus* corpus_;
  static const ServedModel* model_;
  static ModelRegistry* registry_;
  static ServiceCounters* counters_;
  static httplib::Server* server_;
  static std::thread* thread_;
  static int port_;
};

std::string* ServiceTest::dir_ = nullptr;
std::string* ServiceTest::checkpoint_ = nullptr;
LayoutCorpus* ServiceTest::corpus_ = nullptr;
const ServedModel* ServiceTest::model_ = nullptr;
ModelRegistry* ServiceTest::registry_ = nullptr;
ServiceCounters* ServiceTest::counters_ = nullptr;
httplib::Server* ServiceTest::server_ = nullptr;
std::thread* ServiceTest::thread_ = nullptr;
int ServiceTest::port_ = 0;

TEST_F(ServiceTest, HealthzIsOk) {
  const auto res = get("/healthz");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "ok");
}

TEST_F(ServiceTest, FullyLockedRequestIsNoOpWithEmptyTrace) {
  const json request = {{"elements",
                         {{{"category", "header"}, {"x", 0.5}, {"y", 0.05}, {"w", 1.0}, {"h", 0.1}},
                          {{"category", "text"}, {"x", 0.3}, {"y", 0.4}, {"w", 0.5}, {"h", 0.07}}}},
                        {"trace", true}};
  const auto res = post("/v1/generate", request.dump());
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  const json body = json::parse(res->body);
  EXPECT_EQ(body.at("layout").at("elements"), request.at("elements"));
  ASSERT_TRUE(body.contains("trace"));
  EXPECT_TRUE(body.at("trace").is_array());
  EXPECT_TRUE(body.at("trace").empty());
}

TEST_F(ServiceTest, TraceOnlyWhenRequested) {
  json request = {{"elements", {{{"category", "text"}}}}};
  json body = json::parse(post("/v1/generate", request.dump())->body);
  EXPECT_FALSE(body.contains("trace"));
  request["trace"] = true;
  body = json::parse(post("/v1/generate", request.dump())->body);
  ASSERT_TRUE(body.contains("trace"));
  // One element, C locked: S has 2 unknowns and P has 2, T_g = 4 each.
  EXPECT_EQ(body.at("trace").size(), 8u);
  const json& last = body.at("trace").back();
  EXPECT_EQ(last.at("remask_count"), 0);
  for (int id : last.at("snapshot").get<std::vector<int>>()) EXPECT_NE(id, Vocab::kMask);
}

TEST_F(ServiceTest, UnconditionalWithFixedSeedIsDeterministic) {
  const json request = {{"mode", "unconditional"}, {"config", {{"seed", 42}}}};
  const auto a = post("/v1/generate", request.dump());
  const auto b = post("/v1/generate", request.dump());
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->status, 200);
  EXPECT_EQ(a->body, b->body);
  const json other = {{"mode", "unconditional"}, {"config", {{"seed", 43}}}};
  const auto c = post("/v1/generate", other.dump());
  EXPECT_EQ(c->status, 200);
}

TEST_F(ServiceTest, CategoryAndSizeInputsAreEchoedUnchanged) {
  const json elements = {{{"category", "header"}, {"w", 0.9731}, {"h", 0.0812}},
                         {{"category", "image"}, {"w", 0.4111}, {"h", 0.2}},
                         {{"category", "button"}, {"w", 0.25}, {"h", 0.05}}};
  for (int seed = 0; seed < 5; ++seed) {
    const json request = {{"elements", elements}, {"config", {{"seed", seed}, {"predictor", "topk:5"}}}};
    const auto res = post("/v1/generate", request.dump());
    ASSERT_EQ(res->status, 200) << res->body;
    const json out = json::parse(res->body).at("layout").at("elements");
    ASSERT_EQ(out.size(), elements.size());
    for (std::size_t i = 0; i < elements.size(); ++i)
      for (const auto& [k, v] : elements[i].items()) EXPECT_EQ(out[i].at(k), v) << i << ' ' << k;
  }
}

TEST_F(ServiceTest, ValidationErrorsNameTheField) {
  struct Case {
    json request;
    int status;
    std::string field;
  };
  const std::vector<Case> cases = {
      {{{"elements", {{{"category", "text"}, {"w", -0.2}}}}}, 400, "elements[0].w"},
      {{{"elements", {{{"category", "text"}}, {{"category", "hero"}}}}}, 400, "elements[1].category"},
      {{{"elements", {{{"category", "text"}, {"x", "left"}}}}}, 400, "elements[0].x"},
      {{{"elements", {{{"category", "text"}, {"depth", 1}}}}}, 400, "elements[0].depth"},
      {{{"elements", json::array()}}, 400, "elements"},
      {{{"mode", "unconditional"}, {"elements", {{{"category", "text"}}}}}, 400, "elements"},
      {{{"elements", {{{"category", "text"}}}}, {"config", {{"T", 2}}}}, 400, "config.T"},
      {{{"elements", {{{"category", "text"}}}}, {"config", {{"group_order", "CS"}}}}, 400, "config.group_order"},
      {{{"elements", {{{"category", "text"}}}}, {"config", {{"predictor", "nucleus"}}}}, 400, "config.predictor"},
      {{{"elements", {{{"category", "text"}}}}, {"model", "other"}}, 404, "model"},
      {{{"mode", "sideways"}}, 400, "mode"},
      {{{"mode", "unconditional"}, {"num_elements", 99}}, 400, "num_elements"},
  };
  for (const auto& c : cases) {
    const auto res = post("/v1/generate", c.request.dump());
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, c.status) << c.request.dump() << " -> " << res->body;
    const json body = json::parse(res->body);
    EXPECT_TRUE(body.contains("code") && body.contains("message")) << res->body;
    EXPECT_EQ(body.value("field", std::string()), c.field) << c.request.dump();
  }
  const auto res = post("/v1/generate", "{not json");
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body).at("code"), "invalid_input");
}

TEST_F(ServiceTest, ModelsAndPrior) {
  const json models = json::parse(get("/v1/models")->body).at("models");
  ASSERT_EQ(models.size(), 1u);
  EXPECT_EQ(models[0].at("id"), "default");
  EXPECT_EQ(schema_from_json(models[0].at("schema")), corpus_->schema);
  EXPECT_EQ(models[0].at("config").at("vocab_size"), Vocab(corpus_->schema).size());
  const json prior = json::parse(get("/v1/prior")->body);
  EXPECT_EQ(prior, estimate_length_prior(*corpus_).to_json());
  EXPECT_EQ(get("/v1/prior?model=missing")->status, 404);
}

TEST_F(ServiceTest, AttentionDump) {
  const TokenSequence seq = tokenize(corpus_->test.front(), corpus_->schema);
  std::string ids;
  for (int i = 0; i < seq.content_length(); ++i) ids += (i ? "," : "") + std::to_string(seq.ids[static_cast<std::size_t>(i)]);
  const auto res = get("/v1/attention?seq=" + ids);
  ASSERT_EQ(res->status, 200) << res->body;
  const json body = json::parse(res->body);
  EXPECT_EQ(body.at("layers"), model_->params.config.num_layers);
  EXPECT_EQ(body.at("heads"), model_->params.config.num_heads);
  EXPECT_EQ(body.at("length"), seq.content_length());
  for (const auto& layer : body.at("weights"))
    for (const auto& head : layer)
      for (const auto& row : head) {
        double sum = 0;
        for (double w : row) sum += w;
        EXPECT_NEAR(sum, 1.0, 1e-5);
      }
  EXPECT_EQ(get("/v1/attention?seq=1,999")->status, 400);
  EXPECT_EQ(get("/v1/attention?seq=1,x")->status, 400);
  EXPECT_EQ(json::parse(get("/v1/attention")->body).at("field"), "seq");
}

TEST_F(ServiceTest, EvaluateMatchesLibrary) {
  std::vector<Layout> ls(corpus_->test.begin(), corpus_->test.begin() + 10);
  std::vector<Layout> refs(corpus_->val.begin(), corpus_->val.begin() + 10);
  json jl = json::array(), jr = json::array();
  for (const auto& l : ls) jl.push_back(layout_to_json(l, corpus_->schema));
  for (const auto& l : refs) jr.push_back(layout_to_json(l, corpus_->schema));
  const auto res = post("/v1/metrics/evaluate", json{{"layouts", jl}, {"references", jr}}.dump());
  ASSERT_EQ(res->status, 200) << res->body;
  const json body = json::parse(res->body);
  // Round trip through JSON re-quantizes, which is idempotent on corpus layouts.
  std::vector<Layout> parsed_ls, parsed_refs;
  for (const auto& j : jl) parsed_ls.push_back(layout_from_json(j, corpus_->schema));
  for (const auto& j : jr) parsed_refs.push_back(layout_from_json(j, corpus_->schema));
  const auto direct = evaluate_layouts(parsed_ls, {"iou", "overlap", "alignment", "docsim"}, &parsed_refs);
  EXPECT_EQ(body, direct.to_json());
  const auto bad = post("/v1/metrics/evaluate", json{{"layouts", jl}, {"metrics", "beauty"}}.dump());
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body).at("field"), "metrics");
  const auto fid = post("/v1/metrics/evaluate", json{{"layouts", jl}, {"references", jr}, {"metrics", "fid"}}.dump());
  EXPECT_EQ(fid->status, 400);
}

TEST_F(ServiceTest, ConcurrentRequestsMatchSequentialOnes) {
  std::vector<json> requests;
  for (int i = 0; i < 8; ++i)
    requests.push_back({{"mode", "unconditional"}, {"config", {{"seed", 100 + i}}}, {"trace", i % 2 == 0}});
  std::vector<std::string> sequential, parallel(requests.size());
  for (const auto& r : requests) sequential.push_back(post("/v1/generate", r.dump())->body);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < requests.size(); ++i)
    threads.emplace_back([&, i] { parallel[i] = post("/v1/generate", requests[i].dump())->body; });
  for (auto& t : threads) t.join();
  EXPECT_EQ(parallel, sequential);
}

TEST_F(ServiceTest, CliAndHttpAreByteIdentical) {
  testing_support::BackgroundProcess serve(LAYOUTFORGE_CLI, {"serve", "--model", *checkpoint_, "--port", "0"});
  const std::string banner = serve.read_line();
  const int port = testing_support::port_from_banner(banner);
  ASSERT_GT(port, 0) << banner;
  httplib::Client client("127.0.0.1", port);

  const std::vector<json> requests = {
      {{"elements", {{{"category", "header"}}, {{"category", "text"}, {"w", 0.5}}, {{"category", "footer"}}}},
       {"config", {{"seed", 7}}}},
      {{"elements", {{{"category", "image"}, {"x", 0.25}, {"y", 0.5}}, {{"category", "button"}}}},
       {"config", {{"seed", 8}, {"predictor", "topk:3"}, {"group_order", "PSC"}, {"T", 9}}},
       {"trace", true}},
      {{"mode", "unconditional"}, {"config", {{"seed", 9}}}},
      {{"mode", "unconditional"}, {"num_elements", 20}, {"config", {{"seed", 10}}}},
      {{"coords", "absolute"},
       {"canvas", {{"w", 360}, {"h", 640}}},
       {"elements", {{{"category", "text"}, {"x", 180}, {"w", 300}}, {{"category", "image"}}}},
       {"config", {{"seed", 11}}}},
  };
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const std::string req_path = *dir_ + "/req" + std::to_string(i) + ".json";
    const std::string out_path = *dir_ + "/out" + std::to_string(i) + ".json";
    const std::string trace_path = *dir_ + "/trace" + std::to_string(i) + ".json";
    spit(req_path, requests[i].dump());
    std::vector<std::string> args = {"generate", "--model", *checkpoint_, "--input", req_path, "--out", out_path};
    if (requests[i].value("trace", false)) {
      args.push_back("--trace");
      args.push_back(trace_path);
    }
    ASSERT_EQ(run_cli(args), 0);
    const auto res = client.Post("/v1/generate", requests[i].dump(), "application/json");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    const json body = json::parse(res->body);
    EXPECT_EQ(slurp(out_path), body.at("layout").dump(2) + "\n") << "request " << i;
    if (requests[i].value("trace", false)) {
      EXPECT_EQ(slurp(trace_path), body.at("trace").dump(2) + "\n");
    }
  }
}

TEST_F(ServiceTest, CliExitCodes) {
  std::string err;
  EXPECT_EQ(run_cli({"generate"}, &err), 2);
  EXPECT_EQ(run_cli({"frobnicate"}), 2);
  EXPECT_EQ(run_cli({"generate", "--model", *dir_ + "/missing.lfm", "--unconditional"}, &err), 3);
  EXPECT_NE(err.find("missing.lfm"), std::string::npos);
  spit(*dir_ + "/neg.json", R"({"elements":[{"category":"text","w":-1}]})");
  EXPECT_EQ(run_cli({"generate", "--model", *checkpoint_, "--input", *dir_ + "/neg.json", "--out", *dir_ + "/x.json"}, &err), 4);
  EXPECT_NE(err.find("elements[0].w"), std::string::npos);
  EXPECT_EQ(run_cli({"eval", "--data", *dir_ + "/none.jsonl", "--schema", *dir_ + "/none.json"}), 3);
}

TEST_F(ServiceTest, CliSynthEvalAndSvg) {
  const std::string data = *dir_ + "/synth.jsonl", schema = *dir_ + "/schema.json";
  ASSERT_EQ(run_cli({"synth", "--n", "60", "--seed", "3", "--out", data, "--schema-out", schema}), 0);
  const LayoutCorpus expected = generate_synthetic(60, 3);
  std::ostringstream os;
  write_corpus(os, expected.all(), expected.schema);
  EXPECT_EQ(slurp(data), os.str());

  // The corpus against itself beats a shuffled pairing on docsim.
  const std::string self = *dir_ + "/self.json";
  ASSERT_EQ(run_cli({"eval", "--data", data, "--schema", schema, "--layouts", data, "--metrics", "docsim,iou", "--out", self}), 0);
  const double self_docsim = json::parse(slurp(self)).at("docsim").at("mean").get<double>();
  auto shuffled = expected.all();
  Rng rng(4);
  shuffle(shuffled, rng);
  std::ofstream(*dir_ + "/shuffled.jsonl") << [&] {
    std::ostringstream s;
    write_corpus(s, shuffled, expected.schema);
    return s.str();
  }();
  const std::string other = *dir_ + "/other.json";
  ASSERT_EQ(run_cli({"eval", "--data", data, "--schema", schema, "--layouts", *dir_ + "/shuffled.jsonl", "--metrics", "docsim", "--out", other}), 0);
  EXPECT_GT(self_docsim, json::parse(slurp(other)).at("docsim").at("mean").get<double>());

  const std::string svg = *dir_ + "/u.svg";
  ASSERT_EQ(run_cli({"generate", "--model", *checkpoint_, "--unconditional", "--num-elements", "6", "--seed", "1",
                     "--out", *dir_ + "/u.json", "--svg", svg}), 0);
  const std::string text = slurp(svg);
  std::size_t rects = 0;
  for (std::size_t p = text.find("<rect"); p != std::string::npos; p = text.find("<rect", p + 1)) ++rects;
  EXPECT_EQ(rects, 6u);
}

TEST_F(ServiceTest, BenchCountsMatchDecoderContract) {
  const ModelLogits<float> logits(model_->params);
  const BenchReport report = run_bench(logits, model_->schema, {5, 20}, 2, DecodeConfig::unconditional());
  ASSERT_EQ(report.entries.size(), 2u);
  for (const auto& e : report.entries) {
    EXPECT_EQ(e.nar_invocations, count_model_invocations(report.config, e.num_elements));
    EXPECT_EQ(e.ar_invocations, count_autoregressive_invocations(e.num_elements));
    EXPECT_GT(e.speedup, 0.0);
  }
  EXPECT_EQ(report.entries[1].nar_invocations, 12);
  EXPECT_EQ(report.entries[1].ar_invocations, 101);
  const std::string out = *dir_ + "/bench.json";
  ASSERT_EQ(run_cli({"bench", "--model", *checkpoint_, "--objects", "20", "--repeats", "2", "--out", out}), 0);
  const json b = json::parse(slurp(out));
  EXPECT_EQ(b.at("results")[0].at("nar_invocations"), 12);
  EXPECT_EQ(b.at("results")[0].at("ar_invocations"), 101);
}

// Minimal XML well-formedness check: balanced, properly nested tags with
// quoted attributes and no raw '&' or '<' in text.
bool well_formed_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  if (s.rfind("<?xml", 0) == 0) i = s.find("?>") + 2;
  bool seen_root = false;
  while (i < s.size()) {
    if (s[i] == '<') {
      const std::size_t end = s.find('>', i);
      if (end == std::string::npos) return false;
      std::string tag = s.substr(i + 1, end - i - 1);
      i = end + 1;
      if (tag.empty()) return false;
      if (tag[0] == '/') {
        if (stack.empty() || stack.back() != tag.substr(1)) return false;
        stack.pop_back();
        continue;
      }
      const bool self_closing = tag.back() == '/';
      if (self_closing) tag.pop_back();
      const std::string name = tag.substr(0, tag.find_first_of(" \n\t"));
      // Attribute values must be double-quoted and free of '<' and raw '&'.
      std::size_t q = 0;
      int quotes = 0;
      while ((q = tag.find('"', q)) != std::string::npos) {
        ++quotes;
        ++q;
      }
      if (quotes % 2 != 0) return false;
      if (stack.empty() && seen_root) return false;
      seen_root = true;
      if (!self_closing) stack.push_back(name);
    } else if (s[i] == '&') {
      const std::size_t semi = s.find(';', i);
      if (semi == std::string::npos) return false;
      const std::string ent = s.substr(i, semi - i + 1);
      if (ent != "&amp;" && ent != "&lt;" && ent != "&gt;" && ent != "&quot;" && ent != "&apos;") return false;
      i = semi + 1;
    } else {
      if (stack.empty() && !std::isspace(static_cast<unsigned char>(s[i]))) return false;
      ++i;
    }
  }
  return stack.empty() && seen_root;
}

TEST(SvgTest, OneRectPerElementAndWellFormed) {
  const LayoutSchema schema = default_schema({"text & <image>", "btn"});
  Layout l;
  l.canvas_w = 360;
  l.canvas_h = 640;
  l.elements = {Element{0, 0.5, 0.5, 0.4, 0.2, std::nullopt}, Element{0, 0.5, 0.5, 0.4, 0.2, std::nullopt},
                Element{1, 0.2, 0.8, 0.1, 0.1, std::nullopt}};
  const std::string svg = render_svg(l, schema);
  EXPECT_TRUE(well_formed_xml(svg)) << svg;
  std::size_t rects = 0;
  for (std::size_t p = svg.find("<rect"); p != std::string::npos; p = svg.find("<rect", p + 1)) ++rects;
  EXPECT_EQ(rects, 3u);
  // Coincident boxes are both drawn.
  const std::string first = svg.substr(svg.find("<rect"), svg.find("/>", svg.find("<rect")) - svg.find("<rect"));
  std::size_t copies = 0;
  for (std::size_t p = svg.find(first); p != std::string::npos; p = svg.find(first, p + 1)) ++copies;
  EXPECT_EQ(copies, 2u);
  EXPECT_NE(svg.find("viewBox=\"0 0 562.500 1000.000\""), std::string::npos);
  EXPECT_NE(svg.find("text &amp; &lt;image&gt;"), std::string::npos);
  EXPECT_FALSE(well_formed_xml("<svg><g></svg></g>"));
  EXPECT_FALSE(well_formed_xml("<svg>a & b</svg>"));
}

TEST(ApiTest, ErrorMapping) {
  EXPECT_EQ(http_status(ErrorCode::kInvalidInput), 400);
  EXPECT_EQ(http_status(ErrorCode::kNotFound), 404);
  EXPECT_EQ(http_status(ErrorCode::kNumerical), 500);
  EXPECT_EQ(exit_code(ErrorCode::kIo), 3);
  EXPECT_EQ(exit_code(ErrorCode::kInvalidInput), 4);
  EXPECT_EQ(exit_code(ErrorCode::kDivergence), 5);
  const json body = error_body(Error(ErrorCode::kInvalidInput, "bad", "elements[0].w"));
  EXPECT_EQ(body, (json{{"code", "invalid_input"}, {"message", "bad"}, {"field", "elements[0].w"}}));
  EXPECT_FALSE(error_body(Error(ErrorCode::kIo, "x")).contains("field"));
}

TEST(ApiTest, PortFromEnvironment) {
  unsetenv("LAYOUTFORGE_PORT");
  EXPECT_EQ(default_port(), kDefaultPort);
  setenv("LAYOUTFORGE_PORT", "9123", 1);
  EXPECT_EQ(default_port(), 9123);
  setenv("LAYOUTFORGE_PORT", "http", 1);
  EXPECT_THROW(default_port(), Error);
  unsetenv("LAYOUTFORGE_PORT");
}

}  // namespace
}  // namespace lf
