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

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "layoutforge/ablation.hpp"

namespace lf {
namespace {

AblationSpec small_spec() {
  AblationSpec s;
  s.name = "small";
  s.synthetic_n = 200;
  s.train.steps = 15;
  s.train.batch_size = 16;
  s.trials = 2;
  s.seed_base = 11;
  s.eval_count = 8;
  return s;
}

TEST(AblationSpecTest, VariantsMustVaryExactlyOneSharedFactor) {
  AblationSpec s = small_spec();
  EXPECT_THROW(s.validate(), Error);  // no variants
  s.variants = {{"a", MaskingPolicy::hierarchical(), std::nullopt}};
  EXPECT_NO_THROW(s.validate());
  s.variants.push_back({"b", std::nullopt, parse_group_order("SPC")});
  EXPECT_THROW(s.validate(), Error);
  s.variants = {{"both", MaskingPolicy::hierarchical(), parse_group_order("SPC")}};
  EXPECT_THROW(s.validate(), Error);
  s.variants = {{"a", MaskingPolicy::hierarchical(), std::nullopt}};
  s.condition = "layout";
  EXPECT_THROW(s.validate(), Error);
}

TEST(AblationSpecTest, JsonRoundTrip) {
  const json j = json::parse(R"({
    "name": "sampling",
    "corpus": {"synthetic": {"n": 500, "seed": 4}},
    "variants": [{"policy": "hierarchical"}, {"name": "bert", "policy": "random:0.15"}],
    "train": {"steps": 100, "learning_rate": 0.0005},
    "decode": {"T": 9},
    "trials": 3,
    "seed_base": 7
  })");
  const AblationSpec s = AblationSpec::from_json(j);
  EXPECT_EQ(s.synthetic_n, 500);
  EXPECT_EQ(s.synthetic_seed, 4u);
  ASSERT_EQ(s.variants.size(), 2u);
  EXPECT_EQ(s.variants[0].name, "hierarchical");
  EXPECT_EQ(s.variants[1].name, "bert");
  EXPECT_DOUBLE_EQ(s.variants[1].policy->ratio, 0.15);
  EXPECT_EQ(s.train.steps, 100);
  EXPECT_EQ(s.decode.T, 9);
  EXPECT_EQ(AblationSpec::from_json(s.to_json()).to_json(), s.to_json());
  EXPECT_THROW(AblationSpec::from_json(json::parse(R"({"variants": [{"policy": "sometimes"}]})")), Error);
}

TEST(AblationTest, IdenticalVariantsGiveIdenticalStatistics) {
  AblationSpec s = small_spec();
  s.variants = {{"first", MaskingPolicy::random(0.15), std::nullopt}, {"second", MaskingPolicy::random(0.15), std::nullopt}};
  const LayoutCorpus corpus = load_ablation_corpus(s);
  ModelCache cache;
  int trainings = 0;
  const AblationResult r = run_ablation(s, corpus, std::nullopt, &cache, [&](const std::string& line) {
    trainings += line.rfind("train ", 0) == 0;
  });
  ASSERT_EQ(r.variants.size(), 2u);
  EXPECT_EQ(trainings, 2);  // one per trial; the second variant hits the cache
  for (const auto& m : s.metrics) {
    EXPECT_EQ(r.variants[0].summary.at(m).mean, r.variants[1].summary.at(m).mean);
    EXPECT_EQ(r.variants[0].summary.at(m).std, r.variants[1].summary.at(m).std);
  }
  // Without a shared cache the retrained models reproduce the same numbers.
  const AblationResult again = run_ablation(s, corpus);
  EXPECT_EQ(again.to_json().at("variants"), r.to_json().at("variants"));
}

TEST(AblationTest, TrialsSeedFromBaseAndStdIsSampleStd) {
  AblationSpec s = small_spec();
  s.trials = 3;
  s.variants = {{"hsp", MaskingPolicy::hierarchical(), std::nullopt}};
  const AblationResult r = run_ablation(s, load_ablation_corpus(s));
  const auto& v = r.variants.front();
  ASSERT_EQ(v.trials.size(), 3u);
  std::vector<double> iou;
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(v.trials[static_cast<std::size_t>(t)].seed, 11u + static_cast<std::uint64_t>(t));
    iou.push_back(v.trials[static_cast<std::size_t>(t)].means.at("iou"));
  }
  const double mean = (iou[0] + iou[1] + iou[2]) / 3;
  double sq = 0;
  for (double x : iou) sq += (x - mean) * (x - mean);
  EXPECT_NEAR(v.summary.at("iou").mean, mean, 1e-12);
  EXPECT_NEAR(v.summary.at("iou").std, std::sqrt(sq / 2), 1e-12);
}

TEST(AblationTest, GroupOrderVariantsShareOneModelPerTrial) {
  AblationSpec s = small_spec();
  s.condition = "unconditional";
  s.decode = DecodeConfig::unconditional();
  s.variants = {{"CSP", std::nullopt, parse_group_order("CSP")}, {"SPC", std::nullopt, parse_group_order("SPC")}};
  int trainings = 0;
  const std::string dir = testing::TempDir() + "/ablation_order";
  std::filesystem::remove_all(dir);
  const AblationResult r = run_ablation(s, load_ablation_corpus(s), dir, nullptr, [&](const std::string& line) {
    trainings += line.rfind("train ", 0) == 0;
  });
  EXPECT_EQ(trainings, s.trials);
  EXPECT_TRUE(std::filesystem::exists(dir + "/CSP.json"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/SPC.json"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/summary.json"));
  std::ifstream md(dir + "/summary.md");
  std::string header;
  std::getline(md, header);
  EXPECT_EQ(header, "## small");
  const json csp = json::parse(std::ifstream(dir + "/CSP.json"));
  EXPECT_EQ(csp.at("variant"), "CSP");
  EXPECT_EQ(csp.at("trials").size(), 2u);
  EXPECT_NE(r.to_markdown().find("| CSP | 2/2 |"), std::string::npos);
}

TEST(AblationTest, DivergingTrialIsFlaggedAndOthersReported) {
  AblationSpec s = small_spec();
  s.train.learning_rate = 1e30;
  s.train.grad_clip = 0;
  s.variants = {{"explodes", MaskingPolicy::hierarchical(), std::nullopt}};
  const AblationResult r = run_ablation(s, load_ablation_corpus(s));
  const auto& v = r.variants.front();
  EXPECT_TRUE(v.flagged);
  ASSERT_EQ(v.trials.size(), 2u);
  for (const auto& t : v.trials) {
    EXPECT_TRUE(t.diverged);
    EXPECT_NE(t.error.find("diverged"), std::string::npos);
  }
  EXPECT_NE(r.to_markdown().find("n/a"), std::string::npos);
}

}  // namespace
}  // namespace lf
