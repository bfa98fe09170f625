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

#include <gtest/gtest.h>

#include "layoutforge/layoutforge.hpp"

namespace lf {
namespace {

json read(const std::string& name) {
  std::ifstream in(std::string(LAYOUTFORGE_SAMPLES) + "/" + name);
  return json::parse(in);
}

TEST(SamplesTest, SchemaMatchesSyntheticCorpus) {
  EXPECT_EQ(schema_from_json(read("synthetic_schema.json")), synthetic_schema());
}

TEST(SamplesTest, RequestsParseAndResolve) {
  const LayoutSchema schema = synthetic_schema();
  const GenerateRequest cond = parse_generate_request(read("request_category_size.json"));
  EXPECT_FALSE(cond.unconditional);
  EXPECT_EQ(cond.elements.size(), 5u);
  EXPECT_TRUE(cond.trace);
  EXPECT_EQ(resolve_decode_config(cond, schema).seed, 7u);
  const GenerateRequest uncond = parse_generate_request(read("request_unconditional.json"));
  EXPECT_TRUE(uncond.unconditional);
  EXPECT_EQ(resolve_decode_config(uncond, schema).predictor, Predictor::top_k(5));
}

TEST(SamplesTest, AblationSpecsLoad) {
  const AblationSpec sampling = load_ablation_spec(std::string(LAYOUTFORGE_SAMPLES) + "/ablation_sampling.json");
  EXPECT_EQ(sampling.variants.size(), 2u);
  EXPECT_EQ(sampling.variants[0].factor(), "policy");
  const AblationSpec order = load_ablation_spec(std::string(LAYOUTFORGE_SAMPLES) + "/ablation_order.json");
  EXPECT_EQ(order.variants[1].factor(), "group_order");
  EXPECT_EQ(order.condition, "unconditional");
}

}  // namespace
}  // namespace lf
