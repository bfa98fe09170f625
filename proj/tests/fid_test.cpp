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

#include <gtest/gtest.h>

#include "layoutforge/dataset.hpp"
#include "layoutforge/fid.hpp"

namespace lf {
namespace {

TEST(JitterTest, StaysOnGridWithinRadius) {
  const auto corpus = generate_synthetic(50, 1);
  Rng rng(2);
  for (const auto& l : corpus.all()) {
    const Layout j = jitter_positions(l, 32, 3, rng);
    ASSERT_EQ(j.elements.size(), l.elements.size());
    for (std::size_t i = 0; i < l.elements.size(); ++i) {
      EXPECT_LE(std::abs(j.elements[i].bin(Attr::kX) - l.elements[i].bin(Attr::kX)), 3);
      EXPECT_LE(std::abs(j.elements[i].bin(Attr::kY) - l.elements[i].bin(Attr::kY)), 3);
      EXPECT_EQ(j.elements[i].bin(Attr::kW), l.elements[i].bin(Attr::kW));
      EXPECT_EQ(j.elements[i].category, l.elements[i].category);
    }
  }
}

class FidExtractorTest : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    corpus_ = new LayoutCorpus(generate_synthetic(1500, 3));
    extractor_ = new FidExtractor(train_fid_extractor(corpus_->train, corpus_->schema, 4));
  }
  static void TearDownTestSuite() {
    delete extractor_;
    delete corpus_;
  }
  static LayoutCorpus* corpus_;
  static FidExtractor* extractor_;
};

LayoutCorpus* FidExtractorTest::corpus_ = nullptr;
FidExtractor* FidExtractorTest::extractor_ = nullptr;

TEST_F(FidExtractorTest, SeparatesRealFromJittered) {
  std::vector<Layout> real = corpus_->test, fake;
  Rng rng(5);
  for (const auto& l : real) fake.push_back(jitter_positions(l, 32, 3, rng));
  EXPECT_GT(extractor_->accuracy(real, fake), 0.8);
}

TEST_F(FidExtractorTest, DistanceOrderings) {
  const auto& train = corpus_->train;
  std::vector<Layout> half_a(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(train.size() / 2));
  std::vector<Layout> half_b(train.begin() + static_cast<std::ptrdiff_t>(train.size() / 2), train.end());
  std::vector<Layout> jittered;
  Rng rng(6);
  for (const auto& l : half_b) jittered.push_back(jitter_positions(l, 32, 3, rng));
  const auto fa = extractor_->features(half_a);
  EXPECT_EQ(fa.cols(), extractor_->dim());
  EXPECT_LT(frechet_distance(fa, fa), 1e-8);
  const double real_real = frechet_distance(fa, extractor_->features(half_b));
  const double real_fake = frechet_distance(fa, extractor_->features(jittered));
  EXPECT_GT(real_fake, real_real);
}

TEST_F(FidExtractorTest, SaveLoadKeepsFeatures) {
  const std::string path = testing::TempDir() + "/fid.lfm";
  extractor_->save(path);
  const auto loaded = FidExtractor::load(path);
  const std::vector<Layout> some(corpus_->val.begin(), corpus_->val.begin() + 10);
  EXPECT_EQ(loaded.features(some), extractor_->features(some));
}

}  // namespace
}  // namespace lf
