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

#include <chrono>
#include <string>
#include <vector>

#include "layoutforge/decoder.hpp"
#include "layoutforge/metrics.hpp"

namespace lf {

struct BenchEntry {
  int num_elements = 0;
  int nar_invocations = 0;
  int ar_invocations = 0;
  MetricSummary nar_wall_ms;
  MetricSummary ar_sim_wall_ms;
  double speedup = 0;  // ar_sim mean / nar mean
};

struct BenchReport {
  DecodeConfig config;
  int repeats = 0;
  std::vector<BenchEntry> entries;

  json to_json() const {
    json rows = json::array();
    for (const auto& e : entries) {
      rows.push_back({{"objects", e.num_elements},
                      {"nar_invocations", e.nar_invocations},
                      {"ar_invocations", e.ar_invocations},
                      {"nar_wall_ms", {{"mean", e.nar_wall_ms.mean}, {"std", e.nar_wall_ms.std}}},
                      {"ar_sim_wall_ms", {{"mean", e.ar_sim_wall_ms.mean}, {"std", e.ar_sim_wall_ms.std}}},
                      {"speedup", e.speedup}});
    }
    return {{"config", decode_config_to_json(config)}, {"repeats", repeats}, {"results", rows}};
  }
};

// Times non-autoregressive refinement of K all-unknown elements against the
// simulated autoregressive schedule on the same network, batch size 1.
template <LogitSource M>
BenchReport run_bench(const M& model, const LayoutSchema& schema, const std::vector<int>& object_counts,
                      int repeats, DecodeConfig config = {}) {
  require(repeats >= 1, ErrorCode::kInvalidInput, "bench: repeats must be >= 1", "repeats");
  require(!object_counts.empty(), ErrorCode::kInvalidInput, "bench: no object counts", "objects");
  config.trace = false;
  config.validate(schema);
  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };
  BenchReport report{config, repeats, {}};
  for (int k : object_counts) {
    require(k >= 1 && k <= schema.max_elements, ErrorCode::kCapacity,
            "bench: " + std::to_string(k) + " objects outside [1, " + std::to_string(schema.max_elements) + "]",
            "objects");
    const std::vector<PartialElement> blank(static_cast<std::size_t>(k));
    const TokenSequence input = make_conditional_input(blank, schema);
    BenchEntry entry;
    entry.num_elements = k;
    refine(model, input, schema, config);  // warm-up
    std::vector<double> nar, ar;
    for (int r = 0; r < repeats; ++r) {
      DecodeConfig c = config;
      c.seed = derive_seed(config.seed, static_cast<std::uint64_t>(r));
      auto t0 = Clock::now();
      const DecodeResult res = refine(model, input, schema, c);
      nar.push_back(ms_since(t0));
      entry.nar_invocations = res.trace.invocations;
      t0 = Clock::now();
      simulate_autoregressive(model, k, schema, &entry.ar_invocations);
      ar.push_back(ms_since(t0));
    }
    entry.nar_wall_ms = summarize(nar);
    entry.ar_sim_wall_ms = summarize(ar);
    entry.speedup = entry.ar_sim_wall_ms.mean / entry.nar_wall_ms.mean;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace lf
