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
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "layoutforge/tensor.hpp"

namespace lf {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Location of the worst entry.
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // When nonzero, check at most this many entries per parameter, chosen by a
  // seeded draw; otherwise every entry is checked.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
};

// Compares tape gradients of a scalar function against central differences
// (f(p+e) - f(p-e)) / 2e. `loss_fn` builds the loss on the tape it is given
// and must be deterministic (dropout off).
template <typename T>
GradCheckReport finite_difference_check(const std::function<Tensor<T>(Tape<T>&)>& loss_fn,
                                        std::vector<Tensor<T>> params, const GradCheckOptions& opt = {}) {
  require(opt.epsilon > 0, ErrorCode::kInvalidInput, "finite_difference_check: epsilon must be positive");
  GradCheckReport report;
  if (params.empty()) return report;

  auto evaluate = [&]() -> double {
    Tape<T> tape(false);
    return static_cast<double>(loss_fn(tape).item());
  };
  const double f0 = evaluate();
  const double f0_again = evaluate();
  if (f0 != f0_again)
    fail(ErrorCode::kNumerical, "finite_difference_check: function is not deterministic (" +
                                    std::to_string(f0) + " vs " + std::to_string(f0_again) + ")");

  for (auto& p : params) p.zero_grad();
  {
    Tape<T> tape(true);
    auto loss = loss_fn(tape);
    tape.backward(loss);
  }

  Rng rng(opt.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::vector<T> analytic = p.has_grad() ? p.grad() : std::vector<T>(p.size(), T(0));
    std::vector<std::size_t> indices(p.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (opt.max_entries_per_param && indices.size() > opt.max_entries_per_param) {
      partial_shuffle(indices, opt.max_entries_per_param, rng);
      indices.resize(opt.max_entries_per_param);
    }
    for (std::size_t idx : indices) {
      const T saved = p[idx];
      p[idx] = saved + static_cast<T>(opt.epsilon);
      const double up = evaluate();
      p[idx] = saved - static_cast<T>(opt.epsilon);
      const double down = evaluate();
      p[idx] = saved;
      const double numeric = (up - down) / (2.0 * opt.epsilon);
      const double a = static_cast<double>(analytic[idx]);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++report.checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_param = pi;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_relative_error < opt.tolerance;
  return report;
}

}  // namespace lf
