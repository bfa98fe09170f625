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

// Layout-quality metrics: perceptual IOU, overlap, alignment, DocSim and the
// Frechet distance between feature sets, plus report aggregation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "layoutforge/error.hpp"
#include "layoutforge/layout.hpp"

namespace lf {

struct Box {
  double left = 0, top = 0, right = 0, bottom = 0;

  double width() const { return std::max(0.0, right - left); }
  double height() const { return std::max(0.0, bottom - top); }
  double area() const { return width() * height(); }
  double cx() const { return (left + right) / 2; }
  double cy() const { return (top + bottom) / 2; }
};

inline Box box_of(const Element& e) { return {e.x - e.w / 2, e.y - e.h / 2, e.x + e.w / 2, e.y + e.h / 2}; }

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.right, b.right) - std::max(a.left, b.left);
  const double h = std::min(a.bottom, b.bottom) - std::max(a.top, b.top);
  return w > 0 && h > 0 ? w * h : 0.0;
}

// R x R coverage counts. A cell is covered by a box when the cell center lies
// in the box (left/top edges inclusive, right/bottom exclusive).
class RasterGrid {
 public:
  explicit RasterGrid(int resolution = 256) : r_(resolution), counts_(static_cast<std::size_t>(r_) * r_, 0) {
    require(resolution >= 1, ErrorCode::kInvalidInput, "raster resolution must be >= 1");
  }

  int resolution() const { return r_; }

  void add(const Box& b) {
    const auto [c0, c1] = span(b.left, b.right);
    const auto [r0, r1] = span(b.top, b.bottom);
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) ++counts_[static_cast<std::size_t>(r) * r_ + c];
  }

  int count(int row, int col) const { return counts_[static_cast<std::size_t>(row) * r_ + col]; }

  // Area (in normalized units) of cells covered at least `min_count` times.
  double covered_area(int min_count) const {
    const auto n = std::count_if(counts_.begin(), counts_.end(), [&](int c) { return c >= min_count; });
    return static_cast<double>(n) / (static_cast<double>(r_) * r_);
  }

 private:
  // Cells i with lo <= (i + 0.5) / R < hi.
  std::pair<int, int> span(double lo, double hi) const {
    const int a = std::clamp(static_cast<int>(std::ceil(lo * r_ - 0.5)), 0, r_);
    const int b = std::clamp(static_cast<int>(std::ceil(hi * r_ - 0.5)), 0, r_);
    return {a, std::max(a, b)};
  }

  int r_;
  std::vector<int> counts_;
};

// Area covered by two or more boxes over area covered by at least one.
inline double perceptual_iou(const Layout& layout, int resolution = 256) {
  RasterGrid grid(resolution);
  for (const auto& e : layout.elements) grid.add(box_of(e));
  const double uni = grid.covered_area(1);
  return uni > 0 ? grid.covered_area(2) / uni : 0.0;
}

// Sum of pairwise intersection areas over the total element area.
inline double overlap(const Layout& layout) {
  double inter = 0, total = 0;
  const auto& els = layout.elements;
  for (std::size_t i = 0; i < els.size(); ++i) {
    const Box a = box_of(els[i]);
    total += a.area();
    for (std::size_t j = i + 1; j < els.size(); ++j) inter += intersection_area(a, box_of(els[j]));
  }
  return total > 0 ? inter / total : 0.0;
}

// Mean over elements of the smallest gap to any other element among the six
// alignment lines (left, x-center, right, top, y-center, bottom).
inline double alignment(const Layout& layout) {
  const auto& els = layout.elements;
  if (els.size() < 2) return 0.0;
  std::vector<Box> boxes;
  for (const auto& e : els) boxes.push_back(box_of(e));
  double sum = 0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    const Box& a = boxes[i];
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      if (i == j) continue;
      const Box& b = boxes[j];
      best = std::min({best, std::abs(a.left - b.left), std::abs(a.cx() - b.cx()), std::abs(a.right - b.right),
                       std::abs(a.top - b.top), std::abs(a.cy() - b.cy()), std::abs(a.bottom - b.bottom)});
    }
    sum += best;
  }
  return sum / static_cast<double>(boxes.size());
}

// Maximum-weight assignment on an n x m weight matrix (row-major) by the
// Hungarian method. Returns, for each row, the matched column or -1.
inline std::vector<int> max_weight_matching(const std::vector<double>& weights, int rows, int cols) {
  require(static_cast<int>(weights.size()) == rows * cols, ErrorCode::kShape, "matching: weight matrix size");
  const int n = std::max(rows, cols);
  if (n == 0) return {};
  double wmax = 0;
  for (double w : weights) wmax = std::max(wmax, w);
  // Square cost matrix; padding cells cost wmax (weight zero).
  auto cost = [&](int i, int j) {
    return (i < rows && j < cols) ? wmax - weights[static_cast<std::size_t>(i) * cols + j] : wmax;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0), v(static_cast<std::size_t>(n) + 1, 0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> match(static_cast<std::size_t>(rows), -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] <= rows && j <= cols) match[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return match;
}

// Pair weight: same category, close centers, similar sizes.
inline double docsim_weight(const Element& a, const Element& b) {
  if (a.category != b.category) return 0.0;
  const double dist = std::hypot(a.x - b.x, a.y - b.y);
  const double denom = std::max({a.w * b.w, a.h * b.h, 1e-12});
  return std::exp(-4.0 * dist) * std::min(a.w, b.w) * std::min(a.h, b.h) / denom;
}

// Matching value of the best one-to-one pairing over max(|gen|, |ref|).
inline double docsim(const Layout& generated, const Layout& reference) {
  const int n = static_cast<int>(generated.elements.size());
  const int m = static_cast<int>(reference.elements.size());
  require(n > 0 && m > 0, ErrorCode::kInvalidInput, "docsim: layouts must be non-empty");
  std::vector<double> w(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      w[static_cast<std::size_t>(i) * m + j] = docsim_weight(generated.elements[i], reference.elements[j]);
  const auto match = max_weight_matching(w, n, m);
  double total = 0;
  for (int i = 0; i < n; ++i)
    if (match[i] >= 0) total += w[static_cast<std::size_t>(i) * m + match[i]];
  return total / std::max(n, m);
}

namespace detail {

// Symmetric PSD square root; eigenvalues below -1e-8 are an error, smaller
// negatives are clipped to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) fail(ErrorCode::kNumerical, std::string(what) + ": eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-8)
      fail(ErrorCode::kNumerical, std::string(what) + ": eigenvalue " + std::to_string(ev[i]) + " is negative");
    ev[i] = std::sqrt(std::max(0.0, ev[i]));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline void mean_and_cov(const Eigen::MatrixXd& x, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

}  // namespace detail

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), with
// unbiased covariances. Rows are samples.
inline double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.cols() == b.cols(), ErrorCode::kShape, "frechet: feature dimensions differ");
  const Eigen::Index d = a.cols();
  if (a.rows() < d + 1 || b.rows() < d + 1)
    fail(ErrorCode::kSampleSize, "frechet: need at least " + std::to_string(d + 1) + " samples per set, got " +
                                     std::to_string(a.rows()) + " and " + std::to_string(b.rows()));
  if (!a.allFinite() || !b.allFinite()) fail(ErrorCode::kInvalidInput, "frechet: features contain non-finite values");
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd ca, cb;
  detail::mean_and_cov(a, ma, ca);
  detail::mean_and_cov(b, mb, cb);
  const Eigen::MatrixXd sa = detail::psd_sqrt(ca, "frechet covariance");
  Eigen::MatrixXd inner = sa * cb * sa;
  inner = (inner + inner.transpose()) / 2;
  const Eigen::MatrixXd cross = detail::psd_sqrt(inner, "frechet cross term");
  const double value = (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2.0 * cross.trace();
  return std::max(0.0, value);
}

struct MetricSummary {
  double mean = 0, std = 0, min = 0, max = 0;
  std::size_t n = 0;

  json to_json() const { return {{"mean", mean}, {"std", std}, {"n", n}, {"min", min}, {"max", max}}; }
};

// Mean, sample standard deviation (n - 1), min and max.
inline MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.n = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  double sq = 0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = s.n > 1 ? std::sqrt(sq / static_cast<double>(s.n - 1)) : 0.0;
  // Guard against summation round-off pushing the mean outside [min, max].
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  s.mean = std::clamp(s.mean, s.min, s.max);
  return s;
}

inline const std::vector<std::string>& layout_metric_names() {
  static const std::vector<std::string> kNames = {"iou", "overlap", "alignment", "docsim", "fid"};
  return kNames;
}

struct MetricReport {
  std::vector<std::string> metrics;                        // requested, in order
  std::map<std::string, std::vector<double>> per_layout;   // per-layout metrics
  std::map<std::string, MetricSummary> summary;
  std::optional<double> fid;

  json to_json() const {
    json out = json::object();
    for (const auto& [name, s] : summary) out[name] = s.to_json();
    if (fid) out["fid"] = {{"value", *fid}, {"n", per_layout.empty() ? 0 : per_layout.begin()->second.size()}};
    return out;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "index";
    std::vector<std::string> cols;
    for (const auto& m : metrics)
      if (per_layout.count(m)) cols.push_back(m);
    for (const auto& c : cols) os << ',' << c;
    os << '\n';
    const std::size_t n = cols.empty() ? 0 : per_layout.at(cols.front()).size();
    os.precision(17);
    for (std::size_t i = 0; i < n; ++i) {
      os << i;
      for (const auto& c : cols) os << ',' << per_layout.at(c)[i];
      os << '\n';
    }
    return os.str();
  }
};

// Parses "iou,overlap,..." into a validated list.
inline std::vector<std::string> parse_metric_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto& known = layout_metric_names();
    require(std::find(known.begin(), known.end(), item) != known.end(), ErrorCode::kInvalidInput,
            "unknown metric '" + item + "'", "metrics");
    if (std::find(out.begin(), out.end(), item) == out.end()) out.push_back(item);
  }
  require(!out.empty(), ErrorCode::kInvalidInput, "no metrics requested", "metrics");
  return out;
}

// Computes the requested per-layout metrics. DocSim pairs generated[i] with
// references[i]. FID, when requested, needs a feature function.
inline MetricReport evaluate_layouts(
    const std::vector<Layout>& generated, const std::vector<std::string>& metrics,
    const std::vector<Layout>* references = nullptr,
    const std::function<Eigen::MatrixXd(const std::vector<Layout>&)>& features = {}, int resolution = 256) {
  require(!generated.empty(), ErrorCode::kInvalidInput, "evaluate: no layouts", "layouts");
  MetricReport report;
  report.metrics = metrics;
  for (const auto& m : metrics) {
    if (m == "fid") {
      require(references != nullptr && !references->empty(), ErrorCode::kInvalidInput,
              "fid needs reference layouts", "references");
      require(static_cast<bool>(features), ErrorCode::kInvalidInput, "fid needs a feature extractor", "metrics");
      report.fid = frechet_distance(features(generated), features(*references));
      continue;
    }
    std::vector<double> values;
    values.reserve(generated.size());
    if (m == "docsim") {
      require(references != nullptr && references->size() == generated.size(), ErrorCode::kInvalidInput,
              "docsim needs one reference per generated layout", "references");
      for (std::size_t i = 0; i < generated.size(); ++i) values.push_back(docsim(generated[i], (*references)[i]));
    } else {
      for (const auto& l : generated) {
        if (m == "iou")
          values.push_back(perceptual_iou(l, resolution));
        else if (m == "overlap")
          values.push_back(overlap(l));
        else if (m == "alignment")
          values.push_back(alignment(l));
        else
          fail(ErrorCode::kInvalidInput, "unknown metric '" + m + "'", "metrics");
      }
    }
    report.summary[m] = summarize(values);
    report.per_layout[m] = std::move(values);
  }
  return report;
}

}  // namespace lf
