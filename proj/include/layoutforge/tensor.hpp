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

// Dense row-major tensors with a reverse-mode tape. Only the operators the
// layout transformer needs are provided; each registers an exact backward
// rule when the tape is recording and an input requires a gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "layoutforge/error.hpp"
#include "layoutforge/random.hpp"

namespace lf {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Shared handle to a tensor. Copies alias the same storage, which is what lets
// the tape route gradients back to parameters.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : s_(std::make_shared<TensorStorage<T>>()) {
    s_->value.assign(shape_size(shape), fill);
    s_->shape = std::move(shape);
    s_->requires_grad = requires_grad;
  }
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : s_(std::make_shared<TensorStorage<T>>()) {
    if (values.size() != shape_size(shape))
      fail(ErrorCode::kShape, "tensor: " + std::to_string(values.size()) + " values for shape " +
                                  shape_string(shape));
    s_->value = std::move(values);
    s_->shape = std::move(shape);
    s_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t size() const { return s_->value.size(); }

  T* data() { return s_->value.data(); }
  const T* data() const { return s_->value.data(); }
  std::vector<T>& values() { return s_->value; }
  const std::vector<T>& values() const { return s_->value; }
  T& operator[](std::size_t i) { return s_->value[i]; }
  T operator[](std::size_t i) const { return s_->value[i]; }
  T item() const {
    require(size() == 1, ErrorCode::kShape, "item() on tensor of shape " + shape_string(shape()));
    return s_->value[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }
  bool has_grad() const { return !s_->grad.empty(); }
  const std::vector<T>& grad() const { return s_->grad; }
  // Gradient buffer, allocated (zeroed) on first use.
  std::vector<T>& grad_buffer() {
    if (s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
    return s_->grad;
  }
  void zero_grad() { s_->grad.clear(); }

  bool same_storage(const Tensor& o) const { return s_ == o.s_; }

  // Deep copy without gradient.
  Tensor clone() const { return Tensor(shape(), values(), requires_grad()); }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true, std::uint64_t dropout_seed = 0)
      : recording_(recording), dropout_seed_(dropout_seed) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t num_ops() const { return ops_.size(); }
  std::uint64_t dropout_seed() const { return dropout_seed_; }
  std::uint64_t next_dropout_call() { return dropout_calls_++; }

  // True when an op producing a result from these inputs must be recorded.
  template <typename... Ts>
  bool tracks(const Ts&... inputs) const {
    return recording_ && (inputs.requires_grad() || ...);
  }
  void record(std::function<void()> backward_rule) { ops_.push_back(std::move(backward_rule)); }

  // Runs every recorded rule once in reverse order, then clears the tape.
  void backward(Tensor<T> loss) {
    require(loss.size() == 1, ErrorCode::kContract,
            "backward: loss must be scalar, got shape " + shape_string(loss.shape()));
    require(!ops_.empty(), ErrorCode::kContract,
            "backward: tape is empty (already consumed, or nothing was recorded)");
    loss.grad_buffer()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

  void clear() { ops_.clear(); }

 private:
  bool recording_;
  std::uint64_t dropout_seed_;
  std::uint64_t dropout_calls_ = 0;
  std::vector<std::function<void()>> ops_;
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// c (m x n) += op(a) * op(b) where op transposes when the flag is set. `a` is
// stored (m x k) or (k x m); `b` is stored (k x n) or (n x k).
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, Eigen::Index m, Eigen::Index n, Eigen::Index k, bool ta,
              bool tb) {
  Eigen::Map<const RowMat<T>> A(a, ta ? k : m, ta ? m : k);
  Eigen::Map<const RowMat<T>> B(b, tb ? n : k, tb ? k : n);
  Eigen::Map<RowMat<T>> C(c, m, n);
  if (!ta && !tb)
    C.noalias() += A * B;
  else if (ta && !tb)
    C.noalias() += A.transpose() * B;
  else if (!ta && tb)
    C.noalias() += A * B.transpose();
  else
    C.noalias() += A.transpose() * B.transpose();
}

template <typename T>
void shape_check(bool ok, const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!ok)
    fail(ErrorCode::kShape, std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                                " and " + shape_string(b.shape()));
}

template <typename T>
Tensor<T> result_like(const Shape& shape, bool requires_grad) {
  return Tensor<T>(shape, T(0), requires_grad);
}

}  // namespace detail

// op(a) @ op(b) for rank-2 tensors.
template <typename T>
Tensor<T> matmul(Tape<T>& tape, Tensor<T> a, Tensor<T> b, bool trans_a = false, bool trans_b = false) {
  detail::shape_check(a.rank() == 2 && b.rank() == 2, "matmul", a, b);
  const auto m = static_cast<Eigen::Index>(trans_a ? a.dim(1) : a.dim(0));
  const auto k = static_cast<Eigen::Index>(trans_a ? a.dim(0) : a.dim(1));
  const auto kb = static_cast<Eigen::Index>(trans_b ? b.dim(1) : b.dim(0));
  const auto n = static_cast<Eigen::Index>(trans_b ? b.dim(0) : b.dim(1));
  detail::shape_check(k == kb, "matmul", a, b);
  const bool track = tape.tracks(a, b);
  auto c = detail::result_like<T>({static_cast<std::size_t>(m), static_cast<std::size_t>(n)}, track);
  detail::gemm_acc(a.data(), b.data(), c.data(), m, n, k, trans_a, trans_b);
  if (track) {
    tape.record([a, b, c, m, n, k, trans_a, trans_b]() mutable {
      if (!c.has_grad()) return;
      const T* dc = c.grad().data();
      if (a.requires_grad()) {
        T* da = a.grad_buffer().data();
        if (!trans_a)
          detail::gemm_acc(dc, b.data(), da, m, k, n, false, !trans_b);
        else
          detail::gemm_acc(b.data(), dc, da, k, m, n, trans_b, true);
      }
      if (b.requires_grad()) {
        T* db = b.grad_buffer().data();
        if (!trans_b)
          detail::gemm_acc(a.data(), dc, db, k, n, m, !trans_a, false);
        else
          detail::gemm_acc(dc, a.data(), db, n, k, m, true, trans_a);
      }
    });
  }
  return c;
}

// Batched op(a) @ op(b) over the leading axis of rank-3 tensors.
template <typename T>
Tensor<T> bmm(Tape<T>& tape, Tensor<T> a, Tensor<T> b, bool trans_a = false, bool trans_b = false) {
  detail::shape_check(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0), "bmm", a, b);
  const std::size_t batch = a.dim(0);
  const auto m = static_cast<Eigen::Index>(trans_a ? a.dim(2) : a.dim(1));
  const auto k = static_cast<Eigen::Index>(trans_a ? a.dim(1) : a.dim(2));
  const auto kb = static_cast<Eigen::Index>(trans_b ? b.dim(2) : b.dim(1));
  const auto n = static_cast<Eigen::Index>(trans_b ? b.dim(1) : b.dim(2));
  detail::shape_check(k == kb, "bmm", a, b);
  const bool track = tape.tracks(a, b);
  auto c = detail::result_like<T>({batch, static_cast<std::size_t>(m), static_cast<std::size_t>(n)}, track);
  const auto sa = static_cast<std::size_t>(m * k), sb = static_cast<std::size_t>(k * n),
             sc = static_cast<std::size_t>(m * n);
  for (std::size_t i = 0; i < batch; ++i)
    detail::gemm_acc(a.data() + i * sa, b.data() + i * sb, c.data() + i * sc, m, n, k, trans_a, trans_b);
  if (track) {
    tape.record([a, b, c, batch, m, n, k, sa, sb, sc, trans_a, trans_b]() mutable {
      if (!c.has_grad()) return;
      const T* dc = c.grad().data();
      if (a.requires_grad()) {
        T* da = a.grad_buffer().data();
        for (std::size_t i = 0; i < batch; ++i) {
          if (!trans_a)
            detail::gemm_acc(dc + i * sc, b.data() + i * sb, da + i * sa, m, k, n, false, !trans_b);
          else
            detail::gemm_acc(b.data() + i * sb, dc + i * sc, da + i * sa, k, m, n, trans_b, true);
        }
      }
      if (b.requires_grad()) {
        T* db = b.grad_buffer().data();
        for (std::size_t i = 0; i < batch; ++i) {
          if (!trans_b)
            detail::gemm_acc(a.data() + i * sa, dc + i * sc, db + i * sb, k, n, m, !trans_a, false);
          else
            detail::gemm_acc(dc + i * sc, a.data() + i * sa, db + i * sb, n, k, m, true, trans_a);
        }
      }
    });
  }
  return c;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, Tensor<T> a, Tensor<T> b) {
  detail::shape_check(a.shape() == b.shape(), "add", a, b);
  const bool track = tape.tracks(a, b);
  auto c = detail::result_like<T>(a.shape(), track);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] + b[i];
  if (track) {
    tape.record([a, b, c]() mutable {
      if (!c.has_grad()) return;
      const auto& dc = c.grad();
      for (Tensor<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto& g = t->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dc[i];
      }
    });
  }
  return c;
}

// Elementwise product.
template <typename T>
Tensor<T> mul(Tape<T>& tape, Tensor<T> a, Tensor<T> b) {
  detail::shape_check(a.shape() == b.shape(), "mul", a, b);
  const bool track = tape.tracks(a, b);
  auto c = detail::result_like<T>(a.shape(), track);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] * b[i];
  if (track) {
    tape.record([a, b, c]() mutable {
      if (!c.has_grad()) return;
      const auto& dc = c.grad();
      if (a.requires_grad()) {
        auto& g = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dc[i] * b[i];
      }
      if (b.requires_grad()) {
        auto& g = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dc[i] * a[i];
      }
    });
  }
  return c;
}

// x[N x d] + bias[d], broadcast over rows.
template <typename T>
Tensor<T> add_bias(Tape<T>& tape, Tensor<T> x, Tensor<T> bias) {
  detail::shape_check(x.rank() == 2 && bias.rank() == 1 && bias.dim(0) == x.dim(1), "add_bias", x, bias);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const bool track = tape.tracks(x, bias);
  auto y = detail::result_like<T>(x.shape(), track);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = x[r * cols + c] + bias[c];
  if (track) {
    tape.record([x, bias, y, rows, cols]() mutable {
      if (!y.has_grad()) return;
      const auto& dy = y.grad();
      if (x.requires_grad()) {
        auto& g = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
      }
      if (bias.requires_grad()) {
        auto& g = bias.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) g[c] += dy[r * cols + c];
      }
    });
  }
  return y;
}

// x[(B*S) x d] + table[s] for each row at sequence position s (rows of table
// beyond S are unused). Used for learned position embeddings.
template <typename T>
Tensor<T> add_positional(Tape<T>& tape, Tensor<T> x, Tensor<T> table, std::size_t seq_len) {
  detail::shape_check(x.rank() == 2 && table.rank() == 2 && table.dim(1) == x.dim(1) &&
                          seq_len > 0 && seq_len <= table.dim(0) && x.dim(0) % seq_len == 0,
                      "add_positional", x, table);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const bool track = tape.tracks(x, table);
  auto y = detail::result_like<T>(x.shape(), track);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t s = r % seq_len;
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = x[r * cols + c] + table[s * cols + c];
  }
  if (track) {
    tape.record([x, table, y, rows, cols, seq_len]() mutable {
      if (!y.has_grad()) return;
      const auto& dy = y.grad();
      if (x.requires_grad()) {
        auto& g = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
      }
      if (table.requires_grad()) {
        auto& g = table.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t s = r % seq_len;
          for (std::size_t c = 0; c < cols; ++c) g[s * cols + c] += dy[r * cols + c];
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, Tensor<T> x, T factor) {
  const bool track = tape.tracks(x);
  auto y = detail::result_like<T>(x.shape(), track);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * factor;
  if (track) {
    tape.record([x, y, factor]() mutable {
      if (!y.has_grad()) return;
      auto& g = x.grad_buffer();
      const auto& dy = y.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * factor;
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, Tensor<T> x) {
  const bool track = tape.tracks(x);
  auto y = detail::result_like<T>({1}, track);
  T acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  y[0] = acc;
  if (track) {
    tape.record([x, y]() mutable {
      if (!y.has_grad()) return;
      auto& g = x.grad_buffer();
      const T d = y.grad()[0];
      for (auto& v : g) v += d;
    });
  }
  return y;
}

// Rows of table[V x d] selected by ids -> [N x d].
template <typename T>
Tensor<T> embedding(Tape<T>& tape, Tensor<T> table, std::span<const int> ids) {
  if (table.rank() != 2) fail(ErrorCode::kShape, "embedding: table must be rank 2, got " + shape_string(table.shape()));
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      fail(ErrorCode::kVocabulary, "embedding: id " + std::to_string(id) + " outside vocabulary of " +
                                       std::to_string(vocab));
  const bool track = tape.tracks(table);
  auto y = detail::result_like<T>({ids.size(), d}, track);
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(table.data() + static_cast<std::size_t>(ids[r]) * d, d, y.data() + r * d);
  if (track) {
    tape.record([table, y, d, idv = std::vector<int>(ids.begin(), ids.end())]() mutable {
      if (!y.has_grad()) return;
      auto& g = table.grad_buffer();
      const auto& dy = y.grad();
      for (std::size_t r = 0; r < idv.size(); ++r) {
        T* row = g.data() + static_cast<std::size_t>(idv[r]) * d;
        for (std::size_t c = 0; c < d; ++c) row[c] += dy[r * d + c];
      }
    });
  }
  return y;
}

namespace detail {

// Softmax of one row over entries with valid[j] != 0; invalid entries get 0.
template <typename T>
void softmax_row(const T* x, T* y, std::size_t n, const std::uint8_t* valid) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (!valid || valid[j]) mx = std::max(mx, x[j]);
  if (!std::isfinite(mx)) {
    std::fill(y, y + n, T(0));
    return;
  }
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = (!valid || valid[j]) ? std::exp(x[j] - mx) : T(0);
    total += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= total;
}

template <typename T>
void softmax_row_backward(const T* y, const T* dy, T* dx, std::size_t n) {
  T dot = 0;
  for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
  for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
}

}  // namespace detail

// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(Tape<T>& tape, Tensor<T> x) {
  require(x.rank() >= 1, ErrorCode::kShape, "softmax: rank-0 input");
  const std::size_t n = x.shape().back(), rows = x.size() / n;
  const bool track = tape.tracks(x);
  auto y = detail::result_like<T>(x.shape(), track);
  for (std::size_t r = 0; r < rows; ++r) detail::softmax_row(x.data() + r * n, y.data() + r * n, n, nullptr);
  if (track) {
    tape.record([x, y, n, rows]() mutable {
      if (!y.has_grad()) return;
      auto& g = x.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        detail::softmax_row_backward(y.data() + r * n, y.grad().data() + r * n, g.data() + r * n, n);
    });
  }
  return y;
}

// Softmax over keys for attention scores [(B*H) x S x S]. key_valid holds B*S
// flags; invalid keys receive exactly zero weight.
template <typename T>
Tensor<T> masked_softmax(Tape<T>& tape, Tensor<T> scores, std::span<const std::uint8_t> key_valid,
                         std::size_t heads) {
  require(scores.rank() == 3 && scores.dim(1) == scores.dim(2), ErrorCode::kShape,
          "masked_softmax: expected [(B*H) x S x S], got " + shape_string(scores.shape()));
  const std::size_t bh = scores.dim(0), s = scores.dim(1);
  require(heads > 0 && bh % heads == 0 && key_valid.size() == (bh / heads) * s, ErrorCode::kShape,
          "masked_softmax: key validity of size " + std::to_string(key_valid.size()) +
              " does not match scores " + shape_string(scores.shape()));
  const bool track = tape.tracks(scores);
  auto y = detail::result_like<T>(scores.shape(), track);
  for (std::size_t m = 0; m < bh; ++m) {
    const std::uint8_t* valid = key_valid.data() + (m / heads) * s;
    for (std::size_t q = 0; q < s; ++q) {
      const std::size_t off = (m * s + q) * s;
      detail::softmax_row(scores.data() + off, y.data() + off, s, valid);
    }
  }
  if (track) {
    tape.record([scores, y, bh, s]() mutable {
      if (!y.has_grad()) return;
      auto& g = scores.grad_buffer();
      for (std::size_t r = 0; r < bh * s; ++r)
        detail::softmax_row_backward(y.data() + r * s, y.grad().data() + r * s, g.data() + r * s, s);
    });
  }
  return y;
}

// Layer normalization over the last axis of x[N x d].
template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, Tensor<T> x, Tensor<T> gain, Tensor<T> bias, T eps = T(1e-5)) {
  detail::shape_check(x.rank() == 2 && gain.rank() == 1 && gain.dim(0) == x.dim(1) &&
                          bias.shape() == gain.shape(),
                      "layer_norm", x, gain);
  const std::size_t rows = x.dim(0), d = x.dim(1);
  const bool track = tape.tracks(x, gain, bias);
  auto y = detail::result_like<T>(x.shape(), track);
  std::vector<T> xhat(x.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (xr[c] - mean) * inv_std[r];
      xhat[r * d + c] = h;
      y[r * d + c] = h * gain[c] + bias[c];
    }
  }
  if (track) {
    tape.record([x, gain, bias, y, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
      if (!y.has_grad()) return;
      const auto& dy = y.grad();
      if (gain.requires_grad()) {
        auto& g = gain.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) g[c] += dy[r * d + c] * xhat[r * d + c];
      }
      if (bias.requires_grad()) {
        auto& g = bias.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) g[c] += dy[r * d + c];
      }
      if (x.requires_grad()) {
        auto& g = x.grad_buffer();
        const T inv_d = T(1) / static_cast<T>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t c = 0; c < d; ++c) {
            const T dh = dy[r * d + c] * gain[c];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + c];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t c = 0; c < d; ++c) {
            const T dh = dy[r * d + c] * gain[c];
            g[r * d + c] += inv_std[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
          }
        }
      }
    });
  }
  return y;
}

// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(Tape<T>& tape, Tensor<T> x) {
  const bool track = tape.tracks(x);
  auto y = detail::result_like<T>(x.shape(), track);
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * kInvSqrt2));
  if (track) {
    tape.record([x, y]() mutable {
      if (!y.has_grad()) return;
      constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
      auto& g = x.grad_buffer();
      const auto& dy = y.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = x[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
        const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
        g[i] += dy[i] * (cdf + v * pdf);
      }
    });
  }
  return y;
}

// Inverted dropout. The keep mask is a pure function of the tape's dropout
// seed, the per-tape call index and the element index.
template <typename T>
Tensor<T> dropout(Tape<T>& tape, Tensor<T> x, double rate, bool training) {
  if (!training || rate <= 0.0) return x;
  require(rate < 1.0, ErrorCode::kInvalidInput, "dropout: rate must be < 1");
  const std::uint64_t call = tape.next_dropout_call();
  const std::uint64_t stream = derive_seed(tape.dropout_seed(), call);
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = unit_from_hash(splitmix64(stream + i)) >= rate ? keep_scale : T(0);
  const bool track = tape.tracks(x);
  auto y = detail::result_like<T>(x.shape(), track);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * mask[i];
  if (track) {
    tape.record([x, y, mask = std::move(mask)]() mutable {
      if (!y.has_grad()) return;
      auto& g = x.grad_buffer();
      const auto& dy = y.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * mask[i];
    });
  }
  return y;
}

// Weighted negative log-likelihood of index targets from logits [N x V]:
// sum_i weight_i * -log softmax(logits_i)[target_i]. Rows with zero weight
// contribute nothing (and their targets are not inspected).
template <typename T>
Tensor<T> weighted_cross_entropy(Tape<T>& tape, Tensor<T> logits, std::span<const int> targets,
                                 std::span<const T> weights) {
  require(logits.rank() == 2 && targets.size() == logits.dim(0) && weights.size() == logits.dim(0),
          ErrorCode::kShape,
          "cross_entropy: logits " + shape_string(logits.shape()) + " vs " + std::to_string(targets.size()) +
              " targets / " + std::to_string(weights.size()) + " weights");
  const std::size_t rows = logits.dim(0), v = logits.dim(1);
  const bool track = tape.tracks(logits);
  auto loss = detail::result_like<T>({1}, track);
  std::vector<T> probs;
  if (track) probs.assign(rows * v, T(0));
  T total = 0;
  std::vector<T> row(v);
  for (std::size_t r = 0; r < rows; ++r) {
    if (weights[r] == T(0)) continue;
    const int t = targets[r];
    require(t >= 0 && static_cast<std::size_t>(t) < v, ErrorCode::kVocabulary,
            "cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(v) + ")");
    const T* lr = logits.data() + r * v;
    const T mx = *std::max_element(lr, lr + v);
    T z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(lr[j] - mx);
    const T log_z = mx + std::log(z);
    total += weights[r] * (log_z - lr[t]);
    if (track)
      for (std::size_t j = 0; j < v; ++j) probs[r * v + j] = std::exp(lr[j] - log_z);
  }
  loss[0] = total;
  if (track) {
    tape.record([logits, loss, rows, v, probs = std::move(probs),
                 tv = std::vector<int>(targets.begin(), targets.end()),
                 wv = std::vector<T>(weights.begin(), weights.end())]() mutable {
      if (!loss.has_grad()) return;
      const T d = loss.grad()[0];
      auto& g = logits.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        if (wv[r] == T(0)) continue;
        const T w = wv[r] * d;
        for (std::size_t j = 0; j < v; ++j) g[r * v + j] += w * probs[r * v + j];
        g[r * v + static_cast<std::size_t>(tv[r])] -= w;
      }
    });
  }
  return loss;
}

// Mean negative log-likelihood over rows where mask is set.
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, Tensor<T> logits, std::span<const int> targets,
                        std::span<const std::uint8_t> mask) {
  require(mask.size() == targets.size(), ErrorCode::kShape, "cross_entropy: mask/target size mismatch");
  const auto count = std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
  require(count > 0, ErrorCode::kContract, "cross_entropy: empty position mask");
  std::vector<T> weights(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) weights[i] = mask[i] ? T(1) / static_cast<T>(count) : T(0);
  return weighted_cross_entropy<T>(tape, logits, targets, weights);
}

// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Tensor<T> transpose(Tape<T>& tape, Tensor<T> x) {
  require(x.rank() == 2 || x.rank() == 3, ErrorCode::kShape,
          "transpose: expected rank 2 or 3, got " + shape_string(x.shape()));
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  const bool track = tape.tracks(x);
  auto y = detail::result_like<T>(out_shape, track);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) y[b * r * c + j * r + i] = x[b * r * c + i * c + j];
  if (track) {
    tape.record([x, y, batch, r, c]() mutable {
      if (!y.has_grad()) return;
      auto& g = x.grad_buffer();
      const auto& dy = y.grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[b * r * c + i * c + j] += dy[b * r * c + j * r + i];
    });
  }
  return y;
}

namespace detail {

// Index map between [(B*S) x D] and [(B*H) x S x dh].
struct HeadLayout {
  std::size_t batch, seq, heads, head_dim;
  std::size_t merged(std::size_t b, std::size_t s, std::size_t h, std::size_t k) const {
    return (b * seq + s) * heads * head_dim + h * head_dim + k;
  }
  std::size_t split(std::size_t b, std::size_t s, std::size_t h, std::size_t k) const {
    return ((b * heads + h) * seq + s) * head_dim + k;
  }
  template <typename F>
  void for_each(F&& f) const {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < seq; ++s)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t k = 0; k < head_dim; ++k) f(merged(b, s, h, k), split(b, s, h, k));
  }
};

}  // namespace detail

// [(B*S) x D] -> [(B*H) x S x D/H]
template <typename T>
Tensor<T> split_heads(Tape<T>& tape, Tensor<T> x, std::size_t batch, std::size_t seq, std::size_t heads) {
  require(x.rank() == 2 && x.dim(0) == batch * seq && heads > 0 && x.dim(1) % heads == 0, ErrorCode::kShape,
          "split_heads: cannot split " + shape_string(x.shape()) + " into " + std::to_string(heads) + " heads");
  const detail::HeadLayout lay{batch, seq, heads, x.dim(1) / heads};
  const bool track = tape.tracks(x);
  auto y = detail::result_like<T>({batch * heads, seq, lay.head_dim}, track);
  lay.for_each([&](std::size_t m, std::size_t s) { y[s] = x[m]; });
  if (track) {
    tape.record([x, y, lay]() mutable {
      if (!y.has_grad()) return;
      auto& g = x.grad_buffer();
      const auto& dy = y.grad();
      lay.for_each([&](std::size_t m, std::size_t s) { g[m] += dy[s]; });
    });
  }
  return y;
}

// [(B*H) x S x dh] -> [(B*S) x (H*dh)]
template <typename T>
Tensor<T> merge_heads(Tape<T>& tape, Tensor<T> x, std::size_t batch, std::size_t heads) {
  require(x.rank() == 3 && heads > 0 && x.dim(0) == batch * heads, ErrorCode::kShape,
          "merge_heads: cannot merge " + shape_string(x.shape()) + " with " + std::to_string(heads) + " heads");
  const detail::HeadLayout lay{batch, x.dim(1), heads, x.dim(2)};
  const bool track = tape.tracks(x);
  auto y = detail::result_like<T>({batch * lay.seq, heads * lay.head_dim}, track);
  lay.for_each([&](std::size_t m, std::size_t s) { y[m] = x[s]; });
  if (track) {
    tape.record([x, y, lay]() mutable {
      if (!y.has_grad()) return;
      auto& g = x.grad_buffer();
      const auto& dy = y.grad();
      lay.for_each([&](std::size_t m, std::size_t s) { g[s] += dy[m]; });
    });
  }
  return y;
}

// Mean over valid rows of each sequence: x[(B*S) x D] -> [B x D].
template <typename T>
Tensor<T> masked_mean_pool(Tape<T>& tape, Tensor<T> x, std::span<const std::uint8_t> valid, std::size_t batch) {
  require(x.rank() == 2 && batch > 0 && x.dim(0) % batch == 0 && valid.size() == x.dim(0), ErrorCode::kShape,
          "masked_mean_pool: input " + shape_string(x.shape()) + " with " + std::to_string(valid.size()) +
              " flags");
  const std::size_t seq = x.dim(0) / batch, d = x.dim(1);
  std::vector<T> inv(batch, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t n = 0;
    for (std::size_t s = 0; s < seq; ++s) n += valid[b * seq + s] != 0;
    inv[b] = n ? T(1) / static_cast<T>(n) : T(0);
  }
  const bool track = tape.tracks(x);
  auto y = detail::result_like<T>({batch, d}, track);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < seq; ++s) {
      if (!valid[b * seq + s]) continue;
      for (std::size_t c = 0; c < d; ++c) y[b * d + c] += x[(b * seq + s) * d + c] * inv[b];
    }
  if (track) {
    tape.record([x, y, batch, seq, d, inv = std::move(inv),
                 vv = std::vector<std::uint8_t>(valid.begin(), valid.end())]() mutable {
      if (!y.has_grad()) return;
      auto& g = x.grad_buffer();
      const auto& dy = y.grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < seq; ++s) {
          if (!vv[b * seq + s]) continue;
          for (std::size_t c = 0; c < d; ++c) g[(b * seq + s) * d + c] += dy[b * d + c] * inv[b];
        }
    });
  }
  return y;
}

}  // namespace lf
