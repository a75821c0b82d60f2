#pragma once

// Dense 64-bit numerics for the small classifiers: a row-major matrix type,
// softmax / cross-entropy, plain SGD and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "treated/errors.hpp"
#include "treated/rng.hpp"

namespace treated {

using TokenId = std::uint32_t;
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;

class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Tensor2: data length " + std::to_string(data_.size()) +
                                  " does not match " + std::to_string(rows_) + "x" +
                                  std::to_string(cols_));
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const Tensor2& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (auto& v : data_) v = rng.uniform(lo, hi);
  }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
};

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  const double shift = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(shift)) throw std::invalid_argument("softmax: non-finite logits");
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw std::invalid_argument("softmax: non-finite logits");
    out[i] = std::exp(logits[i] - shift);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

inline constexpr double kProbFloor = 1e-12;

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> dlogits;  // d loss / d pre-softmax logits
};

inline CrossEntropy cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) {
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                " out of range for " + std::to_string(probs.size()) + " classes");
  }
  CrossEntropy out;
  out.loss = -std::log(std::max(probs[label], kProbFloor));
  out.dlogits.assign(probs.begin(), probs.end());
  out.dlogits[label] -= 1.0;
  return out;
}

/// Smallest index among the maxima.
inline std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

/// w <- w - lr * g, in place.
inline void sgd_step(Tensor2& params, const Tensor2& grads, double lr) {
  if (!params.same_shape(grads)) {
    throw std::invalid_argument("sgd_step: shape mismatch " + std::to_string(params.rows()) + "x" +
                                std::to_string(params.cols()) + " vs " +
                                std::to_string(grads.rows()) + "x" + std::to_string(grads.cols()));
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("sgd_step: lr must be >= 0");
  auto w = params.data();
  auto g = grads.data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  if (!params.all_finite()) throw NumericError("sgd_step: parameters became non-finite");
}

/// Compares `analytic` with central differences of `f` around `point`,
/// coordinate by coordinate. Relative error uses max(|a|, |n|, 1e-8) as denominator.
inline GradCheckReport grad_check(const std::function<double(const Tensor2&)>& f,
                                  const Tensor2& point, const Tensor2& analytic, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("grad_check: eps must be in (0, 1e-2]");
  if (!point.same_shape(analytic)) throw std::invalid_argument("grad_check: shape mismatch");
  GradCheckReport report;
  Tensor2 x = point;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = f(x);
    x[i] = saved - eps;
    const double down = f(x);
    x[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: non-finite function value at coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coordinate = i;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Layers. Forward functions are pure; backward functions accumulate into the
// gradient tensors they are handed and return the gradient w.r.t. the input.

/// Half-open column block [begin, end) of an embedding matrix.
struct ColumnRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t width() const noexcept { return end - begin; }
  friend bool operator==(const ColumnRange&, const ColumnRange&) = default;
};

/// Mean of the embedding rows of all non-PAD ids, restricted to `cols`.
/// All-PAD input pools to the zero vector.
inline std::vector<double> mean_pool_forward(const Tensor2& emb, std::span<const TokenId> ids,
                                             ColumnRange cols) {
  std::vector<double> pooled(cols.width(), 0.0);
  std::size_t count = 0;
  for (TokenId id : ids) {
    if (id == kPadId) continue;
    ++count;
    auto row = emb.row(id);
    for (std::size_t j = 0; j < pooled.size(); ++j) pooled[j] += row[cols.begin + j];
  }
  if (count > 0) {
    for (auto& v : pooled) v /= static_cast<double>(count);
  }
  return pooled;
}

inline void mean_pool_backward(std::span<const TokenId> ids, ColumnRange cols,
                               std::span<const double> dpooled, Tensor2& demb) {
  const auto count = static_cast<double>(std::count_if(ids.begin(), ids.end(), [](TokenId id) {
    return id != kPadId;
  }));
  if (count == 0) return;
  for (TokenId id : ids) {
    if (id == kPadId) continue;
    auto row = demb.row(id);
    for (std::size_t j = 0; j < dpooled.size(); ++j) row[cols.begin + j] += dpooled[j] / count;
  }
}

/// y = x W + b with W stored in x out and b stored 1 x out.
inline std::vector<double> affine_forward(std::span<const double> x, const Tensor2& w,
                                          const Tensor2& b) {
  std::vector<double> y(b.data().begin(), b.data().end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    auto wr = w.row(i);
    for (std::size_t o = 0; o < y.size(); ++o) y[o] += xi * wr[o];
  }
  return y;
}

inline std::vector<double> affine_backward(std::span<const double> x, const Tensor2& w,
                                           std::span<const double> dy, Tensor2& dw, Tensor2& db) {
  std::vector<double> dx(x.size(), 0.0);
  for (std::size_t o = 0; o < dy.size(); ++o) db[o] += dy[o];
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto wr = w.row(i);
    auto dwr = dw.row(i);
    double acc = 0.0;
    for (std::size_t o = 0; o < dy.size(); ++o) {
      dwr[o] += x[i] * dy[o];
      acc += wr[o] * dy[o];
    }
    dx[i] = acc;
  }
  return dx;
}

inline std::vector<double> tanh_forward(std::span<const double> x) {
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](double v) { return std::tanh(v); });
  return y;
}

/// Gradient through tanh given its output `y`.
inline std::vector<double> tanh_backward(std::span<const double> y, std::span<const double> dy) {
  std::vector<double> dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * (1.0 - y[i] * y[i]);
  return dx;
}

/// Per-filter winning time step of a max-pool; -1 when the input had no real tokens.
struct ConvPoolCache {
  std::vector<std::ptrdiff_t> argmax;
};

// One-dimensional convolution over time followed by max-pool over time.
// Filter bank `w` is (kernel * width) x filters, laid out tap-major: row
// k * width + j multiplies column j of the token at offset k. PAD tokens and
// positions past the end contribute zero vectors; output positions sitting on
// PAD are masked to -inf before pooling.
inline std::vector<double> conv_maxpool_forward(const Tensor2& emb, std::span<const TokenId> ids,
                                                ColumnRange cols, const Tensor2& w,
                                                const Tensor2& b, std::size_t kernel,
                                                ConvPoolCache* cache = nullptr) {
  const std::size_t width = cols.width();
  const std::size_t filters = w.cols();
  std::vector<double> pooled(filters, -INFINITY);
  std::vector<std::ptrdiff_t> winner(filters, -1);
  std::vector<double> z(filters);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] == kPadId) continue;
    std::copy(b.data().begin(), b.data().end(), z.begin());
    for (std::size_t k = 0; k < kernel && t + k < ids.size(); ++k) {
      const TokenId id = ids[t + k];
      if (id == kPadId) continue;
      auto row = emb.row(id);
      for (std::size_t j = 0; j < width; ++j) {
        const double x = row[cols.begin + j];
        auto wr = w.row(k * width + j);
        for (std::size_t f = 0; f < filters; ++f) z[f] += x * wr[f];
      }
    }
    for (std::size_t f = 0; f < filters; ++f) {
      if (z[f] > pooled[f]) {
        pooled[f] = z[f];
        winner[f] = static_cast<std::ptrdiff_t>(t);
      }
    }
  }
  for (std::size_t f = 0; f < filters; ++f) {
    if (winner[f] < 0) pooled[f] = 0.0;
  }
  if (cache) cache->argmax = std::move(winner);
  return pooled;
}

inline void conv_maxpool_backward(const Tensor2& emb, std::span<const TokenId> ids,
                                  ColumnRange cols, const Tensor2& w, std::size_t kernel,
                                  const ConvPoolCache& cache, std::span<const double> dpooled,
                                  Tensor2& dw, Tensor2& db, Tensor2& demb) {
  const std::size_t width = cols.width();
  for (std::size_t f = 0; f < dpooled.size(); ++f) {
    const std::ptrdiff_t t0 = cache.argmax[f];
    if (t0 < 0) continue;
    const double g = dpooled[f];
    db[f] += g;
    const auto t = static_cast<std::size_t>(t0);
    for (std::size_t k = 0; k < kernel && t + k < ids.size(); ++k) {
      const TokenId id = ids[t + k];
      if (id == kPadId) continue;
      auto row = emb.row(id);
      auto drow = demb.row(id);
      for (std::size_t j = 0; j < width; ++j) {
        dw(k * width + j, f) += row[cols.begin + j] * g;
        drow[cols.begin + j] += w(k * width + j, f) * g;
      }
    }
  }
}

}  // namespace treated
