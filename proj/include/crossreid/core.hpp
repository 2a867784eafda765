/* Copyright 2026 The crossreid Authors

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

// Small dense linear algebra, distances and the seeded random stream used by
// every other part of the library. Everything is 64-bit floating point.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "crossreid/errors.hpp"

namespace crossreid {

inline constexpr const char* kVersion = "1.0.0";

using RealVector = std::vector<double>;

inline constexpr double kNormEps = 1e-12;

inline bool all_finite(std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

// Row-major dense matrix.
class RealMatrix {
 public:
  RealMatrix() = default;
  RealMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  RealMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("RealMatrix: data size " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  // Builds a matrix from equally sized rows.
  static RealMatrix from_rows(const std::vector<RealVector>& rows) {
    if (rows.empty()) return {};
    RealMatrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols_) throw DimensionError("RealMatrix::from_rows: ragged rows");
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  RealVector row_vector(std::size_t r) const {
    auto s = row(r);
    return {s.begin(), s.end()};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool finite() const { return all_finite(data_); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  RealMatrix& operator+=(const RealMatrix& other) {
    check_same_shape(other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  // this += scale * other
  void add_scaled(const RealMatrix& other, double scale) {
    check_same_shape(other, "add_scaled");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
  }

  RealMatrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  bool operator==(const RealMatrix&) const = default;

 private:
  void check_same_shape(const RealMatrix& other, const char* where) const {
    if (rows_ != other.rows_ || cols_ != other.cols_)
      throw DimensionError(std::string("RealMatrix::") + where + ": shape mismatch");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Gathers the given rows into a new matrix.
inline RealMatrix select_rows(const RealMatrix& m, std::span<const std::size_t> idx) {
  RealMatrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = m.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

// a (n x k) * b (k x m)
inline RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  RealMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

// a (n x k) * b^T where b is (m x k)
inline RealMatrix matmul_bt(const RealMatrix& a, const RealMatrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_bt: inner dimensions differ");
  RealMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  return out;
}

// a^T * b where a is (n x k) and b is (n x m)
inline RealMatrix matmul_at(const RealMatrix& a, const RealMatrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_at: outer dimensions differ");
  RealMatrix out(a.cols(), b.cols());
  for (std::size_t n = 0; n < a.rows(); ++n)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ani = a(n, i);
      if (ani == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += ani * b(n, j);
    }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

enum class Metric { Euclid, Cosine };

inline std::string to_string(Metric m) { return m == Metric::Euclid ? "euclid" : "cosine"; }

inline Metric parse_metric(const std::string& s) {
  if (s == "euclid" || s == "euclidean") return Metric::Euclid;
  if (s == "cosine") return Metric::Cosine;
  throw ConfigError("unknown metric '" + s + "' (expected euclid|cosine)");
}

namespace detail {
inline void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size())
    throw DimensionError(std::string(what) + ": dimension mismatch " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  if (!all_finite(a) || !all_finite(b)) throw NumericError(std::string(what) + ": non-finite input");
}
}  // namespace detail

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  detail::check_pair(a, b, "euclidean_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// 1 - cos(a, b), in [0, 2].
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  detail::check_pair(a, b, "cosine_distance");
  const double na = norm(a);
  const double nb = norm(b);
  if (na <= kNormEps || nb <= kNormEps) throw NumericError("cosine_distance: zero-norm input");
  const double c = dot(a, b) / (na * nb);
  return 1.0 - std::clamp(c, -1.0, 1.0);
}

inline double distance(Metric metric, std::span<const double> a, std::span<const double> b) {
  return metric == Metric::Euclid ? euclidean_distance(a, b) : cosine_distance(a, b);
}

// Gradient of distance(metric, a, b) with respect to a, accumulated as
// out += scale * d/da. The Euclidean subgradient at a == b is zero.
inline void accumulate_distance_grad(Metric metric, std::span<const double> a, std::span<const double> b,
                                     double scale, std::span<double> out) {
  const std::size_t n = a.size();
  if (metric == Metric::Euclid) {
    const double d = euclidean_distance(a, b);
    if (d == 0.0) return;
    for (std::size_t i = 0; i < n; ++i) out[i] += scale * (a[i] - b[i]) / d;
    return;
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (na <= kNormEps || nb <= kNormEps) throw NumericError("cosine_distance: zero-norm input");
  const double c = dot(a, b) / (na * nb);
  // d(1 - c)/da = -(b / (|a||b|) - c * a / |a|^2)
  for (std::size_t i = 0; i < n; ++i) out[i] += -scale * (b[i] / (na * nb) - c * a[i] / (na * na));
}

// N x N distance matrix. Each unordered pair is computed once and mirrored,
// so the result is exactly symmetric with a zero diagonal.
inline RealMatrix pairwise_distances(const RealMatrix& batch, Metric metric) {
  if (batch.rows() == 0) throw DimensionError("pairwise_distances: empty batch");
  if (!batch.finite()) throw NumericError("pairwise_distances: non-finite input");
  const std::size_t n = batch.rows();
  RealMatrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (metric == Metric::Cosine) (void)cosine_distance(batch.row(i), batch.row(i));
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = distance(metric, batch.row(i), batch.row(j));
      out(i, j) = d;
      out(j, i) = d;
    }
  }
  return out;
}

// xoshiro256** seeded through SplitMix64. Sub-streams are derived by hashing
// (seed, stream id) so the draw sequence of one stream never depends on how
// many draws were taken from another.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
  }

  std::uint64_t seed() const { return seed_; }

  // Independent stream keyed by `stream_id`.
  RngStream substream(std::uint64_t stream_id) const {
    std::uint64_t sm = seed_ ^ 0x6a09e667f3bcc909ULL;
    std::uint64_t h = splitmix64(sm);
    sm = h ^ (stream_id * 0x9e3779b97f4a7c15ULL + 0x3c6ef372fe94f82bULL);
    return RngStream(splitmix64(sm));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ConfigError("RngStream::below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; the second variate is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  // k distinct indices drawn from [0, n), in draw order.
  std::vector<std::size_t> choose(std::size_t n, std::size_t k) {
    if (k > n) throw SamplingError("RngStream::choose: k > n");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + below(n - i)]);
    pool.resize(k);
    return pool;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace crossreid
