// Copyright 2026 The cafesim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
//
// Dense linear algebra and counter-based seeded randomness. Everything here is
// a pure function of its arguments; all arithmetic is 64-bit.

#ifndef CAFESIM_KERNELS_HPP_
#define CAFESIM_KERNELS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cafesim/errors.hpp"

namespace cafesim {

/// Flat model / update vector. Holds x, client updates, aggregates and errors.
using ParamVector = std::vector<double>;

/// Row-major dense matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("DenseMatrix: data length " +
                           std::to_string(data_.size()) + " != rows*cols " +
                           std::to_string(rows_ * cols_));
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Vector helpers.

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Sum of squares.
inline double sqnorm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(sqnorm(v)); }

inline ParamVector subtract(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("subtract: length mismatch");
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline ParamVector add(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("add: length mismatch");
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline ParamVector scaled(std::span<const double> a, double alpha) {
  ParamVector out(a.begin(), a.end());
  for (double& x : out) x *= alpha;
  return out;
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Matrix helpers.

inline ParamVector matvec(const DenseMatrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw DimensionError("matvec: shape mismatch");
  ParamVector y(a.rows(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) y[r] = dot(a.row(r), x);
  return y;
}

/// aᵀ x
inline ParamVector matvec_t(const DenseMatrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw DimensionError("matvec_t: shape mismatch");
  ParamVector y(a.cols(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double xr = x[r];
    const auto row = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) y[c] += row[c] * xr;
  }
  return y;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: shape mismatch");
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

/// a · bᵀ
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: shape mismatch");
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

/// aᵀ · b
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn: shape mismatch");
  DenseMatrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  return out;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("max_abs_diff: shape mismatch");
  return max_abs_diff(a.data(), b.data());
}

// ---------------------------------------------------------------------------
// Seeded randomness.

/// Stream purposes. Values are part of the on-disk determinism contract.
enum class Purpose : std::uint32_t {
  kGeneric = 0,
  kLowRankInit = 1,
  kOrthoRefill = 2,
  kData = 3,
  kPartition = 4,
  kProblem = 5,
  kProbe = 6,
  kInit = 7,
  kServerSplit = 8,
};

/// Labels of one independent random stream.
struct SeedCtx {
  std::uint64_t master_seed = 0;
  std::uint64_t round = 0;
  std::uint64_t layer = 0;
  Purpose purpose = Purpose::kGeneric;

  SeedCtx with_round(std::uint64_t r) const {
    SeedCtx c = *this;
    c.round = r;
    return c;
  }
  SeedCtx with_layer(std::uint64_t l) const {
    SeedCtx c = *this;
    c.layer = l;
    return c;
  }
  SeedCtx with_purpose(Purpose p) const {
    SeedCtx c = *this;
    c.purpose = p;
    return c;
  }
};

namespace detail {

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t stream_key(const SeedCtx& ctx) {
  std::uint64_t k = mix64(ctx.master_seed + 0x9e3779b97f4a7c15ULL);
  k = mix64(k ^ (ctx.round * 0xd1b54a32d192ed03ULL + 1));
  k = mix64(k ^ (ctx.layer * 0xaef17502108ef2d9ULL + 2));
  k = mix64(k ^ (static_cast<std::uint64_t>(ctx.purpose) * 0xf1357aea2e62a9c5ULL + 3));
  return k;
}

}  // namespace detail

/// Counter-based generator: the i-th draw is mix(key, i). Output depends only
/// on the SeedCtx labels and the number of draws taken so far.
class CounterRng {
 public:
  explicit CounterRng(const SeedCtx& ctx) : key_(detail::stream_key(ctx)) {}

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ ^ detail::mix64(counter_ * 0x9e3779b97f4a7c15ULL));
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Lemire's method with rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    while (true) {
      const unsigned __int128 m =
          static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
      const auto low = static_cast<std::uint64_t>(m);
      if (low >= n || low >= (-n) % n) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Fisher-Yates with the counter generator, so permutations are portable.
template <class T>
void seeded_shuffle(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

inline ParamVector seeded_gaussian(const SeedCtx& ctx, std::size_t n) {
  CounterRng rng(ctx);
  ParamVector out(n);
  for (double& x : out) x = rng.gaussian();
  return out;
}

// ---------------------------------------------------------------------------
// Orthonormalization and spectra.

/// Orthonormalizes the columns of `m` (modified Gram-Schmidt, two passes).
/// A column whose residual norm drops below 1e-12 (relative to its original
/// norm, or absolutely for a zero column) is replaced by a seeded random
/// direction drawn from `ctx` and orthonormalized against the earlier ones.
inline DenseMatrix gram_schmidt(const DenseMatrix& m, const SeedCtx& ctx = {}) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  if (cols > rows) {
    throw DimensionError("gram_schmidt: cols " + std::to_string(cols) +
                         " > rows " + std::to_string(rows));
  }
  // Work column-major.
  std::vector<ParamVector> q(cols, ParamVector(rows));
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t r = 0; r < rows; ++r) q[c][r] = m(r, c);

  CounterRng refill(ctx.with_purpose(Purpose::kOrthoRefill));
  constexpr double kPivotTol = 1e-12;

  auto project_out = [&](ParamVector& v, std::size_t upto) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t j = 0; j < upto; ++j) axpy(-dot(q[j], v), q[j], v);
  };

  for (std::size_t c = 0; c < cols; ++c) {
    const double original = norm(q[c]);
    project_out(q[c], c);
    double nrm = norm(q[c]);
    int attempts = 0;
    while (!(nrm > kPivotTol * std::max(1.0, original))) {
      for (double& x : q[c]) x = refill.gaussian();
      project_out(q[c], c);
      nrm = norm(q[c]);
      if (++attempts > 64) throw SingularError("gram_schmidt: refill failed");
    }
    for (double& x : q[c]) x /= nrm;
  }

  DenseMatrix out(rows, cols);
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t r = 0; r < rows; ++r) out(r, c) = q[c][r];
  return out;
}

inline double asymmetry(const DenseMatrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("matrix is not square");
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      m = std::max(m, std::abs(a(i, j) - a(j, i)));
  return m;
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration.
/// Stops when the eigen-residual ‖Av − λv‖ drops below 1e-10·|λ| or after
/// 10⁴ iterations.
inline double sym_spectral_norm(const DenseMatrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("sym_spectral_norm: not square");
  if (asymmetry(a) > 1e-9) throw SymmetryError("sym_spectral_norm: matrix not symmetric");
  const std::size_t n = a.rows();
  if (n == 0) return 0.0;

  // Deterministic start: ones plus a small seeded tilt so no eigenvector of a
  // structured matrix is orthogonal to it by accident.
  ParamVector v = seeded_gaussian(SeedCtx{0x5eed, 0, 0, Purpose::kGeneric}, n);
  for (double& x : v) x = 1.0 + 0.1 * x;
  double nv = norm(v);
  for (double& x : v) x /= nv;

  double lambda = 0.0;
  for (int it = 0; it < 10000; ++it) {
    ParamVector w = matvec(a, v);
    lambda = dot(v, w);
    ParamVector resid = w;
    axpy(-lambda, v, resid);
    const double nw = norm(w);
    if (nw == 0.0) return 0.0;
    if (norm(resid) <= 1e-10 * std::abs(lambda)) break;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
  }
  return std::abs(lambda);
}

}  // namespace cafesim

#endif  // CAFESIM_KERNELS_HPP_
