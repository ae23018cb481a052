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
// Objectives (quadratic and multinomial logistic), synthetic data, client
// partitioning, and the smoothness / dissimilarity constants used by audits.

#ifndef CAFESIM_PROBLEMS_HPP_
#define CAFESIM_PROBLEMS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cafesim/compress.hpp"
#include "cafesim/errors.hpp"
#include "cafesim/kernels.hpp"

namespace cafesim {

// ---------------------------------------------------------------------------
// Data.

struct Dataset {
  DenseMatrix features;  ///< n × D
  std::vector<int> labels;
  int classes = 2;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  void validate() const {
    if (labels.empty()) throw RangeError("dataset: no samples");
    if (features.rows() != labels.size()) throw DimensionError("dataset: feature/label count mismatch");
    if (classes < 1) throw RangeError("dataset: classes must be >= 1");
    for (int y : labels)
      if (y < 0 || y >= classes) throw RangeError("dataset: label out of range");
  }
};

inline Dataset subset(const Dataset& data, std::span<const std::size_t> idx) {
  Dataset out;
  out.classes = data.classes;
  out.features = DenseMatrix(idx.size(), data.dim());
  out.labels.reserve(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = data.features.row(idx[r]);
    std::copy(src.begin(), src.end(), out.features.data().begin() + r * data.dim());
    out.labels.push_back(data.labels[idx[r]]);
  }
  return out;
}

inline Dataset concat(const std::vector<Dataset>& parts) {
  if (parts.empty()) throw RangeError("concat: no parts");
  Dataset out;
  out.classes = parts.front().classes;
  std::vector<double> feats;
  for (const auto& p : parts) {
    feats.insert(feats.end(), p.features.data().begin(), p.features.data().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.features = DenseMatrix(out.labels.size(), parts.front().dim(), std::move(feats));
  return out;
}

/// Gaussian blobs, one per class, with unit covariance. Class c has mean
/// separation · u_c for a seeded unit direction u_c. Samples are stored class
/// by class.
inline Dataset gen_classification(const SeedCtx& ctx, std::size_t dim, int classes,
                                  std::size_t n_per_class, double separation) {
  if (dim < 1) throw RangeError("gen_classification: D must be >= 1");
  if (classes < 2) throw RangeError("gen_classification: classes must be >= 2");
  if (n_per_class < 1) throw RangeError("gen_classification: n_per_class must be >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation))
    throw RangeError("gen_classification: separation must be finite and >= 0");

  CounterRng rng(ctx.with_purpose(Purpose::kData));
  std::vector<ParamVector> means(classes);
  for (auto& m : means) {
    m.resize(dim);
    for (double& x : m) x = rng.gaussian();
    const double n = norm(m);
    for (double& x : m) x *= separation / n;
  }
  Dataset out;
  out.classes = classes;
  out.features = DenseMatrix(static_cast<std::size_t>(classes) * n_per_class, dim);
  std::size_t row = 0;
  for (int c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
      for (std::size_t j = 0; j < dim; ++j) out.features(row, j) = means[c][j] + rng.gaussian();
      out.labels.push_back(c);
    }
  return out;
}

enum class PartitionMode { kIid, kByClass };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::kIid;
  double fraction = 1.0;  ///< share of classes per client for kByClass
};

/// Splits `data` across `clients`.
///
/// iid: seeded shuffle, then sample i goes to client i mod N.
/// by_class: every client draws ceil(fraction · classes) distinct seeded
/// random classes and takes the same number t of samples from each of them,
/// with t = min over used classes of floor(count / holders). Parts are disjoint
/// and equal-sized; samples left over after the equal split are not assigned.
inline std::vector<Dataset> partition(const Dataset& data, PartitionSpec spec,
                                      std::size_t clients, const SeedCtx& ctx) {
  data.validate();
  if (clients < 1) throw PartitionError("partition: need at least one client");
  CounterRng rng(ctx.with_purpose(Purpose::kPartition));
  std::vector<std::vector<std::size_t>> parts(clients);

  if (spec.mode == PartitionMode::kIid) {
    std::vector<std::size_t> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    seeded_shuffle(idx, rng);
    for (std::size_t i = 0; i < idx.size(); ++i) parts[i % clients].push_back(idx[i]);
  } else {
    if (!(spec.fraction > 0.0 && spec.fraction <= 1.0))
      throw PartitionError("partition: by_class fraction must lie in (0, 1]");
    const auto per_client = static_cast<std::size_t>(
        std::ceil(spec.fraction * static_cast<double>(data.classes) - 1e-9));
    std::vector<std::vector<std::size_t>> by_class(data.classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

    std::vector<std::vector<int>> chosen(clients);
    std::vector<std::size_t> holders(data.classes, 0);
    for (auto& set : chosen) {
      std::vector<int> cls(data.classes);
      for (int c = 0; c < data.classes; ++c) cls[c] = c;
      seeded_shuffle(cls, rng);
      set.assign(cls.begin(), cls.begin() + per_client);
      std::sort(set.begin(), set.end());
      for (int c : set) ++holders[c];
    }
    std::size_t take = data.size();
    for (int c = 0; c < data.classes; ++c)
      if (holders[c] > 0) take = std::min(take, by_class[c].size() / holders[c]);
    if (take == 0)
      throw PartitionError("partition: a chosen class has too few samples for its holders");

    for (auto& members : by_class) seeded_shuffle(members, rng);
    std::vector<std::size_t> cursor(data.classes, 0);
    for (std::size_t n = 0; n < clients; ++n) {
      for (int c : chosen[n]) {
        for (std::size_t t = 0; t < take; ++t) parts[n].push_back(by_class[c][cursor[c]++]);
      }
      std::sort(parts[n].begin(), parts[n].end());
    }
  }

  std::vector<Dataset> out;
  out.reserve(clients);
  for (const auto& p : parts) {
    if (p.empty()) throw PartitionError("partition: a client received no samples");
    out.push_back(subset(data, p));
  }
  return out;
}

/// Row indices (sorted) of a server-side sample of round(size_frac · n) rows:
/// floor(beta · size) drawn from `in_classes`, the rest from `out_classes`.
inline std::vector<std::size_t> server_split_indices(const Dataset& data, double beta,
                                                     double size_frac,
                                                     const std::vector<int>& in_classes,
                                                     const std::vector<int>& out_classes,
                                                     const SeedCtx& ctx) {
  data.validate();
  if (!(beta >= 0.0 && beta <= 1.0)) throw PartitionError("server split: beta must lie in [0, 1]");
  if (!(size_frac > 0.0 && size_frac <= 1.0))
    throw PartitionError("server split: size_frac must lie in (0, 1]");
  const std::set<int> in_set(in_classes.begin(), in_classes.end());
  const std::set<int> out_set(out_classes.begin(), out_classes.end());
  for (int c : in_set)
    if (out_set.count(c)) throw PartitionError("server split: in/out class sets overlap");

  const auto size = static_cast<std::size_t>(std::llround(size_frac * static_cast<double>(data.size())));
  const auto n_in = static_cast<std::size_t>(std::floor(beta * static_cast<double>(size) + 1e-9));
  const std::size_t n_out = size - n_in;

  CounterRng rng(ctx.with_purpose(Purpose::kServerSplit));
  std::vector<std::size_t> pool_in, pool_out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (in_set.count(data.labels[i])) pool_in.push_back(i);
    else if (out_set.count(data.labels[i])) pool_out.push_back(i);
  }
  if (pool_in.size() < n_in || pool_out.size() < n_out)
    throw PartitionError("server split: not enough samples in the requested classes");
  seeded_shuffle(pool_in, rng);
  seeded_shuffle(pool_out, rng);
  std::vector<std::size_t> idx(pool_in.begin(), pool_in.begin() + n_in);
  idx.insert(idx.end(), pool_out.begin(), pool_out.begin() + n_out);
  if (idx.empty()) throw PartitionError("server split: empty");
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline Dataset make_server_split(const Dataset& data, double beta, double size_frac,
                                 const std::vector<int>& in_classes,
                                 const std::vector<int>& out_classes, const SeedCtx& ctx) {
  return subset(data, server_split_indices(data, beta, size_frac, in_classes, out_classes, ctx));
}

/// Reads `f0,...,f{D-1},label` CSV with a header row.
inline Dataset load_dataset_csv(const std::string& path, int classes = 0) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file " + path, 1);
  std::size_t header_cols = std::count(line.begin(), line.end(), ',') + 1;
  if (header_cols < 2) throw ParseError("header needs at least one feature and a label", 1);
  const std::size_t dim = header_cols - 1;
  std::vector<double> feats;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header_cols)
      throw ParseError("expected " + std::to_string(header_cols) + " fields, got " +
                           std::to_string(cells.size()), lineno);
    for (std::size_t j = 0; j < dim; ++j) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(cells[j], &used);
      } catch (const std::exception&) {
        throw ParseError("bad number '" + cells[j] + "'", lineno);
      }
      if (used != cells[j].size() || !std::isfinite(v))
        throw ParseError("bad number '" + cells[j] + "'", lineno);
      feats.push_back(v);
    }
    std::size_t used = 0;
    int y = 0;
    try {
      y = std::stoi(cells[dim], &used);
    } catch (const std::exception&) {
      throw ParseError("bad label '" + cells[dim] + "'", lineno);
    }
    if (used != cells[dim].size() || y < 0) throw ParseError("bad label '" + cells[dim] + "'", lineno);
    labels.push_back(y);
  }
  if (labels.empty()) throw ParseError("no data rows in " + path, lineno);
  Dataset out;
  out.classes = classes > 0 ? classes : *std::max_element(labels.begin(), labels.end()) + 1;
  out.features = DenseMatrix(labels.size(), dim, std::move(feats));
  out.labels = std::move(labels);
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Objectives.

/// f(x) = ½ xᵀAx − bᵀx + c
struct QuadraticObjective {
  DenseMatrix a;
  ParamVector b;
  double c = 0.0;
};

/// Mean softmax cross-entropy over a dataset plus (ridge/2)·‖θ‖². Parameters
/// are a classes × D weight matrix (row-major) followed by classes biases.
struct LogisticObjective {
  std::shared_ptr<const Dataset> data;
  double ridge = 0.0;
};

class Objective {
 public:
  Objective(QuadraticObjective q) : impl_(std::move(q)) {
    const auto& qo = std::get<QuadraticObjective>(impl_);
    if (qo.a.rows() != qo.a.cols() || qo.a.rows() != qo.b.size())
      throw DimensionError("quadratic objective: shape mismatch");
    if (asymmetry(qo.a) > 1e-9) throw SymmetryError("quadratic objective: A not symmetric");
  }
  Objective(LogisticObjective l) : impl_(std::move(l)) {
    const auto& lo = std::get<LogisticObjective>(impl_);
    if (!lo.data) throw RangeError("logistic objective: no data");
    lo.data->validate();
    if (!(lo.ridge >= 0.0)) throw RangeError("logistic objective: ridge must be >= 0");
  }

  bool is_quadratic() const { return std::holds_alternative<QuadraticObjective>(impl_); }
  const QuadraticObjective& quadratic() const { return std::get<QuadraticObjective>(impl_); }
  const LogisticObjective& logistic() const { return std::get<LogisticObjective>(impl_); }

  std::size_t dim() const {
    if (is_quadratic()) return quadratic().b.size();
    const auto& d = *logistic().data;
    return static_cast<std::size_t>(d.classes) * (d.dim() + 1);
  }

 private:
  std::variant<QuadraticObjective, LogisticObjective> impl_;
};

namespace detail {

inline void check_point(const Objective& obj, std::span<const double> x) {
  if (x.size() != obj.dim())
    throw DimensionError("objective: point has dim " + std::to_string(x.size()) + ", expected " +
                         std::to_string(obj.dim()));
  if (!all_finite(x)) throw NonFiniteError("objective: non-finite point");
}

// Per-sample logits into `z`, returns log-sum-exp.
inline double logits(const Dataset& d, std::span<const double> x, std::size_t i,
                     std::vector<double>& z) {
  const std::size_t dim = d.dim();
  const auto feat = d.features.row(i);
  const std::size_t bias_off = static_cast<std::size_t>(d.classes) * dim;
  double zmax = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < d.classes; ++c) {
    z[c] = dot(std::span<const double>(x.data() + c * dim, dim), feat) + x[bias_off + c];
    zmax = std::max(zmax, z[c]);
  }
  double s = 0.0;
  for (int c = 0; c < d.classes; ++c) s += std::exp(z[c] - zmax);
  return zmax + std::log(s);
}

inline std::pair<double, ParamVector> logistic_value_grad(const LogisticObjective& obj,
                                                          std::span<const double> x,
                                                          bool want_grad) {
  const Dataset& d = *obj.data;
  const std::size_t dim = d.dim();
  const std::size_t bias_off = static_cast<std::size_t>(d.classes) * dim;
  std::vector<double> z(d.classes);
  ParamVector g(want_grad ? x.size() : 0, 0.0);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double lse = logits(d, x, i, z);
    const int y = d.labels[i];
    loss += lse - z[y];
    if (!want_grad) continue;
    const auto feat = d.features.row(i);
    for (int c = 0; c < d.classes; ++c) {
      const double r = (std::exp(z[c] - lse) - (c == y ? 1.0 : 0.0)) * inv_n;
      if (r == 0.0) continue;
      double* gw = g.data() + c * dim;
      for (std::size_t j = 0; j < dim; ++j) gw[j] += r * feat[j];
      g[bias_off + c] += r;
    }
  }
  loss *= inv_n;
  if (obj.ridge > 0.0) {
    loss += 0.5 * obj.ridge * sqnorm(x);
    if (want_grad) axpy(obj.ridge, x, g);
  }
  return {loss, std::move(g)};
}

}  // namespace detail

inline double value(const Objective& obj, std::span<const double> x) {
  detail::check_point(obj, x);
  double v;
  if (obj.is_quadratic()) {
    const auto& q = obj.quadratic();
    v = 0.5 * dot(x, matvec(q.a, x)) - dot(q.b, x) + q.c;
  } else {
    v = detail::logistic_value_grad(obj.logistic(), x, false).first;
  }
  if (!std::isfinite(v)) throw NonFiniteError("objective: non-finite value");
  return v;
}

inline ParamVector gradient(const Objective& obj, std::span<const double> x) {
  detail::check_point(obj, x);
  ParamVector g;
  if (obj.is_quadratic()) {
    const auto& q = obj.quadratic();
    g = matvec(q.a, x);
    axpy(-1.0, q.b, g);
  } else {
    g = detail::logistic_value_grad(obj.logistic(), x, true).second;
  }
  if (!all_finite(g)) throw NonFiniteError("objective: non-finite gradient");
  return g;
}

/// Train accuracy of argmax prediction (logistic parameters).
inline double accuracy(const Dataset& d, std::span<const double> x) {
  std::vector<double> z(d.classes);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    detail::logits(d, x, i, z);
    const auto best = std::max_element(z.begin(), z.end()) - z.begin();
    hits += best == d.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(d.size());
}

// ---------------------------------------------------------------------------
// Federated problem.

/// f = (1/N) Σ f_n, plus an optional server objective f_s.
struct FederatedProblem {
  std::vector<Objective> clients;
  std::optional<Objective> server;

  std::size_t dim() const { return clients.front().dim(); }
  std::size_t size() const { return clients.size(); }

  void validate() const {
    if (clients.empty()) throw RangeError("problem: no clients");
    for (const auto& c : clients)
      if (c.dim() != dim()) throw DimensionError("problem: client dims differ");
    if (server && server->dim() != dim()) throw DimensionError("problem: server dim differs");
  }

  bool all_quadratic() const {
    return std::all_of(clients.begin(), clients.end(), [](const Objective& o) { return o.is_quadratic(); }) &&
           (!server || server->is_quadratic());
  }

  double global_value(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& c : clients) s += value(c, x);
    return s / static_cast<double>(clients.size());
  }

  /// Index-ordered mean of client gradients.
  ParamVector global_gradient(std::span<const double> x) const {
    ParamVector g(dim(), 0.0);
    for (const auto& c : clients) axpy(1.0, gradient(c, x), g);
    for (double& v : g) v /= static_cast<double>(clients.size());
    return g;
  }

  /// Layer layout used by layer-aware codecs: logistic weights form a
  /// classes × D matrix followed by a bias vector; quadratics are flat.
  ShapeMap shapes() const {
    const auto& first = clients.front();
    if (first.is_quadratic()) return ShapeMap::flat(dim());
    const auto& d = *first.logistic().data;
    return ShapeMap({ShapeMap::matrix(static_cast<std::size_t>(d.classes), d.dim()),
                     ShapeMap::vector(static_cast<std::size_t>(d.classes))});
  }

  /// Mean of the client Hessians (quadratic problems only).
  DenseMatrix mean_hessian() const {
    if (!all_quadratic()) throw PreconditionError("mean_hessian: problem is not quadratic");
    DenseMatrix m(dim(), dim());
    for (const auto& c : clients) axpy(1.0, c.quadratic().a.data(), m.data());
    for (double& v : m.data()) v /= static_cast<double>(clients.size());
    return m;
  }
};

/// Builds a logistic client per partition (and a server objective when given).
inline FederatedProblem make_logistic_problem(const std::vector<Dataset>& parts, double ridge,
                                              const std::optional<Dataset>& server = std::nullopt) {
  FederatedProblem p;
  for (const auto& part : parts)
    p.clients.emplace_back(LogisticObjective{std::make_shared<const Dataset>(part), ridge});
  if (server) p.server = Objective(LogisticObjective{std::make_shared<const Dataset>(*server), ridge});
  p.validate();
  return p;
}

enum class ServerObjective { kNone, kMean, kPerturbed };

struct QuadraticFamily {
  std::size_t dim = 50;
  std::size_t clients = 10;
  double mu = 1.0;           ///< smallest eigenvalue of the base Hessian
  double lmax = 10.0;        ///< largest eigenvalue of the base Hessian
  double spread = 0.2;       ///< client Hessian perturbation, in units of mu
  bool identical = false;    ///< all clients equal the base objective
  ServerObjective server = ServerObjective::kNone;
  double server_perturbation = 0.3;  ///< server Hessian perturbation, units of mu
};

/// Random positive-definite quadratics sharing one minimizer x*, with
/// f_n(x) = ½ (x − x*)ᵀ A_n (x − x*), so f* = 0 and every local gradient
/// vanishes at x*. A_n = base + spread·mu·W_n/‖W_n‖ for symmetric Gaussian W_n.
/// Bounded dissimilarity then holds globally with a finite B².
inline FederatedProblem make_quadratic_problem(const QuadraticFamily& fam, const SeedCtx& ctx) {
  if (fam.dim < 1 || fam.clients < 1) throw RangeError("quadratic family: empty");
  if (!(fam.mu > 0.0 && fam.lmax >= fam.mu)) throw RangeError("quadratic family: need 0 < mu <= lmax");
  if (!(fam.spread >= 0.0 && fam.spread < 1.0) ||
      !(fam.server_perturbation >= 0.0 && fam.server_perturbation < 1.0))
    throw RangeError("quadratic family: perturbations must lie in [0, 1)");
  const std::size_t d = fam.dim;
  CounterRng rng(ctx.with_purpose(Purpose::kProblem));

  DenseMatrix g(d, d);
  for (double& v : g.data()) v = rng.gaussian();
  const DenseMatrix q = gram_schmidt(g, ctx.with_purpose(Purpose::kProblem));
  DenseMatrix base(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    const double lam = d == 1 ? fam.mu
                              : fam.mu + (fam.lmax - fam.mu) * static_cast<double>(i) /
                                             static_cast<double>(d - 1);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) base(r, c) += lam * q(r, i) * q(c, i);
  }
  auto symmetrize = [](DenseMatrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = r + 1; c < m.cols(); ++c) m(r, c) = m(c, r) = 0.5 * (m(r, c) + m(c, r));
  };
  symmetrize(base);

  ParamVector x_star(d);
  for (double& v : x_star) v = rng.gaussian();

  auto perturbed = [&](const DenseMatrix& from, double amount) {
    DenseMatrix a = from;
    if (amount == 0.0) return a;
    DenseMatrix w(d, d);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c <= r; ++c) w(r, c) = w(c, r) = rng.gaussian();
    const double scale = amount * fam.mu / sym_spectral_norm(w);
    axpy(scale, w.data(), a.data());
    symmetrize(a);
    return a;
  };
  auto objective_for = [&](DenseMatrix a) {
    ParamVector b = matvec(a, x_star);
    const double c = 0.5 * dot(x_star, b);
    return Objective(QuadraticObjective{std::move(a), std::move(b), c});
  };

  FederatedProblem p;
  for (std::size_t n = 0; n < fam.clients; ++n)
    p.clients.push_back(objective_for(perturbed(base, fam.identical ? 0.0 : fam.spread)));
  if (fam.server == ServerObjective::kMean) {
    p.server = objective_for(p.mean_hessian());
  } else if (fam.server == ServerObjective::kPerturbed) {
    p.server = objective_for(perturbed(p.mean_hessian(), fam.server_perturbation));
  }
  p.validate();
  return p;
}

/// Minimizer of the mean quadratic by conjugate gradients.
inline std::pair<ParamVector, double> quadratic_optimum(const FederatedProblem& problem) {
  const DenseMatrix a = problem.mean_hessian();
  const std::size_t d = problem.dim();
  ParamVector b(d, 0.0);
  for (const auto& c : problem.clients) axpy(1.0, c.quadratic().b, b);
  for (double& v : b) v /= static_cast<double>(problem.size());

  ParamVector x(d, 0.0);
  ParamVector r = b;
  ParamVector p = r;
  double rr = sqnorm(r);
  const double tol = 1e-12 * std::max(1.0, norm(b));
  for (std::size_t it = 0; it < 20 * d + 100 && std::sqrt(rr) > tol; ++it) {
    const ParamVector ap = matvec(a, p);
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) throw SingularError("quadratic_optimum: mean Hessian is not positive definite");
    const double alpha = rr / pap;
    axpy(alpha, p, x);
    axpy(-alpha, ap, r);
    const double rr_new = sqnorm(r);
    for (std::size_t i = 0; i < d; ++i) p[i] = r[i] + (rr_new / rr) * p[i];
    rr = rr_new;
  }
  // Recompute the true residual; CG's recursive one drifts.
  ParamVector res = matvec(a, x);
  axpy(-1.0, b, res);
  if (norm(res) > 1e-10 * std::max(1.0, norm(b)))
    throw SingularError("quadratic_optimum: did not converge");
  return {x, problem.global_value(x)};
}

// ---------------------------------------------------------------------------
// Constants.

enum class ConstantMethod { kExact, kUpperBound, kSampledLowerBound, kReferenceRun };

inline const char* to_string(ConstantMethod m) {
  switch (m) {
    case ConstantMethod::kExact: return "exact";
    case ConstantMethod::kUpperBound: return "upper-bound";
    case ConstantMethod::kSampledLowerBound: return "sampled-lower-bound";
    case ConstantMethod::kReferenceRun: return "reference-run";
  }
  return "?";
}

struct ConstantsReport {
  double L = 0.0;
  ConstantMethod L_method = ConstantMethod::kExact;
  double f_star = 0.0;
  ConstantMethod f_star_method = ConstantMethod::kExact;
  double B_sq = 1.0;  ///< sampled lower bound, >= 1
  double G_sq = 0.0;  ///< sampled lower bound, >= 0 (0 without a server)
  bool has_server = false;
  std::size_t probes_used = 0;

  bool f_star_exact() const { return f_star_method == ConstantMethod::kExact; }
};

/// Per-point dissimilarity ratios. B² term: mean‖∇f_n‖²/‖∇f‖²; G² term:
/// mean‖∇f_n − ∇f_s‖²/mean‖∇f_n‖². Either is empty when its denominator
/// vanishes.
struct Dissimilarity {
  std::optional<double> b_sq;
  std::optional<double> g_sq;
};

inline Dissimilarity dissimilarity_at(const FederatedProblem& problem, std::span<const double> x) {
  const std::size_t n = problem.size();
  ParamVector mean(problem.dim(), 0.0);
  double client_sq = 0.0, server_diff_sq = 0.0;
  std::optional<ParamVector> gs;
  if (problem.server) gs = gradient(*problem.server, x);
  for (const auto& c : problem.clients) {
    ParamVector g = gradient(c, x);
    client_sq += sqnorm(g);
    if (gs) server_diff_sq += sqnorm(subtract(g, *gs));
    axpy(1.0, g, mean);
  }
  for (double& v : mean) v /= static_cast<double>(n);
  client_sq /= static_cast<double>(n);
  server_diff_sq /= static_cast<double>(n);
  Dissimilarity out;
  const double gsq = sqnorm(mean);
  if (gsq >= 1e-18) out.b_sq = client_sq / gsq;
  if (gs && client_sq >= 1e-18) out.g_sq = server_diff_sq / client_sq;
  return out;
}

/// Certified upper bound on the smoothness of a logistic objective:
/// ½·λ_max(mean z zᵀ) + ridge with z = [features; 1].
inline double logistic_smoothness_bound(const LogisticObjective& obj) {
  const Dataset& d = *obj.data;
  const std::size_t m = d.dim() + 1;
  DenseMatrix cov(m, m);
  std::vector<double> z(m, 1.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto f = d.features.row(i);
    std::copy(f.begin(), f.end(), z.begin());
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < m; ++c) cov(r, c) += z[r] * z[c];
  }
  for (double& v : cov.data()) v /= static_cast<double>(d.size());
  return 0.5 * sym_spectral_norm(cov) + obj.ridge;
}

struct ConstantsOptions {
  /// Gaussian jitter copies per probe (scale: jitter_scale · (1 + ‖probe‖)/√d).
  std::size_t jitter_per_probe = 2;
  double jitter_scale = 1e-3;
  /// Steps of the reference GD run that estimates f* for non-quadratic problems.
  std::size_t reference_steps = 100000;
};

/// L, f*, and sampled lower bounds of B², G² over `probes` plus seeded jitter.
/// Quadratic problems get exact L and f*; logistic problems get a certified
/// upper bound on L and a reference-run f*.
inline ConstantsReport estimate_constants(const FederatedProblem& problem,
                                          const std::vector<ParamVector>& probes,
                                          const SeedCtx& ctx = {},
                                          const ConstantsOptions& opts = {}) {
  problem.validate();
  ConstantsReport rep;
  rep.has_server = problem.server.has_value();
  const bool quad = problem.all_quadratic();
  if (quad) {
    rep.L = sym_spectral_norm(problem.mean_hessian());
    rep.L_method = ConstantMethod::kExact;
    rep.f_star = quadratic_optimum(problem).second;
    rep.f_star_method = ConstantMethod::kExact;
  } else {
    double l = 0.0;
    for (const auto& c : problem.clients) l += logistic_smoothness_bound(c.logistic());
    rep.L = l / static_cast<double>(problem.size());
    rep.L_method = ConstantMethod::kUpperBound;
    ParamVector x(problem.dim(), 0.0);
    const double step = 1.0 / rep.L;
    for (std::size_t s = 0; s < opts.reference_steps; ++s) axpy(-step, problem.global_gradient(x), x);
    rep.f_star = problem.global_value(x);
    rep.f_star_method = ConstantMethod::kReferenceRun;
  }

  if (probes.empty() && !quad) throw RangeError("estimate_constants: probes required");
  CounterRng rng(ctx.with_purpose(Purpose::kProbe));
  std::size_t used = 0, skipped = 0;
  auto visit = [&](std::span<const double> x) {
    const auto r = dissimilarity_at(problem, x);
    if (r.b_sq) {
      rep.B_sq = std::max(rep.B_sq, *r.b_sq);
      ++used;
    } else {
      ++skipped;
    }
    if (r.g_sq) rep.G_sq = std::max(rep.G_sq, *r.g_sq);
  };
  const double sqrt_d = std::sqrt(static_cast<double>(problem.dim()));
  for (const auto& p : probes) {
    visit(p);
    for (std::size_t j = 0; j < opts.jitter_per_probe; ++j) {
      ParamVector q = p;
      const double s = opts.jitter_scale * (1.0 + norm(p)) / sqrt_d;
      for (double& v : q) v += s * rng.gaussian();
      visit(q);
    }
  }
  if (!probes.empty() && used == 0)
    throw SingularError("estimate_constants: global gradient vanishes at every probe");
  rep.B_sq = std::max(rep.B_sq, 1.0);
  rep.probes_used = used;
  (void)skipped;
  return rep;
}

}  // namespace cafesim

#endif  // CAFESIM_PROBLEMS_HPP_
