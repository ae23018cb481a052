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
// Diagnostics and the convergence auditor. Audits replay recorded
// trajectories through the per-round inequalities of the analysis and report
// the slack rhs − lhs of each one. Compressors here are deterministic, so the
// expectations in the analysis collapse to pointwise statements.

#ifndef CAFESIM_METRICS_HPP_
#define CAFESIM_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cafesim/errors.hpp"
#include "cafesim/kernels.hpp"
#include "cafesim/problems.hpp"
#include "cafesim/protocol.hpp"
#include "json.hpp"

namespace cafesim {

/// ρ = ‖Δ − P‖ / ‖Δ‖.
inline double gain_ratio(std::span<const double> delta, std::span<const double> predictor) {
  if (delta.size() != predictor.size()) throw DimensionError("gain_ratio: size mismatch");
  const double dn = norm(delta);
  if (!(dn > 1e-15)) throw DegenerateInput("gain_ratio: update norm is zero");
  double s = 0.0;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double r = delta[i] - predictor[i];
    s += r * r;
  }
  return std::sqrt(s) / dn;
}

/// Ψ = f + γ/(2(1−ω))·‖ē‖².
inline double lyapunov(double f_val, double err_sq, double gamma, double omega) {
  if (!(omega >= 0.0 && omega < 1.0)) throw RangeError("lyapunov: omega must lie in [0, 1)");
  return f_val + gamma / (2.0 * (1.0 - omega)) * err_sq;
}

enum class AuditKind { kDescentLemma, kLemma2, kLyapunov, kThm1, kThm2, kThm3 };

inline const char* to_string(AuditKind k) {
  switch (k) {
    case AuditKind::kDescentLemma: return "descent_lemma";
    case AuditKind::kLemma2: return "lemma2_recursion";
    case AuditKind::kLyapunov: return "lyapunov";
    case AuditKind::kThm1: return "thm1";
    case AuditKind::kThm2: return "thm2";
    case AuditKind::kThm3: return "thm3";
  }
  return "?";
}

inline AuditKind parse_audit_kind(const std::string& s) {
  for (auto k : {AuditKind::kDescentLemma, AuditKind::kLemma2, AuditKind::kLyapunov,
                 AuditKind::kThm1, AuditKind::kThm2, AuditKind::kThm3}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown audit '" + s + "'");
}

enum class Verdict { kPass, kFail, kNotApplicable, kConsistent, kInconsistent };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kPass: return "pass";
    case Verdict::kFail: return "fail";
    case Verdict::kNotApplicable: return "not-applicable";
    case Verdict::kConsistent: return "consistent";
    case Verdict::kInconsistent: return "inconsistent";
  }
  return "?";
}

struct AuditConfig {
  AuditKind which = AuditKind::kThm1;
  double tolerance = 1e-9;
  ConstantsReport constants;
};

struct AuditReport {
  AuditKind which = AuditKind::kThm1;
  std::vector<double> slacks;
  double worst_slack = std::numeric_limits<double>::infinity();
  Verdict verdict = Verdict::kNotApplicable;
  /// lhs / bound per prefix length K (theorems only).
  std::vector<double> tightness;
  std::vector<double> bounds;
  double omega = 0.0;
  double b_sq = 1.0;
  double g_sq = 0.0;
  double tolerance = 1e-9;
  std::string note;

  bool passed() const { return verdict == Verdict::kPass || verdict == Verdict::kConsistent; }
};

inline nlohmann::json to_json(const AuditReport& r) {
  nlohmann::json j;
  j["which"] = to_string(r.which);
  j["verdict"] = to_string(r.verdict);
  j["tolerance"] = r.tolerance;
  j["omega"] = r.omega;
  j["B_sq"] = r.b_sq;
  j["G_sq"] = r.g_sq;
  if (r.slacks.empty()) {
    j["worst_slack"] = nullptr;
  } else {
    j["worst_slack"] = r.worst_slack;
  }
  j["slacks"] = r.slacks;
  j["tightness"] = r.tightness;
  j["bounds"] = r.bounds;
  j["note"] = r.note;
  return j;
}

/// Dissimilarity observed along a trajectory, x^0 .. x^K.
struct TrajectoryConstants {
  double b_sq = 1.0;
  double g_sq = 0.0;
};

inline TrajectoryConstants trajectory_constants(const RunResult& run) {
  TrajectoryConstants t;
  auto visit = [&](double grad_sq, double client_sq, std::optional<double> diff_sq) {
    if (grad_sq > 0.0) t.b_sq = std::max(t.b_sq, client_sq / grad_sq);
    if (diff_sq && client_sq > 0.0) t.g_sq = std::max(t.g_sq, *diff_sq / client_sq);
  };
  for (const auto& r : run.records) visit(r.grad_sq, r.client_grad_sq, r.server_diff_sq);
  if (run.ok) visit(run.final_grad_sq, run.final_client_grad_sq, run.final_server_diff_sq);
  return t;
}

namespace detail {

inline AuditReport not_applicable(AuditReport r, std::string why) {
  r.verdict = Verdict::kNotApplicable;
  r.note = std::move(why);
  return r;
}

inline void finish(AuditReport& r, bool sound) {
  r.worst_slack = std::numeric_limits<double>::infinity();
  for (double s : r.slacks) r.worst_slack = std::min(r.worst_slack, s);
  const bool ok = std::all_of(r.slacks.begin(), r.slacks.end(),
                              [&](double s) { return s >= -r.tolerance; });
  if (sound) {
    r.verdict = ok ? Verdict::kPass : Verdict::kFail;
  } else {
    r.verdict = ok ? Verdict::kConsistent : Verdict::kInconsistent;
  }
}

inline bool below_cap(double gamma, double cap) { return gamma <= cap * (1.0 + 1e-12); }

/// f(x^{k+1}) for k in [0, K).
inline double next_f(const RunResult& run, std::size_t k) {
  return k + 1 < run.records.size() ? run.records[k + 1].f_value : run.final_f;
}

/// Shared preconditions. Returns a reason string when the audit cannot run.
inline std::optional<std::string> common_preconditions(const RunResult& run,
                                                       const ConstantsReport& c) {
  if (!run.ok) return "trajectory aborted: " + run.failure;
  if (run.records.empty()) return "empty trajectory";
  if (run.momentum != 0.0) return "server momentum is on";
  if (!run.omega) return "compressor has no certified contract constant";
  if (!(c.L > 0.0)) return "smoothness constant unavailable";
  return std::nullopt;
}

inline bool l_sound(const ConstantsReport& c) {
  return c.L_method == ConstantMethod::kExact || c.L_method == ConstantMethod::kUpperBound;
}

}  // namespace detail

/// f^{k+1} ≤ f^k − γ/2‖∇f^k‖² + γ/2‖ē^k‖², valid for γ ≤ 1/L.
inline AuditReport audit_descent(const RunResult& run, const ConstantsReport& c,
                                 double tol = 1e-9) {
  AuditReport r;
  r.which = AuditKind::kDescentLemma;
  r.tolerance = tol;
  if (!run.ok) return detail::not_applicable(r, "trajectory aborted: " + run.failure);
  if (run.momentum != 0.0) return detail::not_applicable(r, "server momentum is on");
  if (!(c.L > 0.0)) return detail::not_applicable(r, "smoothness constant unavailable");
  if (!detail::below_cap(run.gamma, 1.0 / c.L))
    return detail::not_applicable(r, "gamma exceeds 1/L");
  const double g = run.gamma;
  for (std::size_t k = 0; k < run.records.size(); ++k) {
    const auto& rec = run.records[k];
    r.slacks.push_back(rec.f_value - 0.5 * g * rec.grad_sq + 0.5 * g * rec.err_sq -
                       detail::next_f(run, k));
  }
  r.omega = run.omega.value_or(0.0);
  detail::finish(r, detail::l_sound(c));
  return r;
}

/// ‖ē^{k+1}‖² ≤ ω(B²‖∇f^{k+1}‖² − ‖∇f^k‖²) + 2γωL‖g^k‖² + ω‖ē^k‖², where
/// g^k = (x^k − x^{k+1})/γ. Applies to the previous-aggregate predictor.
inline AuditReport audit_lemma2(const RunResult& run, const ConstantsReport& c,
                                double tol = 1e-9) {
  AuditReport r;
  r.which = AuditKind::kLemma2;
  r.tolerance = tol;
  if (auto why = detail::common_preconditions(run, c)) return detail::not_applicable(r, *why);
  if (run.kind != AlgorithmKind::kCAFe) return detail::not_applicable(r, "requires cafe");
  const auto t = trajectory_constants(run);
  const double w = *run.omega, g = run.gamma, l = c.L;
  r.omega = w;
  r.b_sq = t.b_sq;
  for (std::size_t k = 0; k + 1 < run.records.size(); ++k) {
    const auto& cur = run.records[k];
    const auto& nxt = run.records[k + 1];
    const double rhs = w * (t.b_sq * nxt.grad_sq - cur.grad_sq) + 2.0 * w * l * cur.step_sq / g +
                       w * cur.err_sq;
    r.slacks.push_back(rhs - nxt.err_sq);
  }
  detail::finish(r, detail::l_sound(c));
  return r;
}

/// Ψ^{k+1} ≤ Ψ^k − γ/(2(1−ω))‖∇f^k‖² + γωB²/(2(1−ω))‖∇f^{k+1}‖².
inline AuditReport audit_lyapunov(const RunResult& run, const ConstantsReport& c,
                                  double tol = 1e-9) {
  AuditReport r;
  r.which = AuditKind::kLyapunov;
  r.tolerance = tol;
  if (auto why = detail::common_preconditions(run, c)) return detail::not_applicable(r, *why);
  if (run.kind != AlgorithmKind::kCAFe) return detail::not_applicable(r, "requires cafe");
  const double w = *run.omega, g = run.gamma;
  if (!detail::below_cap(g, (1.0 - w) / (c.L * (1.0 + w))))
    return detail::not_applicable(r, "gamma exceeds (1-omega)/(L(1+omega))");
  const auto t = trajectory_constants(run);
  r.omega = w;
  r.b_sq = t.b_sq;
  const double scale = g / (2.0 * (1.0 - w));
  for (std::size_t k = 0; k + 1 < run.records.size(); ++k) {
    const auto& cur = run.records[k];
    const auto& nxt = run.records[k + 1];
    const double psi = lyapunov(cur.f_value, cur.err_sq, g, w);
    const double psi_next = lyapunov(nxt.f_value, nxt.err_sq, g, w);
    const double rhs = psi - scale * cur.grad_sq + scale * w * t.b_sq * nxt.grad_sq;
    r.slacks.push_back(rhs - psi_next);
  }
  detail::finish(r, detail::l_sound(c));
  return r;
}

/// Checks (1/K) Σ_{k<K} ‖∇f^k‖² ≤ bound(K) for every prefix K.
inline AuditReport audit_theorem(AuditKind which, const RunResult& run, const ConstantsReport& c,
                                 double tol = 1e-9) {
  AuditReport r;
  r.which = which;
  r.tolerance = tol;
  AlgorithmKind expect;
  switch (which) {
    case AuditKind::kThm1: expect = AlgorithmKind::kDirect; break;
    case AuditKind::kThm2: expect = AlgorithmKind::kCAFe; break;
    case AuditKind::kThm3: expect = AlgorithmKind::kCAFeS; break;
    default: throw ConfigError("audit_theorem: not a theorem audit");
  }
  if (auto why = detail::common_preconditions(run, c)) return detail::not_applicable(r, *why);
  if (run.kind != expect)
    return detail::not_applicable(r, std::string("requires ") + to_string(expect));
  const double w = *run.omega, g = run.gamma;
  const auto t = trajectory_constants(run);
  r.omega = w;
  r.b_sq = t.b_sq;
  r.g_sq = t.g_sq;

  double factor = 0.0;
  if (which == AuditKind::kThm2) {
    if (!detail::below_cap(g, (1.0 - w) / (c.L * (1.0 + w))))
      return detail::not_applicable(r, "gamma exceeds (1-omega)/(L(1+omega))");
    if (!(w * t.b_sq < 1.0)) return detail::not_applicable(r, "omega*B^2 >= 1");
    factor = (1.0 - w) / (1.0 - w * t.b_sq);
  } else if (which == AuditKind::kThm1) {
    if (!detail::below_cap(g, 1.0 / c.L)) return detail::not_applicable(r, "gamma exceeds 1/L");
    if (!(w * t.b_sq < 1.0)) return detail::not_applicable(r, "omega*B^2 >= 1");
    factor = 1.0 / (1.0 - w * t.b_sq);
  } else {
    if (!run.has_server) return detail::not_applicable(r, "no server objective");
    if (!detail::below_cap(g, 1.0 / c.L)) return detail::not_applicable(r, "gamma exceeds 1/L");
    const double wgb = w * t.g_sq * t.b_sq;
    if (!(wgb < 1.0)) return detail::not_applicable(r, "omega*G^2*B^2 >= 1");
    factor = 1.0 / (1.0 - wgb);
  }

  const double gap = run.records.front().f_value - c.f_star;
  double sum = 0.0;
  for (std::size_t k = 0; k < run.records.size(); ++k) {
    sum += run.records[k].grad_sq;
    const double kk = static_cast<double>(k + 1);
    const double lhs = sum / kk;
    const double bound = 2.0 * gap / (g * kk) * factor;
    r.bounds.push_back(bound);
    r.slacks.push_back(bound - lhs);
    r.tightness.push_back(bound > 0.0 ? lhs / bound : std::numeric_limits<double>::quiet_NaN());
  }
  detail::finish(r, detail::l_sound(c) && c.f_star_exact());
  return r;
}

inline AuditReport run_audit(const AuditConfig& cfg, const RunResult& run) {
  switch (cfg.which) {
    case AuditKind::kDescentLemma: return audit_descent(run, cfg.constants, cfg.tolerance);
    case AuditKind::kLemma2: return audit_lemma2(run, cfg.constants, cfg.tolerance);
    case AuditKind::kLyapunov: return audit_lyapunov(run, cfg.constants, cfg.tolerance);
    default: return audit_theorem(cfg.which, run, cfg.constants, cfg.tolerance);
  }
}

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
  std::vector<double> density;
  /// log10 density; empty bins carry log10(1e-12) and are flagged.
  std::vector<double> log_density;
  std::vector<bool> floored;
  std::size_t total = 0;
  std::size_t outside = 0;

  std::size_t bins() const { return counts.size(); }
  double width() const { return (hi - lo) / static_cast<double>(counts.size()); }
  double center(std::size_t b) const { return lo + (static_cast<double>(b) + 0.5) * width(); }
};

/// Fixed-range histogram filled incrementally. Density is
/// count / (total · width); values outside [lo, hi] count towards the total
/// but land in no bin. hi itself falls in the last bin.
class HistogramAccumulator {
 public:
  HistogramAccumulator(std::size_t bins, double lo, double hi) : lo_(lo), hi_(hi) {
    if (bins < 2) throw RangeError("histogram: bins must be >= 2");
    if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi))
      throw RangeError("histogram: invalid range");
    counts_.assign(bins, 0);
  }

  void add(std::span<const double> values) {
    const double w = (hi_ - lo_) / static_cast<double>(counts_.size());
    for (double v : values) {
      ++total_;
      if (!(v >= lo_ && v <= hi_)) continue;
      auto b = static_cast<std::size_t>((v - lo_) / w);
      if (b >= counts_.size()) b = counts_.size() - 1;
      ++counts_[b];
    }
  }

  Histogram finish() const {
    if (total_ == 0) throw RangeError("histogram: no values");
    constexpr double kFloor = 1e-12;
    Histogram h;
    h.lo = lo_;
    h.hi = hi_;
    h.counts = counts_;
    h.total = total_;
    const double w = h.width();
    std::size_t inside = 0;
    for (std::size_t c : counts_) {
      inside += c;
      const double dens = static_cast<double>(c) / (static_cast<double>(total_) * w);
      h.density.push_back(dens);
      h.floored.push_back(c == 0);
      h.log_density.push_back(std::log10(c == 0 ? kFloor : dens));
    }
    h.outside = total_ - inside;
    return h;
  }

 private:
  double lo_, hi_;
  std::vector<std::size_t> counts_;
  std::size_t total_ = 0;
};

inline Histogram histogram_logdensity(std::span<const double> values, std::size_t bins, double lo,
                                      double hi) {
  HistogramAccumulator acc(bins, lo, hi);
  acc.add(values);
  return acc.finish();
}

/// Range taken from the data; a constant sample gets a unit-width window.
inline Histogram histogram_logdensity(std::span<const double> values, std::size_t bins) {
  if (values.empty()) throw RangeError("histogram: no values");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  double lo = *mn, hi = *mx;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  return histogram_logdensity(values, bins, lo, hi);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw RangeError("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace cafesim

#endif  // CAFESIM_METRICS_HPP_
