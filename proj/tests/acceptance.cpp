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
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "cafesim/cli/commands.hpp"
#include "golden_cases.hpp"
#include "oracles.hpp"

namespace cafesim {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::string config_path(const char* name) { return std::string(CAFESIM_CONFIG_DIR) + "/" + name; }

double exact_l(const FederatedProblem& p) { return sym_spectral_norm(p.mean_hessian()); }

struct Audited {
  RunResult run;
  ConstantsReport constants;
};

Audited audited(const FederatedProblem& p, AlgorithmKind kind, CompressorSpec spec, double gamma,
                std::size_t rounds) {
  EngineConfig cfg;
  cfg.kind = kind;
  cfg.spec = spec;
  cfg.gamma = gamma;
  cfg.keep_iterates = true;
  Audited a;
  a.run = run_experiment(cfg, p, ParamVector(p.dim(), 0.0), rounds);
  std::vector<ParamVector> probes;
  for (std::size_t i = 0; i < a.run.iterates.size(); i += 4) probes.push_back(a.run.iterates[i]);
  a.constants = estimate_constants(p, probes, SeedCtx{0, 0, 0, Purpose::kProbe});
  return a;
}

Outcome contract() {
  std::size_t bad = 0;
  for (std::size_t k : {1u, 10u, 100u}) bad += oracle::topk_contract_violations(1000, k, 1000);
  return {bad == 0, "violations=" + std::to_string(bad) + " over 3000 vectors"};
}

Outcome codec_roundtrip() {
  const auto s = golden::shapes();
  std::size_t ok = 0, total = 0;
  std::string bad;
  for (const auto& c : golden::cases()) {
    ++total;
    const auto p1 = encode(c.spec, golden::input(), s, golden::ctx());
    const auto p2 = encode(c.spec, golden::input(), s, golden::ctx());
    const auto want = golden::read(golden::path(CAFESIM_GOLDEN_DIR, c));
    const bool same = p1.to_bytes() == p2.to_bytes() &&
                      decode(c.spec, p1, s) == decode(c.spec, p2, s) && want && *want == p1.to_bytes();
    if (same) ++ok;
    else bad += " " + c.name;
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " families match fixtures" + bad};
}

Outcome theorem1() {
  const auto p = oracle::theorem_problem(0);
  const auto a = audited(p, AlgorithmKind::kDirect, CompressorSpec::topk(45), 1.0 / exact_l(p), 200);
  const auto r = audit_theorem(AuditKind::kThm1, a.run, a.constants);
  return {r.verdict == Verdict::kPass && r.slacks.size() == 200,
          std::string("verdict=") + to_string(r.verdict) +
              fmt(" worst_slack=%.3g omega*B^2=%.3g max_tightness=%.3g", r.worst_slack, r.omega * r.b_sq,
                  r.tightness.empty() ? 0.0 : *std::max_element(r.tightness.begin(), r.tightness.end()))};
}

Outcome theorem2() {
  const auto p = oracle::theorem_problem(0);
  const auto spec = CompressorSpec::topk(45);
  const double w = *certified_omega(spec, 50);
  const auto a = audited(p, AlgorithmKind::kCAFe, spec, (1.0 - w) / (exact_l(p) * (1.0 + w)), 200);
  const auto t2 = audit_theorem(AuditKind::kThm2, a.run, a.constants);
  const auto ly = audit_lyapunov(a.run, a.constants);
  return {t2.verdict == Verdict::kPass && ly.verdict == Verdict::kPass,
          std::string("thm2=") + to_string(t2.verdict) + fmt(" worst_slack=%.3g", t2.worst_slack) +
              " lyapunov=" + to_string(ly.verdict) + fmt(" worst_slack=%.3g", ly.worst_slack)};
}

Outcome theorem3() {
  const auto spec = CompressorSpec::topk(10);
  const auto perfect = oracle::theorem_problem(0, ServerObjective::kMean, /*identical=*/true);
  const auto a = audited(perfect, AlgorithmKind::kCAFeS, spec, 1.0 / exact_l(perfect), 200);
  const auto ra = audit_theorem(AuditKind::kThm3, a.run, a.constants);
  const auto noisy = oracle::theorem_problem(0, ServerObjective::kPerturbed);
  const auto b = audited(noisy, AlgorithmKind::kCAFeS, spec, 1.0 / exact_l(noisy), 200);
  const auto rb = audit_theorem(AuditKind::kThm3, b.run, b.constants);
  const bool pass = ra.verdict == Verdict::kPass && ra.g_sq < 1e-8 && rb.verdict == Verdict::kPass &&
                    rb.g_sq > 0.0 && rb.g_sq < 1.0;
  return {pass, std::string("mean server: ") + to_string(ra.verdict) + fmt(" G^2=%.3g;", ra.g_sq) +
                    " perturbed server: " + to_string(rb.verdict) +
                    fmt(" G^2=%.3g worst_slack=%.3g", rb.g_sq, rb.worst_slack)};
}

Outcome ef21() {
  QuadraticFamily fam;
  fam.dim = 30;
  fam.clients = 1;
  const auto p = make_quadratic_problem(fam, SeedCtx{0, 0, 0, Purpose::kProblem});
  const double gamma = 0.5 / exact_l(p);
  EngineConfig cfg;
  cfg.kind = AlgorithmKind::kCAFe;
  cfg.spec = CompressorSpec::topk(5);
  cfg.gamma = gamma;
  cfg.keep_iterates = true;
  const auto run = run_experiment(cfg, p, ParamVector(30, 0.0), 50);
  const auto ref = oracle::ef21_iterates(p.clients[0], ParamVector(30, 0.0), gamma, 5, 50);
  double worst = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, max_abs_diff(run.iterates[k], ref[k]));
  return {run.ok && worst <= 1e-9, fmt("max_deviation=%.3g over 50 rounds", worst)};
}

Outcome principle() {
  const auto cfg = parse_config(config_path("principle.json"));
  const auto r = run_principle(cfg, cfg.seeds.front());
  if (!r.ok) return {false, "training failed: " + r.failure};
  bool monotone = true;
  for (std::size_t k = 10; k + 1 < r.loss.size(); ++k) monotone = monotone && r.loss[k + 1] <= r.loss[k];
  const std::vector<double> window(r.gain_cafe.begin() + 10, r.gain_cafe.begin() + 401);
  const double med = median(window);
  const std::size_t center = r.hist_cafe.bins() / 2;
  const double lc = r.hist_cafe.log_density[center], ld = r.hist_direct.log_density[center];
  return {monotone && med < 1.0 && lc > ld,
          std::string("monotone_after_10=") + (monotone ? "yes" : "no") +
              fmt(" median_gain=%.4f center_logdensity cafe=%.4f direct=%.4f", med, lc, ld)};
}

Outcome aggressive() {
  auto cfg = parse_config(config_path("aggressive_topk.json"));
  std::size_t wins = 0;
  std::string detail;
  for (auto seed : cfg.seeds) {
    cfg.algorithm = AlgorithmKind::kCAFe;
    const auto c = run_seed(cfg, seed);
    cfg.algorithm = AlgorithmKind::kDirect;
    const auto d = run_seed(cfg, seed);
    const double lc = c.run.ok ? c.run.final_f : INFINITY;
    const double ld = d.run.ok ? d.run.final_f : INFINITY;
    if (lc < ld) ++wins;
    detail += fmt(" seed%.0f cafe=%.4f direct=%.4f", static_cast<double>(seed), lc, ld);
  }
  return {wins >= 2, std::to_string(wins) + "/3 seeds favor cafe;" + detail};
}

Outcome beta_monotone() {
  const auto base = parse_config(config_path("beta_sweep.json"));
  std::vector<double> means;
  std::string detail;
  for (double beta : {0.0, 0.5, 1.0}) {
    const auto cfg = with_axis_value(base, SweepAxis::kBeta, beta);
    double sum = 0.0;
    bool ok = true;
    for (auto seed : cfg.seeds) {
      const auto o = run_seed(cfg, seed);
      ok = ok && o.run.ok;
      sum += o.run.final_f;
    }
    means.push_back(ok ? sum / static_cast<double>(cfg.seeds.size()) : INFINITY);
    detail += fmt(" beta=%.1f loss=%.4f", beta, means.back());
  }
  int ties = 0;
  bool pass = true;
  for (std::size_t i = 0; i + 1 < means.size(); ++i) {
    if (means[i + 1] <= means[i]) continue;
    if (means[i + 1] <= 1.01 * means[i] && ++ties <= 1) continue;
    pass = false;
  }
  return {pass, detail.substr(1)};
}

Outcome traffic() {
  const auto p = oracle::theorem_problem(0);
  EngineConfig cfg;
  cfg.gamma = 0.05;
  cfg.kind = AlgorithmKind::kDirect;
  const auto direct = run_experiment(cfg, p, ParamVector(50, 0.0), 3);
  cfg.kind = AlgorithmKind::kCAFe;
  cfg.spec = CompressorSpec::topk(10);
  const auto cafe = run_experiment(cfg, p, ParamVector(50, 0.0), 3);
  bool doubled = true;
  for (std::size_t k = 0; k < 3; ++k)
    doubled = doubled && cafe.records[k].downlink_bits == 2 * direct.records[k].downlink_bits;
  const auto t = traffic_ledger(direct.records, AlgorithmKind::kDirect, Transport::kBroadcastPredictor, 50, 10);
  return {doubled && t.uplink_bpp == 32.0,
          fmt("downlink cafe/direct=%.3g identity uplink_bpp=%.17g",
              static_cast<double>(cafe.records[0].downlink_bits) / direct.records[0].downlink_bits, t.uplink_bpp)};
}

Outcome hygiene() {
  const double fd = oracle::fd_worst_relative_error(100);
  const double l3 = oracle::lemma3_worst_slack(100);
  // Determinism: logistic and quadratic runs serialized twice.
  bool same = true;
  for (const char* name : {"aggressive_topk.json", "quadratic_thm2.json"}) {
    auto cfg = parse_config(config_path(name));
    cfg.rounds = 30;
    const auto a = run_seed(cfg, 1), b = run_seed(cfg, 1);
    same = same && trajectory_csv(a.run.records) == trajectory_csv(b.run.records) && a.run.final_x == b.run.final_x;
  }
  return {fd <= 1e-6 && l3 >= -1e-9 && same,
          fmt("fd_worst_rel=%.3g lemma3_worst_slack=%.3g", fd, l3) + " deterministic=" + (same ? "yes" : "no")};
}

}  // namespace
}  // namespace cafesim

int main() {
  using namespace cafesim;
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
    double budget_s;  ///< 0 when the criterion states no runtime bound
  };
  const std::vector<Criterion> criteria = {
      {1, "compression contract", contract, 5.0},
      {2, "codec roundtrip", codec_roundtrip, 0.0},
      {3, "theorem 1 audit", theorem1, 10.0},
      {4, "theorem 2 audit", theorem2, 0.0},
      {5, "theorem 3 audit", theorem3, 0.0},
      {6, "error-feedback reduction", ef21, 0.0},
      {7, "principle reproduction", principle, 60.0},
      {8, "aggressive compression", aggressive, 0.0},
      {9, "beta monotonicity", beta_monotone, 0.0},
      {10, "traffic ledger", traffic, 0.0},
      {11, "numerical hygiene", hygiene, 0.0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0.0 && secs >= c.budget_s) {
      o.pass = false;
      o.detail += " (over the time budget)";
    }
    if (!o.pass) ++failures;
    std::printf("criterion %2d %-26s %s  %.2fs  %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
