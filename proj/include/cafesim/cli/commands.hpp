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
// Experiment orchestration behind the `cafesim` binary. Every command returns
// its process exit status:
//
//   0  success (audit: pass or consistent)
//   1  configuration or I/O error
//   2  a run aborted on a non-finite value
//   3  audit failed
//   4  audit not applicable

#ifndef CAFESIM_CLI_COMMANDS_HPP_
#define CAFESIM_CLI_COMMANDS_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "cafesim/cli/config.hpp"
#include "cafesim/cli/svg.hpp"
#include "cafesim/compress.hpp"
#include "cafesim/metrics.hpp"
#include "cafesim/problems.hpp"
#include "cafesim/protocol.hpp"
#include "json.hpp"

namespace cafesim {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitNonFinite = 2;
inline constexpr int kExitAuditFail = 3;
inline constexpr int kExitNotApplicable = 4;

/// A concrete problem instance for one seed.
struct BuiltProblem {
  FederatedProblem problem;
  /// Union of the client datasets, for train accuracy (logistic only).
  std::shared_ptr<const Dataset> train;
  ParamVector x0;
};

inline BuiltProblem build_problem(const ExperimentConfig& cfg, std::uint64_t seed) {
  BuiltProblem out;
  const auto& pc = cfg.problem;
  if (pc.kind == ProblemKind::kQuadratic) {
    QuadraticFamily fam = pc.quadratic;
    fam.clients = cfg.clients;
    out.problem = make_quadratic_problem(fam, SeedCtx{seed, 0, 0, Purpose::kProblem});
    out.x0.assign(out.problem.dim(), 0.0);
    return out;
  }

  Dataset data = pc.data_csv ? load_dataset_csv(*pc.data_csv, pc.classes)
                             : gen_classification(SeedCtx{seed, 0, 0, Purpose::kData}, pc.dim,
                                                  pc.classes, pc.n_per_class, pc.separation);
  std::vector<int> client_classes;
  if (pc.client_classes) {
    client_classes = *pc.client_classes;
  } else {
    for (int c = 0; c < data.classes; ++c) client_classes.push_back(c);
  }
  std::vector<bool> taken(data.size(), false);
  std::optional<Dataset> server;
  if (pc.server) {
    const auto in = pc.server->in_classes.value_or(client_classes);
    std::vector<int> out_classes;
    if (pc.server->out_classes) {
      out_classes = *pc.server->out_classes;
    } else {
      const std::set<int> in_set(in.begin(), in.end());
      for (int c = 0; c < data.classes; ++c)
        if (!in_set.count(c)) out_classes.push_back(c);
    }
    const auto idx = server_split_indices(data, pc.server->beta, pc.server->size_frac, in,
                                          out_classes, SeedCtx{seed, 0, 0, Purpose::kServerSplit});
    for (auto i : idx) taken[i] = true;
    server = subset(data, idx);
  }
  const std::set<int> allowed(client_classes.begin(), client_classes.end());
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!taken[i] && allowed.count(data.labels[i])) pool.push_back(i);
  if (pool.empty()) throw PartitionError("no client samples left after the server split");
  const Dataset client_data = subset(data, pool);
  const auto parts =
      partition(client_data, pc.partition, cfg.clients, SeedCtx{seed, 0, 0, Purpose::kPartition});
  out.problem = make_logistic_problem(parts, pc.ridge, server);
  out.train = std::make_shared<const Dataset>(concat(parts));
  out.x0.assign(out.problem.dim(), 0.0);
  return out;
}

/// Smoothness constant used for step-size rules and warnings.
inline double smoothness_of(const FederatedProblem& problem) {
  if (problem.all_quadratic()) return sym_spectral_norm(problem.mean_hessian());
  double l = 0.0;
  for (const auto& c : problem.clients) l += logistic_smoothness_bound(c.logistic());
  return l / static_cast<double>(problem.size());
}

inline double resolve_gamma(const GammaSpec& g, const CompressorSpec& spec,
                            const FederatedProblem& problem, double smoothness) {
  switch (g.rule) {
    case GammaRule::kValue: return g.value;
    case GammaRule::kInverseL: return 1.0 / smoothness;
    case GammaRule::kThm2Cap: {
      const auto w = certified_omega(spec, problem.dim());
      if (!w) throw ConfigError("gamma \"thm2_cap\" needs a compressor with a certified omega");
      return (1.0 - *w) / (smoothness * (1.0 + *w));
    }
  }
  throw ConfigError("unknown gamma rule");
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  RunResult run;
  std::optional<double> accuracy;
  double smoothness = 0.0;
};

inline SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                            bool keep_iterates = false, BuiltProblem* built_out = nullptr) {
  BuiltProblem built = build_problem(cfg, seed);
  SeedOutcome out;
  out.seed = seed;
  out.smoothness = smoothness_of(built.problem);
  EngineConfig ec;
  ec.kind = cfg.algorithm;
  ec.spec = cfg.compressor;
  ec.transport = cfg.transport;
  ec.momentum = cfg.momentum;
  ec.seed = seed;
  ec.smoothness = out.smoothness;
  ec.keep_iterates = keep_iterates;
  ec.gamma = resolve_gamma(cfg.gamma, cfg.compressor, built.problem, out.smoothness);
  out.run = run_experiment(ec, built.problem, built.x0, cfg.rounds);
  if (built.train && out.run.ok) out.accuracy = accuracy(*built.train, out.run.final_x);
  if (built_out) *built_out = std::move(built);
  return out;
}

/// Worker count: CAFESIM_THREADS if set and positive, else hardware threads.
inline std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CAFESIM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

/// Runs fn(i) for i in [0, jobs) on a bounded pool; results land by index so
/// output order never depends on scheduling. The first exception is rethrown.
template <typename T, typename Fn>
std::vector<T> parallel_map(std::size_t jobs, Fn fn) {
  std::vector<std::optional<T>> slots(jobs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t n = worker_count(jobs);
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  std::vector<T> out;
  out.reserve(jobs);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_num(const std::optional<double>& v) { return v ? csv_num(*v) : std::string(); }

inline constexpr const char* kTrajectoryHeader =
    "k,f_value,grad_sq,err_sq,mean_gain_ratio,lyapunov,uplink_bits,downlink_bits";

inline std::string trajectory_csv(const std::vector<RoundRecord>& records) {
  std::string s = std::string(kTrajectoryHeader) + "\n";
  for (const auto& r : records) {
    s += std::to_string(r.k) + "," + csv_num(r.f_value) + "," + csv_num(r.grad_sq) + "," +
         csv_num(r.err_sq) + "," + csv_num(r.mean_gain_ratio) + "," + csv_num(r.lyapunov) + "," +
         std::to_string(r.uplink_bits) + "," + std::to_string(r.downlink_bits) + "\n";
  }
  return s;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::ios_base::failure("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw std::ios_base::failure("write failed for '" + path.string() + "'");
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::ios_base::failure("cannot create '" + dir.string() + "': " + ec.message());
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

/// Sample standard deviation; 0 for a single value.
inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return m;
}

inline nlohmann::json to_json(const MeanStd& m) {
  if (m.n == 0) return {{"mean", nullptr}, {"std", nullptr}, {"n", 0}};
  return {{"mean", m.mean}, {"std", m.std}, {"n", m.n}};
}

inline nlohmann::json describe_config(const ExperimentConfig& cfg) {
  return {{"algorithm", to_string(cfg.algorithm)},
          {"compressor", cfg.compressor.describe()},
          {"rounds", cfg.rounds},
          {"clients", cfg.clients},
          {"transport", to_string(cfg.transport)},
          {"momentum", cfg.momentum},
          {"problem", cfg.problem.kind == ProblemKind::kQuadratic ? "quadratic" : "logistic"}};
}

/// Aggregates across seeds as written to summary.json.
struct RunSummary {
  nlohmann::json json;
  bool any_failed = false;
  MeanStd final_loss;
  MeanStd final_grad_sq;
  MeanStd accuracy;
  double uplink_bpp = 0.0;
};

inline RunSummary summarize(const ExperimentConfig& cfg, const std::vector<SeedOutcome>& outs) {
  RunSummary s;
  nlohmann::json per_seed = nlohmann::json::array();
  std::vector<double> losses, grads, accs, bpps;
  std::set<std::string> warnings;
  for (const auto& o : outs) {
    nlohmann::json j;
    j["seed"] = o.seed;
    j["gamma"] = o.run.gamma;
    j["ok"] = o.run.ok;
    j["rounds_completed"] = o.run.records.size();
    for (const auto& w : o.run.warnings) warnings.insert(w);
    if (!o.run.ok) {
      s.any_failed = true;
      j["failed_round"] = o.run.failed_round.value_or(-1);
      j["failure"] = o.run.failure;
    } else {
      j["final_loss"] = o.run.final_f;
      j["final_grad_sq"] = o.run.final_grad_sq;
      losses.push_back(o.run.final_f);
      grads.push_back(o.run.final_grad_sq);
      if (o.accuracy) {
        j["accuracy"] = *o.accuracy;
        accs.push_back(*o.accuracy);
      }
    }
    if (!o.run.records.empty()) {
      const auto t = traffic_ledger(o.run.records, o.run.kind, o.run.transport, o.run.dim, o.run.clients);
      j["uplink_bits"] = t.uplink_bits;
      j["downlink_bits"] = t.downlink_bits;
      j["uplink_bpp"] = t.uplink_bpp;
      bpps.push_back(t.uplink_bpp);
    }
    per_seed.push_back(j);
  }
  s.final_loss = mean_std(losses);
  s.final_grad_sq = mean_std(grads);
  s.accuracy = mean_std(accs);
  s.uplink_bpp = mean_std(bpps).mean;
  s.json["config"] = describe_config(cfg);
  s.json["seeds"] = per_seed;
  s.json["final_loss"] = to_json(s.final_loss);
  s.json["final_grad_sq"] = to_json(s.final_grad_sq);
  s.json["accuracy"] = to_json(s.accuracy);
  s.json["uplink_bpp"] = s.uplink_bpp;
  s.json["warnings"] = std::vector<std::string>(warnings.begin(), warnings.end());
  s.json["failed"] = s.any_failed;
  return s;
}

inline std::vector<SeedOutcome> run_all_seeds(const ExperimentConfig& cfg) {
  return parallel_map<SeedOutcome>(cfg.seeds.size(),
                                   [&](std::size_t i) { return run_seed(cfg, cfg.seeds[i]); });
}

inline int cmd_run(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  const std::filesystem::path dir(cfg.out);
  ensure_dir(dir);
  const auto outs = run_all_seeds(cfg);
  for (const auto& o : outs) {
    write_file(dir / ("trajectory_seed" + std::to_string(o.seed) + ".csv"), trajectory_csv(o.run.records));
    if (!o.run.ok) log << "seed " << o.seed << ": " << o.run.failure << "\n";
  }
  const auto summary = summarize(cfg, outs);
  for (const auto& w : summary.json["warnings"]) log << "warning: " << w.get<std::string>() << "\n";
  write_file(dir / "summary.json", summary.json.dump(2) + "\n");
  return summary.any_failed ? kExitNonFinite : kExitOk;
}

/// Result of the predictor-quality experiment on uncompressed training.
struct PrincipleResult {
  std::vector<double> loss;
  std::vector<double> grad_sq;
  std::vector<double> gain_cafe;      ///< per round, mean over clients
  std::vector<std::optional<double>> gain_cafe_s;
  Histogram hist_direct;
  Histogram hist_cafe;
  std::optional<Histogram> hist_cafe_s;
  bool ok = true;
  std::string failure;
};

/// Trains without compression and measures what each scheme would have had
/// to compress: Δ_n (direct), Δ_n − Δ_s^{k−1} (cafe), Δ_n − Δ_c^k (cafe_s).
/// The histogram range is ±max|Δ_n| over round 0.
inline PrincipleResult run_principle(const ExperimentConfig& cfg, std::uint64_t seed) {
  BuiltProblem built = build_problem(cfg, seed);
  const auto& problem = built.problem;
  const double smooth = smoothness_of(problem);
  EngineConfig ec;
  ec.kind = AlgorithmKind::kDirect;
  ec.spec = CompressorSpec::identity();
  ec.seed = seed;
  ec.gamma = resolve_gamma(cfg.gamma, CompressorSpec::identity(), problem, smooth);
  const double gamma = ec.gamma;

  double range = 0.0;
  for (const auto& c : problem.clients) {
    for (double v : gradient(c, built.x0)) range = std::max(range, std::abs(gamma * v));
  }
  if (!(range > 0.0)) range = 1.0;
  const std::size_t bins = cfg.histogram_bins;
  HistogramAccumulator h_direct(bins, -range, range), h_cafe(bins, -range, range),
      h_cafe_s(bins, -range, range);

  PrincipleResult out;
  std::uint64_t cached_k = ~0ull;
  ParamVector server_pred;
  double sum_cafe = 0.0, sum_cafe_s = 0.0;
  std::size_t n_cafe = 0, n_cafe_s = 0;
  auto observer = [&](const ClientView& v) {
    h_direct.add(v.delta);
    const ParamVector r_cafe = subtract(v.delta, v.state.prev_aggregate);
    h_cafe.add(r_cafe);
    const double dn = norm(v.delta);
    if (dn > 1e-15) {
      sum_cafe += norm(r_cafe) / dn;
      ++n_cafe;
    }
    if (problem.server) {
      if (cached_k != v.k) {
        server_pred = client_update(*problem.server, v.x, gamma);
        cached_k = v.k;
      }
      const ParamVector r_s = subtract(v.delta, server_pred);
      h_cafe_s.add(r_s);
      if (dn > 1e-15) {
        sum_cafe_s += norm(r_s) / dn;
        ++n_cafe_s;
      }
    }
  };

  RoundEngine engine(ec, problem, built.x0);
  try {
    for (std::size_t k = 0; k < cfg.rounds; ++k) {
      sum_cafe = sum_cafe_s = 0.0;
      n_cafe = n_cafe_s = 0;
      const auto rec = engine.run_round(observer);
      out.loss.push_back(rec.f_value);
      out.grad_sq.push_back(rec.grad_sq);
      out.gain_cafe.push_back(n_cafe ? sum_cafe / static_cast<double>(n_cafe)
                                     : std::numeric_limits<double>::quiet_NaN());
      if (problem.server && n_cafe_s) {
        out.gain_cafe_s.emplace_back(sum_cafe_s / static_cast<double>(n_cafe_s));
      } else {
        out.gain_cafe_s.emplace_back(std::nullopt);
      }
    }
  } catch (const NonFiniteError& e) {
    out.ok = false;
    out.failure = e.what();
  }
  out.hist_direct = h_direct.finish();
  out.hist_cafe = h_cafe.finish();
  if (problem.server) out.hist_cafe_s = h_cafe_s.finish();
  return out;
}

inline int cmd_principle(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  if (cfg.problem.kind != ProblemKind::kLogistic)
    throw ValidationError("principle: problem.kind must be logistic");
  const std::filesystem::path dir(cfg.out);
  ensure_dir(dir);
  const auto seed = cfg.seeds.front();
  const auto res = run_principle(cfg, seed);

  std::string loss = "k,f_value,grad_sq\n";
  for (std::size_t k = 0; k < res.loss.size(); ++k)
    loss += std::to_string(k) + "," + csv_num(res.loss[k]) + "," + csv_num(res.grad_sq[k]) + "\n";
  write_file(dir / "principle_loss.csv", loss);

  std::string gain = "k,direct,cafe,cafe_s\n";
  for (std::size_t k = 0; k < res.gain_cafe.size(); ++k)
    gain += std::to_string(k) + ",1," + csv_num(res.gain_cafe[k]) + "," + csv_num(res.gain_cafe_s[k]) + "\n";
  write_file(dir / "principle_gain.csv", gain);

  std::string hist =
      "bin_center,direct_log_density,cafe_log_density,cafe_s_log_density,direct_floored,cafe_floored,"
      "cafe_s_floored\n";
  for (std::size_t b = 0; b < res.hist_direct.bins(); ++b) {
    hist += csv_num(res.hist_direct.center(b)) + "," + csv_num(res.hist_direct.log_density[b]) + "," +
            csv_num(res.hist_cafe.log_density[b]) + "," +
            (res.hist_cafe_s ? csv_num(res.hist_cafe_s->log_density[b]) : std::string()) + "," +
            (res.hist_direct.floored[b] ? "1" : "0") + "," + (res.hist_cafe.floored[b] ? "1" : "0") + "," +
            (res.hist_cafe_s ? (res.hist_cafe_s->floored[b] ? "1" : "0") : "") + "\n";
  }
  write_file(dir / "principle_hist.csv", hist);

  svg::Chart c_loss{"Training loss", "round", "loss", true, {}};
  svg::Chart c_gain{"Compression gain ratio", "round", "ratio", false, {}};
  svg::Chart c_hist{"Update value log-density", "value", "log10 density", false, {}};
  svg::Series s_loss{"f(x)", {}, res.loss};
  svg::Series s_direct{"direct", {}, {}}, s_cafe{"cafe", {}, res.gain_cafe}, s_cafe_s{"cafe_s", {}, {}};
  for (std::size_t k = 0; k < res.loss.size(); ++k) {
    s_loss.x.push_back(static_cast<double>(k));
    s_direct.x.push_back(static_cast<double>(k));
    s_direct.y.push_back(1.0);
    s_cafe.x.push_back(static_cast<double>(k));
    if (res.gain_cafe_s[k]) {
      s_cafe_s.x.push_back(static_cast<double>(k));
      s_cafe_s.y.push_back(*res.gain_cafe_s[k]);
    }
  }
  c_loss.series.push_back(s_loss);
  c_gain.series = {s_direct, s_cafe};
  if (!s_cafe_s.x.empty()) c_gain.series.push_back(s_cafe_s);
  auto hist_series = [](const std::string& label, const Histogram& h) {
    svg::Series s{label, {}, {}};
    for (std::size_t b = 0; b < h.bins(); ++b) {
      if (h.floored[b]) continue;
      s.x.push_back(h.center(b));
      s.y.push_back(h.log_density[b]);
    }
    return s;
  };
  c_hist.series = {hist_series("direct", res.hist_direct), hist_series("cafe", res.hist_cafe)};
  if (res.hist_cafe_s) c_hist.series.push_back(hist_series("cafe_s", *res.hist_cafe_s));
  write_file(dir / "principle_loss.svg", svg::render(c_loss));
  write_file(dir / "principle_gain.svg", svg::render(c_gain));
  write_file(dir / "principle_hist.svg", svg::render(c_hist));

  if (!res.ok) {
    log << "principle: " << res.failure << "\n";
    return kExitNonFinite;
  }
  return kExitOk;
}

/// Config for one sweep point.
inline ExperimentConfig with_axis_value(ExperimentConfig cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::kGamma:
      if (!(value > 0.0)) throw ValidationError("sweep: gamma values must be > 0");
      cfg.gamma = GammaSpec{GammaRule::kValue, value};
      break;
    case SweepAxis::kBeta:
      if (cfg.problem.kind != ProblemKind::kLogistic || !cfg.problem.server)
        throw ValidationError("sweep: beta needs a logistic problem with a server split");
      if (!(value >= 0.0 && value <= 1.0)) throw ValidationError("sweep: beta values must lie in [0, 1]");
      cfg.problem.server->beta = value;
      break;
    case SweepAxis::kOmega: {
      if (!(value > 0.0 && value <= 1.0))
        throw ValidationError("sweep: omega values are topk fractions in (0, 1]");
      const auto base = cfg.compressor;
      if (base.kind == CompressorKind::kQuantized && base.inner == CompressorKind::kTopK) {
        cfg.compressor.topk_count = 0;
        cfg.compressor.topk_fraction = value;
      } else {
        cfg.compressor = CompressorSpec::topk_fraction_of(value);
      }
      break;
    }
  }
  return cfg;
}

inline int cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values,
                     std::ostream& log = std::cerr) {
  if (values.empty()) throw ValidationError("sweep: no values");
  const std::filesystem::path dir(cfg.out);
  ensure_dir(dir);
  std::vector<ExperimentConfig> points;
  for (double v : values) points.push_back(with_axis_value(cfg, axis, v));
  const std::size_t per = cfg.seeds.size();
  const auto outs = parallel_map<SeedOutcome>(values.size() * per, [&](std::size_t i) {
    return run_seed(points[i / per], cfg.seeds[i % per]);
  });

  bool any_failed = false;
  std::string csv =
      "axis,value,runs,failed,final_loss_mean,final_loss_std,final_grad_sq_mean,final_grad_sq_std,"
      "accuracy_mean,accuracy_std,uplink_bpp\n";
  svg::Series line{to_string(cfg.algorithm), {}, {}};
  for (std::size_t v = 0; v < values.size(); ++v) {
    const std::vector<SeedOutcome> group(outs.begin() + v * per, outs.begin() + (v + 1) * per);
    const auto s = summarize(points[v], group);
    std::size_t failed = 0;
    for (const auto& o : group) failed += o.run.ok ? 0 : 1;
    any_failed = any_failed || failed > 0;
    auto opt = [](const MeanStd& m, bool std_field) {
      return m.n == 0 ? std::string() : csv_num(std_field ? m.std : m.mean);
    };
    csv += std::string(to_string(axis)) + "," + csv_num(values[v]) + "," + std::to_string(per) + "," +
           std::to_string(failed) + "," + opt(s.final_loss, false) + "," + opt(s.final_loss, true) + "," +
           opt(s.final_grad_sq, false) + "," + opt(s.final_grad_sq, true) + "," + opt(s.accuracy, false) +
           "," + opt(s.accuracy, true) + "," + csv_num(s.uplink_bpp) + "\n";
    if (s.final_loss.n > 0) {
      line.x.push_back(axis == SweepAxis::kBeta ? values[v] : std::log10(values[v]));
      line.y.push_back(s.final_loss.mean);
    }
    for (const auto& o : group)
      if (!o.run.ok) log << to_string(axis) << "=" << values[v] << " seed " << o.seed << ": " << o.run.failure << "\n";
  }
  write_file(dir / "sweep.csv", csv);
  const std::string xl = axis == SweepAxis::kBeta ? "beta" : std::string("log10 ") + to_string(axis);
  write_file(dir / "sweep.svg", svg::render(svg::Chart{"Final training loss", xl, "loss", true, {line}}));
  return any_failed ? kExitNonFinite : kExitOk;
}

/// Evaluates one audit on the first seed of `cfg`. Probes for the sampled
/// constants are the recorded iterates.
struct AuditOutcome {
  AuditReport report;
  ConstantsReport constants;
  RunResult run;
  nlohmann::json json;
};

inline AuditOutcome run_audit_for(const ExperimentConfig& cfg, AuditKind which) {
  const auto seed = cfg.seeds.front();
  BuiltProblem built;
  auto outcome = run_seed(cfg, seed, /*keep_iterates=*/true, &built);
  AuditOutcome a;
  a.run = std::move(outcome.run);
  std::vector<ParamVector> probes;
  const std::size_t stride = std::max<std::size_t>(1, a.run.iterates.size() / 50);
  for (std::size_t i = 0; i < a.run.iterates.size(); i += stride) probes.push_back(a.run.iterates[i]);
  a.constants = estimate_constants(built.problem, probes, SeedCtx{seed, 0, 0, Purpose::kProbe});
  a.report = run_audit(AuditConfig{which, 1e-9, a.constants}, a.run);
  a.json = to_json(a.report);
  a.json["seed"] = seed;
  a.json["algorithm"] = to_string(cfg.algorithm);
  a.json["gamma"] = a.run.gamma;
  a.json["rounds"] = a.run.records.size();
  a.json["constants"] = {{"L", a.constants.L},
                         {"L_method", to_string(a.constants.L_method)},
                         {"f_star", a.constants.f_star},
                         {"f_star_method", to_string(a.constants.f_star_method)},
                         {"B_sq_sampled", a.constants.B_sq},
                         {"G_sq_sampled", a.constants.G_sq},
                         {"probes_used", a.constants.probes_used}};
  return a;
}

inline int cmd_audit(const ExperimentConfig& cfg, AuditKind which, std::ostream& log = std::cerr) {
  const std::filesystem::path dir(cfg.out);
  ensure_dir(dir);
  const auto a = run_audit_for(cfg, which);
  write_file(dir / "audit.json", a.json.dump(2) + "\n");
  log << to_string(which) << ": " << to_string(a.report.verdict);
  if (!a.report.note.empty()) log << " (" << a.report.note << ")";
  log << "\n";
  if (!a.run.ok) return kExitNonFinite;
  switch (a.report.verdict) {
    case Verdict::kPass:
    case Verdict::kConsistent: return kExitOk;
    case Verdict::kFail:
    case Verdict::kInconsistent: return kExitAuditFail;
    case Verdict::kNotApplicable: return kExitNotApplicable;
  }
  return kExitError;
}

}  // namespace cafesim

#endif  // CAFESIM_CLI_COMMANDS_HPP_
