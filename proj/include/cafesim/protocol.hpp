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
// Round engine for compressed distributed gradient descent. All three schemes
// share one loop and differ only in the predictor P that clients subtract
// before encoding and the server adds back after decoding:
//
//   Direct   P = 0
//   CAFe     P = previous aggregate step (x^k − x^{k−1}), zero at round 0
//   CAFe-S   P = −γ ∇f_s(x^k), computed by the server on its own data

#ifndef CAFESIM_PROTOCOL_HPP_
#define CAFESIM_PROTOCOL_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cafesim/compress.hpp"
#include "cafesim/errors.hpp"
#include "cafesim/kernels.hpp"
#include "cafesim/problems.hpp"

namespace cafesim {

enum class AlgorithmKind { kDirect, kCAFe, kCAFeS };

inline const char* to_string(AlgorithmKind k) {
  switch (k) {
    case AlgorithmKind::kDirect: return "direct";
    case AlgorithmKind::kCAFe: return "cafe";
    case AlgorithmKind::kCAFeS: return "cafe_s";
  }
  return "?";
}

/// How stateless clients obtain the predictor.
enum class Transport {
  kBroadcastPredictor,  ///< server sends P alongside x^k
  kClientRecovers,      ///< CAFe clients recompute P = x^k − x^{k−1}
};

inline const char* to_string(Transport t) {
  return t == Transport::kBroadcastPredictor ? "broadcast_predictor" : "client_recovers";
}

struct EngineConfig {
  AlgorithmKind kind = AlgorithmKind::kDirect;
  double gamma = 0.1;
  CompressorSpec spec = CompressorSpec::identity();
  Transport transport = Transport::kBroadcastPredictor;
  /// Server momentum coefficient μ in [0, 1); 0 disables it.
  double momentum = 0.0;
  std::uint64_t seed = 0;
  /// Contract constant used for Ψ; defaults to the certified one.
  std::optional<double> omega;
  /// Smoothness constant, only used for learning-rate warnings.
  std::optional<double> smoothness;
  bool keep_iterates = false;
};

struct EngineState {
  ParamVector x;
  /// Δ_s^{k−1}: the step applied in the previous round, zero before round 0.
  ParamVector prev_aggregate;
  ParamVector velocity;
  std::uint64_t k = 0;
};

struct RoundRecord {
  std::uint64_t k = 0;
  double f_value = 0.0;           ///< f(x^k)
  double grad_sq = 0.0;           ///< ‖∇f(x^k)‖²
  double err_sq = 0.0;            ///< ‖ē^k‖², ē^k = (1/(Nγ)) Σ (q_n − Δ_n)
  double step_sq = 0.0;           ///< ‖x^{k+1} − x^k‖²
  double client_grad_sq = 0.0;    ///< (1/N) Σ ‖∇f_n(x^k)‖²
  std::optional<double> server_diff_sq;  ///< (1/N) Σ ‖∇f_n − ∇f_s‖²
  std::vector<std::optional<double>> gain_ratios;
  std::optional<double> mean_gain_ratio;
  std::uint64_t uplink_bits = 0;
  std::uint64_t downlink_bits = 0;
  std::optional<double> lyapunov;
  double update_abs_mean = 0.0;   ///< mean |Δ_n − P| over clients and coordinates
  double update_abs_max = 0.0;
};

/// Per-client view handed to observers after the server decoded it.
struct ClientView {
  std::uint64_t k;
  std::size_t client;
  std::span<const double> x;
  std::span<const double> delta;      ///< Δ_n
  std::span<const double> predictor;  ///< P
  std::span<const double> residual;   ///< D(E(Δ_n − P))
  std::span<const double> decoded;    ///< q_n
  const EngineState& state;
};

using RoundObserver = std::function<void(const ClientView&)>;

inline std::uint64_t downlink_bits_per_round(AlgorithmKind kind, Transport transport,
                                             std::size_t d) {
  const std::uint64_t model = 32ull * d;
  if (kind == AlgorithmKind::kDirect) return model;
  // A CAFe-S candidate cannot be recovered from consecutive models.
  if (kind == AlgorithmKind::kCAFe && transport == Transport::kClientRecovers) return model;
  return 2 * model;
}

/// −γ ∇f_n(x)
inline ParamVector client_update(const Objective& obj, std::span<const double> x, double gamma) {
  if (!(gamma > 0.0)) throw RangeError("client_update: gamma must be > 0");
  ParamVector g = gradient(obj, x);
  for (double& v : g) v *= -gamma;
  return g;
}

inline ParamVector make_predictor(AlgorithmKind kind, const EngineState& state,
                                  const FederatedProblem& problem, double gamma) {
  switch (kind) {
    case AlgorithmKind::kDirect: return ParamVector(state.x.size(), 0.0);
    case AlgorithmKind::kCAFe: return state.prev_aggregate;
    case AlgorithmKind::kCAFeS:
      if (!problem.server) throw ConfigError("cafe_s requires a server objective");
      return client_update(*problem.server, state.x, gamma);
  }
  throw ConfigError("unknown algorithm");
}

class RoundEngine {
 public:
  RoundEngine(EngineConfig cfg, const FederatedProblem& problem, ParamVector x0)
      : cfg_(std::move(cfg)), problem_(problem), shapes_(problem.shapes()) {
    problem_.validate();
    if (x0.size() != problem_.dim()) throw DimensionError("engine: x0 has the wrong dimension");
    if (!(cfg_.gamma > 0.0) || !std::isfinite(cfg_.gamma)) throw ConfigError("engine: gamma must be > 0");
    if (!(cfg_.momentum >= 0.0 && cfg_.momentum < 1.0))
      throw ConfigError("engine: momentum must lie in [0, 1)");
    if (cfg_.kind == AlgorithmKind::kCAFeS && !problem_.server)
      throw ConfigError("engine: cafe_s requires a server objective");
    cfg_.spec.validate(shapes_);
    if (!cfg_.omega) cfg_.omega = certified_omega(cfg_.spec, problem_.dim());
    state_.x = std::move(x0);
    state_.prev_aggregate.assign(state_.x.size(), 0.0);
    state_.velocity.assign(state_.x.size(), 0.0);
    check_learning_rate();
  }

  const EngineState& state() const { return state_; }
  const EngineConfig& config() const { return cfg_; }
  const ShapeMap& shapes() const { return shapes_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// One communication round. Throws NonFiniteError carrying the round index.
  RoundRecord run_round(const RoundObserver& observer = {}) {
    const std::size_t d = problem_.dim();
    const std::size_t n_clients = problem_.size();
    const double gamma = cfg_.gamma;
    const auto k = state_.k;
    RoundRecord rec;
    rec.k = k;

    try {
      rec.f_value = problem_.global_value(state_.x);
    } catch (const NonFiniteError&) {
      throw NonFiniteError("non-finite objective at round " + std::to_string(k), static_cast<long>(k));
    }

    const ParamVector predictor = make_predictor(cfg_.kind, state_, problem_, gamma);
    std::optional<ParamVector> server_grad;
    if (problem_.server) server_grad = gradient(*problem_.server, state_.x);

    ParamVector aggregate(d, 0.0);
    ParamVector grad_sum(d, 0.0);
    ParamVector err_sum(d, 0.0);
    double client_grad_sq = 0.0, server_diff_sq = 0.0, abs_sum = 0.0, abs_max = 0.0;
    double ratio_sum = 0.0;
    std::size_t ratio_count = 0;
    const SeedCtx round_ctx{cfg_.seed, k, 0, Purpose::kLowRankInit};

    for (std::size_t n = 0; n < n_clients; ++n) {
      ParamVector grad = gradient(problem_.clients[n], state_.x);
      if (!all_finite(grad))
        throw NonFiniteError("non-finite gradient at round " + std::to_string(k), static_cast<long>(k));
      client_grad_sq += sqnorm(grad);
      if (server_grad) server_diff_sq += sqnorm(subtract(grad, *server_grad));
      axpy(1.0, grad, grad_sum);

      ParamVector delta = scaled(grad, -gamma);
      const ParamVector residual = subtract(delta, predictor);
      for (double v : residual) {
        abs_sum += std::abs(v);
        abs_max = std::max(abs_max, std::abs(v));
      }
      // Values past the single-precision range cannot be transmitted.
      if (!(abs_max <= static_cast<double>(std::numeric_limits<float>::max())))
        throw NonFiniteError("update overflows single precision at round " + std::to_string(k),
                             static_cast<long>(k));
      const double delta_norm = norm(delta);
      if (delta_norm > 1e-15) {
        const double rho = norm(residual) / delta_norm;
        rec.gain_ratios.emplace_back(rho);
        ratio_sum += rho;
        ++ratio_count;
      } else {
        rec.gain_ratios.emplace_back(std::nullopt);
      }

      EncodedPayload payload;
      try {
        payload = encode(cfg_.spec, residual, shapes_, round_ctx);
      } catch (const NonFiniteError&) {
        throw NonFiniteError("non-finite update at round " + std::to_string(k), static_cast<long>(k));
      }
      rec.uplink_bits += payload.bit_count;
      const ParamVector residual_hat = decode(cfg_.spec, payload, shapes_, round_ctx);
      ParamVector q = residual_hat;
      axpy(1.0, predictor, q);

      if (observer) observer(ClientView{k, n, state_.x, delta, predictor, residual_hat, q, state_});
      axpy(1.0, q, aggregate);
      axpy(1.0, subtract(q, delta), err_sum);
    }
    const double inv_n = 1.0 / static_cast<double>(n_clients);
    for (double& v : aggregate) v *= inv_n;
    for (double& v : grad_sum) v *= inv_n;
    for (double& v : err_sum) v *= inv_n / gamma;

    rec.grad_sq = sqnorm(grad_sum);
    rec.err_sq = sqnorm(err_sum);
    rec.client_grad_sq = client_grad_sq * inv_n;
    if (server_grad) rec.server_diff_sq = server_diff_sq * inv_n;
    if (ratio_count > 0) rec.mean_gain_ratio = ratio_sum / static_cast<double>(ratio_count);
    rec.update_abs_mean = abs_sum / static_cast<double>(n_clients * d);
    rec.update_abs_max = abs_max;
    rec.downlink_bits = downlink_bits_per_round(cfg_.kind, cfg_.transport, d);
    if (cfg_.omega) {
      rec.lyapunov = rec.f_value + gamma / (2.0 * (1.0 - *cfg_.omega)) * rec.err_sq;
    }

    const ParamVector* step = &aggregate;
    if (cfg_.momentum > 0.0) {
      for (std::size_t i = 0; i < d; ++i)
        state_.velocity[i] = cfg_.momentum * state_.velocity[i] + aggregate[i];
      step = &state_.velocity;
    }
    ParamVector x_next = add(state_.x, *step);
    if (!all_finite(x_next))
      throw NonFiniteError("non-finite iterate at round " + std::to_string(k), static_cast<long>(k));
    // The stored predictor is the realized model difference, so a client that
    // kept x^{k} recovers it exactly as x^{k+1} − x^{k}.
    state_.prev_aggregate = subtract(x_next, state_.x);
    rec.step_sq = sqnorm(state_.prev_aggregate);
    state_.x = std::move(x_next);
    state_.k = k + 1;
    return rec;
  }

 private:
  void check_learning_rate() {
    if (!cfg_.smoothness) return;
    const double l = *cfg_.smoothness;
    double cap = 1.0 / l;
    std::string which = "1/L";
    if (cfg_.kind == AlgorithmKind::kCAFe && cfg_.omega) {
      cap = (1.0 - *cfg_.omega) / (l * (1.0 + *cfg_.omega));
      which = "(1-omega)/(L(1+omega))";
    }
    if (cfg_.gamma > cap * (1.0 + 1e-12)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "gamma=%.6g exceeds the analyzed step size %s=%.6g", cfg_.gamma,
                    which.c_str(), cap);
      warnings_.emplace_back(buf);
    }
  }

  EngineConfig cfg_;
  FederatedProblem problem_;
  ShapeMap shapes_;
  EngineState state_;
  std::vector<std::string> warnings_;
};

/// Free-function form: runs one round on an engine.
inline RoundRecord run_round(RoundEngine& engine, const RoundObserver& observer = {}) {
  return engine.run_round(observer);
}

/// Outcome of K rounds. On a non-finite abort `records` holds the rounds that
/// completed and `failed_round` names the offending one.
struct RunResult {
  AlgorithmKind kind = AlgorithmKind::kDirect;
  double gamma = 0.0;
  double momentum = 0.0;
  std::optional<double> omega;
  std::size_t dim = 0;
  std::size_t clients = 0;
  Transport transport = Transport::kBroadcastPredictor;
  bool has_server = false;

  std::vector<RoundRecord> records;
  bool ok = true;
  std::optional<long> failed_round;
  std::string failure;
  std::vector<std::string> warnings;

  /// Quantities at x^K, after the last round.
  double final_f = 0.0;
  double final_grad_sq = 0.0;
  double final_client_grad_sq = 0.0;
  std::optional<double> final_server_diff_sq;
  ParamVector final_x;
  /// x^0 .. x^K when EngineConfig::keep_iterates is set.
  std::vector<ParamVector> iterates;
};

inline RunResult run_experiment(const EngineConfig& cfg, const FederatedProblem& problem,
                                ParamVector x0, std::size_t rounds,
                                const RoundObserver& observer = {}) {
  if (rounds < 1) throw ConfigError("run_experiment: K must be >= 1");
  RoundEngine engine(cfg, problem, std::move(x0));
  RunResult out;
  out.kind = cfg.kind;
  out.gamma = cfg.gamma;
  out.momentum = cfg.momentum;
  out.omega = engine.config().omega;
  out.dim = problem.dim();
  out.clients = problem.size();
  out.transport = cfg.transport;
  out.has_server = problem.server.has_value();
  out.warnings = engine.warnings();
  if (cfg.keep_iterates) out.iterates.push_back(engine.state().x);
  try {
    for (std::size_t r = 0; r < rounds; ++r) {
      out.records.push_back(engine.run_round(observer));
      if (cfg.keep_iterates) out.iterates.push_back(engine.state().x);
    }
  } catch (const NonFiniteError& e) {
    out.ok = false;
    out.failed_round = e.round();
    out.failure = e.what();
  }
  out.final_x = engine.state().x;
  if (out.ok) {
    const auto& x = engine.state().x;
    out.final_f = problem.global_value(x);
    out.final_grad_sq = sqnorm(problem.global_gradient(x));
    double s = 0.0, sd = 0.0;
    std::optional<ParamVector> gs;
    if (problem.server) gs = gradient(*problem.server, x);
    for (const auto& c : problem.clients) {
      const ParamVector g = gradient(c, x);
      s += sqnorm(g);
      if (gs) sd += sqnorm(subtract(g, *gs));
    }
    out.final_client_grad_sq = s / static_cast<double>(problem.size());
    if (gs) out.final_server_diff_sq = sd / static_cast<double>(problem.size());
  }
  return out;
}

struct TrafficSummary {
  std::uint64_t rounds = 0;
  std::uint64_t uplink_bits = 0;
  std::uint64_t downlink_bits = 0;
  std::uint64_t downlink_bits_per_round = 0;
  double uplink_bpp = 0.0;  ///< per client per round per parameter
};

/// Totals per direction. Downlink follows the transport: the predictor costs
/// another model-sized broadcast unless CAFe clients recover it locally.
inline TrafficSummary traffic_ledger(std::span<const RoundRecord> records, AlgorithmKind kind,
                                     Transport transport, std::size_t d, std::size_t clients) {
  if (records.empty()) throw RangeError("traffic_ledger: no records");
  TrafficSummary t;
  t.rounds = records.size();
  t.downlink_bits_per_round = downlink_bits_per_round(kind, transport, d);
  for (const auto& r : records) t.uplink_bits += r.uplink_bits;
  t.downlink_bits = t.downlink_bits_per_round * t.rounds;
  t.uplink_bpp = static_cast<double>(t.uplink_bits) /
                 (static_cast<double>(t.rounds) * static_cast<double>(clients) * static_cast<double>(d));
  return t;
}

}  // namespace cafesim

#endif  // CAFESIM_PROTOCOL_HPP_
