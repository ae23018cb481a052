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
// Experiment configuration. Files are JSON objects; unknown keys are errors.
//
//   {
//     "problem": {"kind": "quadratic" | "logistic", ...},
//     "algorithm": "direct" | "cafe" | "cafe_s",
//     "compressor": {"kind": "identity" | "topk" | "lowrank" | "quantized", ...},
//     "gamma": 0.1 | "1/L" | "thm2_cap",
//     "rounds": 100, "clients": 10, "seeds": [0],
//     "transport": "broadcast_predictor" | "client_recovers",
//     "momentum": 0.0, "out": "out",
//     "audit": "thm1", "histogram_bins": 101,
//     "sweep": {"axis": "gamma" | "beta" | "omega", "values": [...]}
//   }

#ifndef CAFESIM_CLI_CONFIG_HPP_
#define CAFESIM_CLI_CONFIG_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cafesim/compress.hpp"
#include "cafesim/errors.hpp"
#include "cafesim/metrics.hpp"
#include "cafesim/problems.hpp"
#include "cafesim/protocol.hpp"
#include "json.hpp"

namespace cafesim {

enum class ProblemKind { kQuadratic, kLogistic };

struct ServerSplitConfig {
  double beta = 1.0;
  double size_frac = 0.1;
  /// Defaults: the client classes, and every other class.
  std::optional<std::vector<int>> in_classes;
  std::optional<std::vector<int>> out_classes;
};

struct ProblemConfig {
  ProblemKind kind = ProblemKind::kQuadratic;
  QuadraticFamily quadratic;
  // Logistic problems.
  std::size_t dim = 20;
  int classes = 10;
  std::size_t n_per_class = 100;
  double separation = 3.0;
  double ridge = 1e-3;
  PartitionSpec partition;
  std::optional<std::vector<int>> client_classes;
  std::optional<ServerSplitConfig> server;
  std::optional<std::string> data_csv;
};

enum class GammaRule { kValue, kInverseL, kThm2Cap };

struct GammaSpec {
  GammaRule rule = GammaRule::kValue;
  double value = 0.1;
};

enum class SweepAxis { kGamma, kBeta, kOmega };

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kGamma: return "gamma";
    case SweepAxis::kBeta: return "beta";
    case SweepAxis::kOmega: return "omega";
  }
  return "?";
}

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "gamma") return SweepAxis::kGamma;
  if (s == "beta") return SweepAxis::kBeta;
  if (s == "omega") return SweepAxis::kOmega;
  throw ValidationError("sweep.axis: expected gamma, beta or omega, got '" + s + "'");
}

struct SweepConfig {
  SweepAxis axis = SweepAxis::kGamma;
  std::vector<double> values;
};

struct ExperimentConfig {
  ProblemConfig problem;
  AlgorithmKind algorithm = AlgorithmKind::kDirect;
  CompressorSpec compressor = CompressorSpec::identity();
  GammaSpec gamma;
  std::size_t rounds = 100;
  std::size_t clients = 10;
  std::vector<std::uint64_t> seeds{0};
  Transport transport = Transport::kBroadcastPredictor;
  double momentum = 0.0;
  std::string out = "out";
  std::optional<AuditKind> audit;
  std::size_t histogram_bins = 101;
  std::optional<SweepConfig> sweep;
};

namespace detail {

/// 1-based line of the first occurrence of the key path in the source text,
/// 0 when it cannot be located.
inline std::size_t line_of(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  for (const auto& seg : path) {
    if (seg.empty() || seg.front() == '[') continue;
    const auto at = text.find("\"" + seg + "\"", pos);
    if (at == std::string::npos) return 0;
    pos = at;
  }
  if (path.empty()) return 0;
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + pos, '\n'));
}

class Reader {
 public:
  explicit Reader(const std::string& text) : text_(text) {}

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& msg) const {
    std::string joined;
    for (const auto& seg : path) {
      if (!joined.empty() && seg.front() != '[') joined += '.';
      joined += seg;
    }
    const auto line = line_of(text_, path);
    std::string what = joined + ": " + msg;
    if (line > 0) what += " (line " + std::to_string(line) + ")";
    throw ValidationError(what);
  }

  void check_keys(const nlohmann::json& obj, const std::vector<std::string>& path,
                  const std::set<std::string>& allowed) const {
    if (!obj.is_object()) fail(path, "expected an object");
    for (const auto& [key, _] : obj.items()) {
      if (!allowed.count(key)) {
        auto p = path;
        p.push_back(key);
        fail(p, "unknown key");
      }
    }
  }

  double number(const nlohmann::json& v, const std::vector<std::string>& path) const {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }

  std::size_t count(const nlohmann::json& v, const std::vector<std::string>& path,
                    std::size_t min = 0) const {
    if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min))
      fail(path, "expected an integer >= " + std::to_string(min));
    return v.get<std::size_t>();
  }

  std::string string(const nlohmann::json& v, const std::vector<std::string>& path) const {
    if (!v.is_string()) fail(path, "expected a string");
    return v.get<std::string>();
  }

  bool boolean(const nlohmann::json& v, const std::vector<std::string>& path) const {
    if (!v.is_boolean()) fail(path, "expected true or false");
    return v.get<bool>();
  }

  std::vector<int> int_list(const nlohmann::json& v, const std::vector<std::string>& path) const {
    if (!v.is_array()) fail(path, "expected an array of integers");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) fail(path, "expected an array of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

 private:
  const std::string& text_;
};

inline CompressorSpec parse_compressor(const Reader& rd, const nlohmann::json& j,
                                       const std::vector<std::string>& path) {
  rd.check_keys(j, path, {"kind", "fraction", "k", "rank", "power_iters", "bits", "inner"});
  auto at = [&](const char* key) {
    auto p = path;
    p.push_back(key);
    return p;
  };
  if (!j.contains("kind")) rd.fail(at("kind"), "missing");
  const std::string kind = rd.string(j["kind"], at("kind"));
  CompressorSpec spec;
  if (kind == "identity") {
    spec = CompressorSpec::identity();
  } else if (kind == "topk") {
    const bool has_f = j.contains("fraction"), has_k = j.contains("k");
    if (has_f == has_k) rd.fail(path, "topk needs exactly one of 'fraction' or 'k'");
    if (has_f) {
      const double f = rd.number(j["fraction"], at("fraction"));
      if (!(f > 0.0 && f <= 1.0)) rd.fail(at("fraction"), "must lie in (0, 1]");
      spec = CompressorSpec::topk_fraction_of(f);
    } else {
      spec = CompressorSpec::topk(rd.count(j["k"], at("k"), 1));
    }
  } else if (kind == "lowrank") {
    const std::size_t r = j.contains("rank") ? rd.count(j["rank"], at("rank"), 1) : 1;
    const std::size_t it =
        j.contains("power_iters") ? rd.count(j["power_iters"], at("power_iters"), 1) : 1;
    spec = CompressorSpec::lowrank(r, it);
  } else if (kind == "quantized") {
    if (!j.contains("inner")) rd.fail(at("inner"), "missing");
    if (!j.contains("bits")) rd.fail(at("bits"), "missing");
    const CompressorSpec inner = parse_compressor(rd, j["inner"], at("inner"));
    const auto bits = rd.count(j["bits"], at("bits"), 2);
    if (bits > 16) rd.fail(at("bits"), "must lie in [2, 16]");
    try {
      spec = CompressorSpec::quantized(inner, static_cast<unsigned>(bits));
    } catch (const SpecError& e) {
      rd.fail(at("inner"), e.what());
    }
  } else {
    rd.fail(at("kind"), "unknown compressor '" + kind + "'");
  }
  if (kind != "topk" && (j.contains("fraction") || j.contains("k")))
    rd.fail(path, "'fraction'/'k' only apply to topk");
  if (kind != "lowrank" && (j.contains("rank") || j.contains("power_iters")))
    rd.fail(path, "'rank'/'power_iters' only apply to lowrank");
  if (kind != "quantized" && (j.contains("bits") || j.contains("inner")))
    rd.fail(path, "'bits'/'inner' only apply to quantized");
  return spec;
}

inline void parse_problem(const Reader& rd, const nlohmann::json& j, ProblemConfig& pc) {
  const std::vector<std::string> base{"problem"};
  auto at = [&](const char* key) {
    auto p = base;
    p.push_back(key);
    return p;
  };
  if (!j.is_object()) rd.fail(base, "expected an object");
  if (!j.contains("kind")) rd.fail(at("kind"), "missing (quadratic or logistic)");
  const std::string kind = rd.string(j["kind"], at("kind"));
  if (kind == "quadratic") {
    pc.kind = ProblemKind::kQuadratic;
    rd.check_keys(j, base, {"kind", "dim", "mu", "lmax", "spread", "identical", "server",
                            "server_perturbation"});
    auto& q = pc.quadratic;
    if (j.contains("dim")) q.dim = rd.count(j["dim"], at("dim"), 1);
    if (j.contains("mu")) q.mu = rd.number(j["mu"], at("mu"));
    if (j.contains("lmax")) q.lmax = rd.number(j["lmax"], at("lmax"));
    if (j.contains("spread")) q.spread = rd.number(j["spread"], at("spread"));
    if (j.contains("identical")) q.identical = rd.boolean(j["identical"], at("identical"));
    if (j.contains("server_perturbation"))
      q.server_perturbation = rd.number(j["server_perturbation"], at("server_perturbation"));
    if (j.contains("server")) {
      const auto s = rd.string(j["server"], at("server"));
      if (s == "none") q.server = ServerObjective::kNone;
      else if (s == "mean") q.server = ServerObjective::kMean;
      else if (s == "perturbed") q.server = ServerObjective::kPerturbed;
      else rd.fail(at("server"), "expected none, mean or perturbed");
    }
    if (!(q.mu > 0.0 && q.lmax >= q.mu)) rd.fail(at("mu"), "need 0 < mu <= lmax");
    if (!(q.spread >= 0.0 && q.spread < 1.0)) rd.fail(at("spread"), "must lie in [0, 1)");
    if (!(q.server_perturbation >= 0.0 && q.server_perturbation < 1.0))
      rd.fail(at("server_perturbation"), "must lie in [0, 1)");
  } else if (kind == "logistic") {
    pc.kind = ProblemKind::kLogistic;
    rd.check_keys(j, base, {"kind", "dim", "classes", "n_per_class", "separation", "ridge",
                            "partition", "client_classes", "server", "data_csv"});
    if (j.contains("dim")) pc.dim = rd.count(j["dim"], at("dim"), 1);
    if (j.contains("classes")) pc.classes = static_cast<int>(rd.count(j["classes"], at("classes"), 2));
    if (j.contains("n_per_class")) pc.n_per_class = rd.count(j["n_per_class"], at("n_per_class"), 1);
    if (j.contains("separation")) pc.separation = rd.number(j["separation"], at("separation"));
    if (j.contains("ridge")) pc.ridge = rd.number(j["ridge"], at("ridge"));
    if (j.contains("data_csv")) pc.data_csv = rd.string(j["data_csv"], at("data_csv"));
    if (!(pc.separation >= 0.0)) rd.fail(at("separation"), "must be >= 0");
    if (!(pc.ridge >= 0.0)) rd.fail(at("ridge"), "must be >= 0");
    if (j.contains("partition")) {
      const auto& pj = j["partition"];
      const auto pb = at("partition");
      rd.check_keys(pj, pb, {"mode", "fraction"});
      auto pat = [&](const char* key) {
        auto p = pb;
        p.push_back(key);
        return p;
      };
      if (pj.contains("mode")) {
        const auto m = rd.string(pj["mode"], pat("mode"));
        if (m == "iid") pc.partition.mode = PartitionMode::kIid;
        else if (m == "by_class") pc.partition.mode = PartitionMode::kByClass;
        else rd.fail(pat("mode"), "expected iid or by_class");
      }
      if (pj.contains("fraction")) {
        pc.partition.fraction = rd.number(pj["fraction"], pat("fraction"));
        if (!(pc.partition.fraction > 0.0 && pc.partition.fraction <= 1.0))
          rd.fail(pat("fraction"), "must lie in (0, 1]");
      }
    }
    auto check_classes = [&](const std::vector<int>& cls, const std::vector<std::string>& p) {
      if (cls.empty()) rd.fail(p, "must not be empty");
      for (int c : cls)
        if (c < 0 || c >= pc.classes) rd.fail(p, "class out of range");
    };
    if (j.contains("client_classes")) {
      pc.client_classes = rd.int_list(j["client_classes"], at("client_classes"));
      check_classes(*pc.client_classes, at("client_classes"));
    }
    if (j.contains("server") && !j["server"].is_null()) {
      const auto& sj = j["server"];
      const auto sb = at("server");
      rd.check_keys(sj, sb, {"beta", "size_frac", "in_classes", "out_classes"});
      auto sat = [&](const char* key) {
        auto p = sb;
        p.push_back(key);
        return p;
      };
      ServerSplitConfig sc;
      if (sj.contains("beta")) sc.beta = rd.number(sj["beta"], sat("beta"));
      if (sj.contains("size_frac")) sc.size_frac = rd.number(sj["size_frac"], sat("size_frac"));
      if (!(sc.beta >= 0.0 && sc.beta <= 1.0)) rd.fail(sat("beta"), "must lie in [0, 1]");
      if (!(sc.size_frac > 0.0 && sc.size_frac < 1.0)) rd.fail(sat("size_frac"), "must lie in (0, 1)");
      if (sj.contains("in_classes")) {
        sc.in_classes = rd.int_list(sj["in_classes"], sat("in_classes"));
        check_classes(*sc.in_classes, sat("in_classes"));
      }
      if (sj.contains("out_classes")) {
        sc.out_classes = rd.int_list(sj["out_classes"], sat("out_classes"));
        check_classes(*sc.out_classes, sat("out_classes"));
      }
      pc.server = sc;
    }
  } else {
    rd.fail(at("kind"), "expected quadratic or logistic");
  }
}

}  // namespace detail

/// Parses and validates a config document. `text` is kept for line lookups.
inline ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw ParseError(std::string("malformed config: ") + e.what(), line);
  }
  const detail::Reader rd(text);
  rd.check_keys(j, {}, {"problem", "algorithm", "compressor", "gamma", "rounds", "clients", "seeds",
                        "transport", "momentum", "out", "audit", "histogram_bins", "sweep"});
  ExperimentConfig cfg;
  if (!j.contains("problem")) rd.fail({"problem"}, "missing");
  detail::parse_problem(rd, j["problem"], cfg.problem);

  if (!j.contains("algorithm")) rd.fail({"algorithm"}, "missing (direct, cafe or cafe_s)");
  const auto alg = rd.string(j["algorithm"], {"algorithm"});
  if (alg == "direct") cfg.algorithm = AlgorithmKind::kDirect;
  else if (alg == "cafe") cfg.algorithm = AlgorithmKind::kCAFe;
  else if (alg == "cafe_s") cfg.algorithm = AlgorithmKind::kCAFeS;
  else rd.fail({"algorithm"}, "expected direct, cafe or cafe_s");

  if (j.contains("compressor")) cfg.compressor = detail::parse_compressor(rd, j["compressor"], {"compressor"});
  if (j.contains("gamma")) {
    const auto& g = j["gamma"];
    if (g.is_string()) {
      const auto s = g.get<std::string>();
      if (s == "1/L") cfg.gamma.rule = GammaRule::kInverseL;
      else if (s == "thm2_cap") cfg.gamma.rule = GammaRule::kThm2Cap;
      else rd.fail({"gamma"}, "expected a number, \"1/L\" or \"thm2_cap\"");
    } else {
      cfg.gamma.value = rd.number(g, {"gamma"});
      if (!(cfg.gamma.value > 0.0)) rd.fail({"gamma"}, "must be > 0");
    }
  }
  if (j.contains("rounds")) cfg.rounds = rd.count(j["rounds"], {"rounds"}, 1);
  if (j.contains("clients")) cfg.clients = rd.count(j["clients"], {"clients"}, 1);
  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    if (!s.is_array() || s.empty()) rd.fail({"seeds"}, "expected a non-empty array of integers");
    cfg.seeds.clear();
    for (const auto& e : s) {
      if (!e.is_number_unsigned()) rd.fail({"seeds"}, "expected non-negative integers");
      cfg.seeds.push_back(e.get<std::uint64_t>());
    }
  }
  if (j.contains("transport")) {
    const auto t = rd.string(j["transport"], {"transport"});
    if (t == "broadcast_predictor") cfg.transport = Transport::kBroadcastPredictor;
    else if (t == "client_recovers") cfg.transport = Transport::kClientRecovers;
    else rd.fail({"transport"}, "expected broadcast_predictor or client_recovers");
  }
  if (j.contains("momentum")) {
    cfg.momentum = rd.number(j["momentum"], {"momentum"});
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) rd.fail({"momentum"}, "must lie in [0, 1)");
  }
  if (j.contains("out")) cfg.out = rd.string(j["out"], {"out"});
  if (j.contains("audit")) {
    try {
      cfg.audit = parse_audit_kind(rd.string(j["audit"], {"audit"}));
    } catch (const ConfigError& e) {
      rd.fail({"audit"}, e.what());
    }
  }
  if (j.contains("histogram_bins")) cfg.histogram_bins = rd.count(j["histogram_bins"], {"histogram_bins"}, 2);
  if (j.contains("sweep")) {
    const auto& sj = j["sweep"];
    rd.check_keys(sj, {"sweep"}, {"axis", "values"});
    SweepConfig sc;
    if (!sj.contains("axis")) rd.fail({"sweep", "axis"}, "missing");
    try {
      sc.axis = parse_sweep_axis(rd.string(sj["axis"], {"sweep", "axis"}));
    } catch (const ValidationError& e) {
      rd.fail({"sweep", "axis"}, e.what());
    }
    if (!sj.contains("values") || !sj["values"].is_array() || sj["values"].empty())
      rd.fail({"sweep", "values"}, "expected a non-empty array of numbers");
    for (const auto& v : sj["values"]) sc.values.push_back(rd.number(v, {"sweep", "values"}));
    cfg.sweep = sc;
  }

  // Cross-field checks.
  const bool has_server = cfg.problem.kind == ProblemKind::kQuadratic
                              ? cfg.problem.quadratic.server != ServerObjective::kNone
                              : cfg.problem.server.has_value();
  if (cfg.algorithm == AlgorithmKind::kCAFeS && !has_server)
    rd.fail({"problem", "server"}, "cafe_s requires a server objective");
  if (cfg.problem.kind == ProblemKind::kLogistic && cfg.problem.data_csv && cfg.problem.server)
    rd.fail({"problem", "server"}, "server splits need generated data");
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace cafesim

#endif  // CAFESIM_CLI_CONFIG_HPP_
