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
// cafesim run|principle|sweep|audit --config <path> [--out <dir>]
//         [--seeds a,b,c] [--axis gamma|beta|omega --values v1,v2,...]
//         [--which thm1|thm2|thm3|descent_lemma|lemma2_recursion|lyapunov]

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cafesim/cli/commands.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::string axis;
  std::vector<double> values;
  std::string which;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->required();
  cmd->add_option("--out", o.out, "output directory (overrides config)");
  cmd->add_option("--seeds", o.seeds, "comma-separated seeds (overrides config)")->delimiter(',');
}

int dispatch(const std::string& command, const Options& o) {
  cafesim::ExperimentConfig cfg = cafesim::parse_config(o.config);
  if (!o.out.empty()) cfg.out = o.out;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (command == "run") return cafesim::cmd_run(cfg);
  if (command == "principle") return cafesim::cmd_principle(cfg);
  if (command == "sweep") {
    cafesim::SweepConfig sweep = cfg.sweep.value_or(cafesim::SweepConfig{});
    if (!o.axis.empty()) sweep.axis = cafesim::parse_sweep_axis(o.axis);
    if (!o.values.empty()) sweep.values = o.values;
    if (sweep.values.empty()) throw cafesim::ValidationError("sweep: no values given");
    if (!cfg.sweep && o.axis.empty()) throw cafesim::ValidationError("sweep: no axis given");
    return cafesim::cmd_sweep(cfg, sweep.axis, sweep.values);
  }
  std::optional<cafesim::AuditKind> which = cfg.audit;
  if (!o.which.empty()) which = cafesim::parse_audit_kind(o.which);
  if (!which) throw cafesim::ValidationError("audit: no audit selected (--which or \"audit\")");
  return cafesim::cmd_audit(cfg, *which);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressed distributed gradient descent simulator"};
  app.require_subcommand(1);
  Options o;
  auto* run = app.add_subcommand("run", "train and write trajectories");
  auto* principle = app.add_subcommand("principle", "predictor quality on uncompressed training");
  auto* sweep = app.add_subcommand("sweep", "one run per axis value and seed");
  auto* audit = app.add_subcommand("audit", "check a convergence inequality on a trajectory");
  for (auto* c : {run, principle, sweep, audit}) add_common(c, o);
  sweep->add_option("--axis", o.axis, "gamma, beta or omega");
  sweep->add_option("--values", o.values, "comma-separated axis values")->delimiter(',');
  audit->add_option("--which", o.which, "descent_lemma, lemma2_recursion, lyapunov, thm1, thm2, thm3");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cafesim::kExitError;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return dispatch(command, o);
  } catch (const cafesim::NonFiniteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cafesim::kExitNonFinite;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cafesim::kExitError;
  }
}
