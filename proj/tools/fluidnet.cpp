// Command-line driver: simulate | classify | sweep | drift-check | estimate.
//
// Exit status: 0 on success, 2 when `estimate` finds the network unstable,
// 1 on any error (one line on stderr).

#include "fluidnet/config.hpp"
#include "fluidnet/lyapunov.hpp"
#include "fluidnet/report.hpp"
#include "fluidnet/simulator.hpp"
#include "fluidnet/stability.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace fluidnet;

namespace {

struct Output {
  std::optional<fs::path> dir;
  bool quiet{false};

  // Writes to <dir>/<name> when an output directory is set, else to stdout.
  void emit(const std::string& name, const std::string& text) const {
    if (dir) {
      std::ofstream out(*dir / name, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + (*dir / name).string());
      out << text;
      if (!quiet) std::cerr << "wrote " << (*dir / name).string() << '\n';
    } else if (!quiet) {
      std::cout << text;
    }
  }
};

void require_chains(const RunConfig& rc, const char* command) {
  if (!rc.has_chains) throw ConfigError(std::string("chains: required for ") + command);
}

std::optional<DivergeParams<double>> diverge_of(const RunConfig& rc) {
  if (rc.sim.network.topology != Topology::MergeDiverge) return std::nullopt;
  return rc.sim.network.diverge;
}

int run_simulate(const RunConfig& rc, const Output& out) {
  require_chains(rc, "simulate");
  const TrajectoryStats stats = simulate(rc.sim);
  if (out.dir) {
    std::ostringstream csv;
    write_trajectory_csv(csv, stats.path);
    out.emit("trajectory.csv", csv.str());
  }
  out.emit("stats.json", stats_json(stats));
  return 0;
}

int run_classify(const RunConfig& rc, const Output& out) {
  const auto c = classify(rc.sim.network.merge.phi, rc.a_bar, rc.sim.network.merge, diverge_of(rc));
  out.emit("verdict.json", classification_json(c));
  return 0;
}

int run_sweep(const RunConfig& rc, const Output& out) {
  if (!rc.sweep) throw ConfigError("sweep: required for the sweep command");
  std::ostringstream csv;
  write_sweep_csv(csv, sweep(*rc.sweep));
  out.emit("sweep.csv", csv.str());
  return 0;
}

int run_drift_check(const RunConfig& rc, const Output& out) {
  require_chains(rc, "drift-check");
  const NetworkParamsd& p = rc.sim.network;
  const DriftOptions& o = rc.drift;
  CertificateChoice cert = o.certificate;
  if (cert == CertificateChoice::Auto) {
    cert = p.topology == Topology::Merge ? CertificateChoice::V1 : CertificateChoice::V2;
  }
  DriftReport report;
  if (cert == CertificateChoice::V1) {
    const LyapunovV1 v = build_v1(rc.a_bar, p.merge.F1, p.merge.F2, rc.sim.chains, o.scale);
    const DriftConstants k = drift_constants_v1(v, rc.a_bar, p, rc.sim.chains, o.box, o.grid);
    report = verify_drift(v, rc.a_bar, p, rc.sim.chains, k, o.box, o.samples, rc.sim.seed);
  } else {
    const LyapunovV2 v = build_v2(p, rc.sim.chains, o.scale);
    const DriftConstants k = drift_constants_v2(v, rc.a_bar, p, rc.sim.chains, o.box, o.grid);
    const auto region = sample_trajectory_states(rc.sim, o.runs, o.horizon, o.interval);
    report = verify_drift(v, p, rc.sim.chains, k, region);
  }
  out.emit("drift.json", drift_report_json(report));
  return 0;
}

int run_estimate(const RunConfig& rc, const Output& out) {
  require_chains(rc, "estimate");
  const StabilityEstimate e = estimate_stability(rc.sim, rc.estimate);
  out.emit("estimate.json", estimate_json(e));
  return e.verdict == EstimateVerdict::Unstable ? 2 : 0;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic fluid merge/diverge network simulator and analyzer"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  const std::pair<const char*, const char*> commands[] = {
      {"simulate", "Simulate one trajectory; writes stats.json (and trajectory.csv with --out)"},
      {"classify", "Classify the configured priority vector"},
      {"sweep", "Classify every (F3, phi1) cell of the configured grid"},
      {"drift-check", "Verify the Lyapunov drift condition numerically"},
      {"estimate", "Monte Carlo stability estimate; exit 2 if unstable"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON configuration file")->required();
    sub->add_option("--out", out_dir, "Output directory (stdout when omitted)");
    sub->add_option("--seed", seed, "Override the configured seed");
    sub->add_flag("--quiet", quiet, "Suppress non-error output");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 1;
  }

  try {
    RunConfig rc = parse_config(config_path);
    if (seed) rc.sim.seed = *seed;
    Output out;
    out.quiet = quiet;
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      out.dir = fs::path(out_dir);
    }
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "simulate") return run_simulate(rc, out);
    if (name == "classify") return run_classify(rc, out);
    if (name == "sweep") return run_sweep(rc, out);
    if (name == "drift-check") return run_drift_check(rc, out);
    return run_estimate(rc, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
}
