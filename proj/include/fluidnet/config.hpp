#pragma once

// JSON run configuration. Units are fixed: hours, vehicles, vehicles/hour.
//
//   {
//     "schema": "fluidnet/1",
//     "topology": "merge" | "merge-diverge",
//     "chains": [{"a_plus": 3000, "lambda": 1, "mu": 1.5}, {...}],
//     "F1": 1500, "F2": 1500, "R3": 2500, "phi1": 0.5,
//     "diverge": {"F3": 3000, "theta": 40, "R4": 1400, "R5": 1400},
//     "a_bar": [1200, 1200],                      // optional; else chain means
//     "horizon": 1000, "seed": 1, "max_step": 1e-3, "eps_q": 1e-9,
//     "sample_interval": 0,
//     "initial_state": {"mode": "00", "q": [0, 0, 0, 0]},
//     "constant_inflow": [a1, a2],                 // optional; mode never jumps
//     "estimate": {"ensemble": 8, "horizon": 1000, "slope_threshold_frac": 0.01,
//                  "avg_tol": 0.05, "checkpoints": 200, "threads": 0},
//     "sweep": {"F3": {"from": 2000, "to": 3500, "step": 100},
//               "phi1": {"from": 0, "to": 1, "step": 0.01}},
//     "drift": {"certificate": "auto" | "V1" | "V2", "box": 1e4, "grid": 200,
//               "samples": 10000, "runs": 4, "horizon": 200, "interval": 0.5,
//               "scale": "half" | "as-printed"}
//   }
//
// In merge-diverge, R3 defaults to F3 and diverge.F3 may be omitted when a
// sweep supplies the F3 axis.

#include "fluidnet/lyapunov.hpp"
#include "fluidnet/simulator.hpp"
#include "fluidnet/stability.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fluidnet {

inline constexpr std::string_view kConfigSchema = "fluidnet/1";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CertificateChoice { Auto, V1, V2 };

struct DriftOptions {
  CertificateChoice certificate{CertificateChoice::Auto};
  QuadraticScale scale{QuadraticScale::Half};
  double box{1e4};
  int grid{200};
  int samples{10000};
  // V2 region sampling
  int runs{4};
  double horizon{200};
  double interval{0.5};
};

struct RunConfig {
  SimConfig sim{};
  bool has_chains{false};
  Vector2d a_bar{Vector2d::Zero()};
  bool has_diverge_F3{false};
  std::optional<SweepGrid<double>> sweep{};
  EstimateOptions estimate{};
  DriftOptions drift{};
};

/// Throws ConfigError naming the offending field.
RunConfig parse_config_text(std::string_view text);
RunConfig parse_config(const std::string& path);

}  // namespace fluidnet
