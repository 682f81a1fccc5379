#pragma once

// Configuration-driven experiment runner: single solves, verification suites,
// dependency sweeps and degenerate-family studies.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cma/grid_field.hpp"
#include "cma/kahler_geometry.hpp"

namespace cma {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class Command { Solve, Verify, Sweep, Degenerate };

Command parse_command(const std::string& s);
const char* to_string(Command c);

struct DensitySpec {
  /// zero | trig | bump | power | log_type | snapshot
  std::string family = "zero";
  double epsilon = 0.3;  ///< trig: e^F = 1 + epsilon sin(2 pi m x_axis)
  int axis = 0;
  int wavenumber = 1;
  double amplitude = 1.0;  ///< bump: F = amplitude exp(-d0^2 / width^2)
  double width = 0.15;
  Coords center{0.5, 0.5, 0.5, 0.5};
  double eps0 = 0.5;          ///< power profile exponent
  double patch_radius = 0.1;  ///< power and log_type
  int k = 0;                  ///< regularization index for power and log_type; 0 uses f itself
  std::string snapshot;       ///< snapshot base path holding F before normalization
};

struct RunConfig {
  Command command = Command::Solve;
  int n = 1;
  int N = 64;
  std::string background = "flat";  ///< flat | perturbed
  double psi_scale = 1.0;
  DensitySpec density;

  double newton_tol = 1e-10;
  int max_newton_iters = 50;
  int continuation_steps = 8;

  double cutoff_r = 0.25;
  double cutoff_C0 = 4.0;
  double alpha = 2.0;
  /// verify: also solve at 2N and compare the ABP implied constant (default: n == 1).
  bool abp_refine = true;

  std::vector<double> sweep_a{1, 3, 10, 30, 100};
  double sweep_width1 = 0.15;
  double sweep_amplitude1 = 1.0;
  Coords sweep_center{0.5, 0.5, 0.5, 0.5};
  /// File holding the frozen a = 1 sup H; written on the first run when absent.
  std::string sweep_baseline;

  std::string deg_profile = "power";
  double deg_eps0 = 0.5;
  Coords deg_center{0.5037, 0.4981, 0.5, 0.5};
  double deg_patch_radius = 0.1;
  std::vector<int> deg_k{10, 100, 1000, 10000};
  Coords log_center{0.5, 0.5, 0.5, 0.5};
  double log_patch_radius = 0.1;
  std::vector<int> log_N{32, 128};

  std::string output_dir;  ///< empty: nothing is written
  bool snapshots = false;
  long seed = 0;
};

/// Parses an INI file with sections run, grid, background, density, solver, estimate,
/// sweep, degenerate and output. Unknown keys are errors.
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_string(const std::string& text);

nlohmann::json to_json(const RunConfig& c);

/// Worker count from CMA_WORKERS (default 1).
int workers_from_env();

struct RunReport {
  nlohmann::json json;
  bool all_pass = false;
  /// CSV tables by file name.
  std::map<std::string, std::string> tables;
};

/// Executes the configured command and writes report.json, the CSV tables and optional
/// snapshots into config.output_dir.
RunReport run(const RunConfig& config);

/// Serialized report, identical for identical configs.
std::string dump_report(const RunReport& r);

BackgroundPtr make_background(const RunConfig& c);

/// F before normalization for the density spec.
ScalarField raw_density(const DensitySpec& d, const BackgroundMetric& bg);

struct StressMember {
  double a;
  double width;
  double amplitude;
  ScalarField F;  ///< normalized
  double sup_F;
  double wgrad_F_norm;  ///< ||grad F||_{L^{2n}(e^{2F} omega_0^n)}
  double grad_F_inf;    ///< sup |grad F|_{omega_0}
};

struct StressSpec {
  double width1 = 0.15;
  double amplitude1 = 1.0;
  Coords center{0.5, 0.5, 0.5, 0.5};
};

/// Weighted gradient norm of normalize(A exp(-d0^2 / w^2)).
double stress_wgrad(const BackgroundMetric& bg, const StressSpec& s, double width, double A);

/// Member with width width1 / a whose amplitude matches the a = 1 weighted gradient norm.
/// Throws if a is outside [1, 100] or the root-find misses by more than 1%.
StressMember stress_family(const BackgroundMetric& bg, const StressSpec& s, double a);

}  // namespace cma
