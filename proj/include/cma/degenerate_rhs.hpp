#pragma once

// Densities f >= 0 with isolated zeros, their regularizations f_k, and the
// uniform-Lipschitz study of the corresponding solutions.

#include <optional>
#include <string>
#include <vector>

#include "cma/grid_field.hpp"
#include "cma/ma_solver.hpp"

namespace cma {

struct Profile {
  enum class Kind { LogType, Power };
  Kind kind = Kind::Power;
  double eps0 = 0.5;  ///< exponent of the power profile
};

std::string to_string(const Profile& p);

struct DegenerateDensity {
  ScalarField f;
  std::vector<Coords> zero_centers;
  Profile profile;
  double zero_patch_radius;
  /// Constant multiplying the profile, chosen so the profile equals 1 at the patch radius.
  double amplitude;
  /// 1 on the patches, 0 beyond twice the patch radius, smooth in between.
  ScalarField patch_weight;
};

/// Squared smooth periodic distance sum_a sin^2(pi (x_a - c_a)) / pi^2.
double surrogate_distance_sq(int real_dims, const Coords& x, const Coords& c);

/// General construction: the scaled profile inside each patch, blended to 1 over an annulus
/// of the same width, then scaled outside the patches so that
/// int f omega_0^n = int omega_0^n. With no centers, f is constant.
/// Throws when the radius exceeds 0.2, the patches overlap, or the normalization is infeasible.
DegenerateDensity make_degenerate(const BackgroundMetric& bg, const std::vector<Coords>& centers,
                                  const Profile& profile, double patch_radius);

/// f proportional to |z - c|^{eps0} near each center.
DegenerateDensity make_power_vanishing(const BackgroundMetric& bg,
                                       const std::vector<Coords>& centers, double eps0,
                                       double patch_radius = 0.1);

/// f proportional to 1 / |log(|z - c|^2 + delta)| near each center, delta the smallest
/// normal double.
DegenerateDensity make_log_vanishing(const BackgroundMetric& bg,
                                     const std::vector<Coords>& centers,
                                     double patch_radius = 0.1);

/// f_k = f + 1/k on the patches, f rescaled by a constant outside, same total mass.
ScalarField regularize(const DegenerateDensity& d, const BackgroundMetric& bg, int k);

/// int |grad f|^{2n}_{omega_0} / f^{2n-2} omega_0^n. Throws if any sample is <= 0.
double sobolev_quantity(const ScalarField& f, const BackgroundMetric& bg);

/// sup |grad f^{1/n}|_{omega_0}.
double classical_driver(const ScalarField& f, const BackgroundMetric& bg);

struct RegularizedFamily {
  DegenerateDensity base;
  std::vector<int> k_values;
  std::vector<ScalarField> f_k;
  std::vector<double> sobolev_k;
  /// Empty where the solve failed.
  std::vector<std::optional<MASolution>> solutions;
  std::vector<std::string> failures;
};

/// Regularizes and solves each member; up to `workers` solves run concurrently.
RegularizedFamily build_family(BackgroundPtr bg, const DegenerateDensity& base,
                               const std::vector<int>& k_values, int workers = 1);

struct LipschitzReport {
  std::vector<int> k_values;
  std::vector<double> sobolev_k;
  std::vector<double> grad_sup_k;  ///< sup |grad phi_k|_{omega_0}
  std::vector<double> sup_H_k;
  /// sup |phi_{k_i} - phi_{k_{i+1}}|; one entry per consecutive pair.
  std::vector<double> cauchy_gaps;
  double grad_spread;    ///< max grad_sup_k / min grad_sup_k
  bool uniform_ok;       ///< grad_spread <= 2
  bool gaps_decreasing;  ///< strictly decreasing
  bool complete;         ///< every member solved
};

LipschitzReport lipschitz_study(const RegularizedFamily& fam);

/// Columns k, sobolev_k, grad_sup_k, sup_H_k, gap_to_next.
std::string family_csv(const LipschitzReport& r);

}  // namespace cma
