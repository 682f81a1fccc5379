#pragma once

// Solvers for det(g0 + phi_{i jbar}) = e^F det g0 on the closed torus.

#include <string>
#include <vector>

#include "cma/grid_field.hpp"
#include "cma/kahler_geometry.hpp"

namespace cma {

class IncompatibleDensity : public Error {
 public:
  using Error::Error;
};

/// Diagnostics of one accepted Newton step.
struct IterationRecord {
  double s;
  int iter;
  double residual_sup;
  double step_length;
  double min_eigen_omega;
};

class SolverError : public Error {
 public:
  enum class Kind { PositivityLoss, MaxIterations, LinearSolveStagnation };

  SolverError(Kind kind, const std::string& what, IterationRecord last);
  Kind kind() const { return kind_; }
  const IterationRecord& last() const { return last_; }

 private:
  Kind kind_;
  IterationRecord last_;
};

const char* to_string(SolverError::Kind kind);

struct MAProblem {
  /// Rejects F violating |int e^F omega_0^n - int omega_0^n| <= 1e-12 * int omega_0^n.
  MAProblem(BackgroundPtr bg, ScalarField F);

  BackgroundPtr bg;
  ScalarField F;
  double newton_tol = 1e-10;
  int max_newton_iters = 50;
  int continuation_steps = 8;
};

struct MASolution {
  MAProblem problem;
  /// Gauged so that int phi omega_0^n = 0.
  ScalarField phi;
  double residual_sup;
  int iterations;
  double min_eigen_omega;
  /// inf of phi over the grid.
  double inf_phi;
  std::vector<IterationRecord> log;
};

/// F_raw + log(int omega_0^n / int e^{F_raw} omega_0^n).
ScalarField normalize_density(const ScalarField& F_raw, const BackgroundMetric& bg);

/// sup |log(det g / det g0) - F| for omega = omega_0 + i ddbar phi.
double residual_sup(const MAProblem& problem, const ScalarField& phi);

/// Exact Fourier solve of phi_{z zbar} = e^F - 1 (n = 1, flat background).
MASolution solve_linear_n1(const MAProblem& problem);

/// Damped inexact Newton with continuation in s. `initial` may be null.
MASolution solve_newton(const MAProblem& problem, const ScalarField* initial = nullptr);

/// solve_linear_n1 where it applies, otherwise solve_newton.
MASolution solve(const MAProblem& problem);

/// Problem whose solution is phi_star (up to constants): F = log det((g0 + phi*_{i jbar}) / g0),
/// normalized for compatibility. Throws PositivityError if g0 + phi*_{i jbar} is not positive.
MAProblem manufactured(BackgroundPtr bg, const ScalarField& phi_star);

/// phi minus its omega_0^n-mean.
ScalarField mean_zero_gauge(const ScalarField& phi, const BackgroundMetric& bg);

}  // namespace cma
