#pragma once

// Pointwise verification of the gradient-estimate machinery on a solved instance:
// the Bochner identity for |grad phi|^2, the test function H, its differential
// inequality, the cutoff and ABP chain, and the integral bound for H.

#include <json.hpp>

#include "cma/grid_field.hpp"
#include "cma/ma_solver.hpp"

namespace cma {

/// lambda = 2K + 10. Throws for K < 0.
double lambda_of(double K);

/// phi - inf phi, so that its infimum is 0.
ScalarField normalized_potential(const MASolution& sol);

/// H = e^{-lambda (phi - inf phi)} |grad phi|^2_{omega_0}.
ScalarField H_field(const MASolution& sol, double lambda);

struct BochnerTerms {
  ScalarField lhs;        ///< Delta_omega |grad phi|^2_{omega_0}
  ScalarField gradient;   ///< 2 Re <grad F, gradbar phi>_{omega_0}
  ScalarField hessian;    ///< g^{i jbar} g0^{k lbar} (phi_{ki} phi_{jbar lbar} + phi_{k jbar} phi_{i lbar})
  ScalarField curvature;  ///< g^{i jbar} R_{i jbar k lbar} phi_p phi_qbar g0^{k qbar} g0^{p lbar}
};

BochnerTerms bochner_terms(const MASolution& sol);

/// Pointwise lhs - (gradient + hessian + curvature).
ScalarField bochner_residual(const MASolution& sol);

/// max |residual| / max |lhs| (0 when both vanish).
double bochner_relative_residual(const MASolution& sol);

struct DiffInequality {
  ScalarField slack;     ///< Delta_omega H - rhs, pointwise
  double max_abs_lap_H;  ///< max |Delta_omega H|
  double min_relative;   ///< min slack / max |Delta_omega H| (0 when H = 0)
};

/// Slack of Delta_omega H >= 2 e^{-lambda phi} Re<grad F, gradbar phi>_{omega_0}
///   + (lambda - 2K) H tr_omega omega_0 - lambda (n + 2) H.
DiffInequality diff_inequality(const MASolution& sol, double lambda);
ScalarField diff_inequality_slack(const MASolution& sol, double lambda);

struct CutoffSpec {
  Coords x0;
  double r;
  double C0;
  double theta;
  ScalarField eta;
  double alpha;
};

/// Location of the maximum of the trigonometric interpolant of u, refined from the grid argmax.
Coords locate_max(const ScalarField& u);

/// theta = min{1 / (10 n C0), r^2 / (10 n C0)}.
double cutoff_theta(int n, double r, double C0);

/// eta = 1 - theta * ramp(d0^2 / r^2), with d0^2 = sum_a sin^2(pi (x_a - x0_a)) / pi^2.
/// C0 is doubled, starting from the given value, until the derivative bounds hold.
CutoffSpec build_cutoff(const Coords& x0, double r, double C0, const BackgroundMetric& bg,
                        double alpha = 2.0);

/// eta evaluated at an arbitrary point from its defining formula.
double eta_at(const CutoffSpec& cut, const Coords& x);

/// Measured quantities behind the three cutoff bounds.
struct CutoffCertificate {
  double eta_min;
  double eta_max;
  double grad_sq_max;  ///< max |grad eta|^2_{g0}
  double hess_max;     ///< max |grad^2 eta|_{g0}
  double grad_sq_limit;  ///< C0 theta^2 / r^2
  double hess_limit;     ///< C0 theta / r^2
  bool ok;
};

CutoffCertificate certify_cutoff(const CutoffSpec& cut, const BackgroundMetric& bg);

struct ABPReport {
  double sup_inner;         ///< sup over B0 of eta H^alpha
  double sup_boundary;      ///< sup over the sphere of eta H^alpha
  double integral_term;     ///< r (int_{B0} [rhs]^{2n} e^{2F} omega_0^n)^{1/2n}
  double implied_constant;  ///< max(0, sup_inner - sup_boundary) / integral_term
  double M;                 ///< sup H
  double M_alpha;           ///< M^alpha
  double bootstrap_A;
  double bootstrap_B;
  double bootstrap_beta;
  double bootstrap_bound;   ///< bound on M implied by the chain
  bool bootstrap_ok;        ///< M <= bootstrap_bound
};

/// Evaluates the ABP chain for eta H^alpha on the ball of radius cut.r about cut.x0.
/// H is interpolated off the grid at x0 and on the sphere; M is the larger of the grid
/// maximum and H(x0), so x0 should come from locate_max(H).
ABPReport abp_check(const MASolution& sol, const CutoffSpec& cut, double lambda);

/// Unit sphere samples used for the boundary supremum: 256 points on S^{2n-1}.
std::vector<Coords> sphere_samples(int n);

struct IbpTerms {
  double lhs;  ///< int (e^{-lambda phi} - 1)(omega^n - omega_0^n)
  double rhs;  ///< lambda int e^{-lambda phi} i dphi ^ dbar phi ^ sum_k omega^{n-1-k} ^ omega_0^k
};

IbpTerms ibp_identity_terms(const MASolution& sol, double lambda);
/// |lhs - rhs| / (|lhs| + |rhs| + 1).
double ibp_identity_residual(const MASolution& sol, double lambda);

struct L1Bound {
  double value;  ///< int H omega_0^n
  double bound;  ///< n (int e^F omega_0^n + int omega_0^n) / lambda
};

L1Bound l1_H_bound(const MASolution& sol, double lambda);

struct EstimateReport {
  double lambda;
  double K;
  double sup_F;
  double wgrad_F_norm;
  double sup_H;
  double inf_phi;
  double c_emp;
  double bochner_residual_max;
  double diff_ineq_min_slack;
  /// max over the grid of |grad phi|^2 - c_emp e^{lambda (phi - inf phi)}, relative to c_emp
  double certificate_excess;
  bool certificate_ok;
};

EstimateReport estimate_report(const MASolution& sol);

nlohmann::json to_json(const EstimateReport& r);
nlohmann::json to_json(const ABPReport& r);
nlohmann::json to_json(const CutoffSpec& c, const CutoffCertificate& cert);

}  // namespace cma
