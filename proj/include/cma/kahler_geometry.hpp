#pragma once

// Background Kähler metrics on the torus, their curvature, and the metric
// contractions used by the gradient estimate.
//
// Index conventions: a ComplexMatrixField holding a metric stores g_{i jbar} at
// (i, j). Inverse metrics are stored with upper indices, inverse(i, j) = g^{i jbar},
// so that sum_j g^{i jbar} g_{k jbar} = delta_ik.

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "cma/grid_field.hpp"
#include "cma/spectral.hpp"

namespace cma {

/// A metric failed to be positive definite.
class PositivityError : public Error {
 public:
  PositivityError(const std::string& what, std::size_t point, Coords where, double eigenvalue);
  std::size_t point() const { return point_; }
  const Coords& where() const { return where_; }
  double eigenvalue() const { return eigenvalue_; }

 private:
  std::size_t point_;
  Coords where_;
  double eigenvalue_;
};

class BackgroundMetric {
 public:
  const GridSpec& grid() const { return grid_; }
  int dim() const { return grid_.complex_dim(); }
  bool is_flat() const { return flat_; }

  const ComplexMatrixField& g0() const { return g0_; }
  const ComplexMatrixField& inverse_g0() const { return inverse_g0_; }
  const ScalarField& det_g0() const { return det_g0_; }
  /// Kähler potential of the perturbation, g0 = delta + psi_{i jbar}.
  const ScalarField& psi() const { return psi_; }

  /// Gamma^p_{k i} = g^{p qbar} d_k g_{i qbar}.
  cplx christoffel(std::size_t pt, int p, int k, int i) const;
  /// R_{i jbar k lbar} = -d_k d_lbar g_{i jbar} + g^{p qbar} d_k g_{i qbar} d_lbar g_{p jbar}.
  cplx curvature(std::size_t pt, int i, int j, int k, int l) const;

  /// Lower bound of the bisectional curvature is -K; K >= 0.
  double K() const { return K_; }

  /// min over unit (1,0)-vectors xi, zeta of R(xi, xibar, zeta, zetabar) at one grid point.
  double min_bisectional_at(std::size_t pt) const;

  /// Total volume, the integral of omega_0^n under the grid volume convention.
  double volume() const;

 private:
  friend BackgroundMetric make_flat_background(const GridSpec&);
  friend BackgroundMetric make_perturbed_background(const GridSpec&, const ScalarField&);

  explicit BackgroundMetric(const GridSpec& grid);

  GridSpec grid_;
  bool flat_ = true;
  ComplexMatrixField g0_;
  ComplexMatrixField inverse_g0_;
  ScalarField det_g0_;
  ScalarField psi_;
  std::vector<cplx> christoffel_;
  std::vector<cplx> curvature_;
  double K_ = 0.0;
};

using BackgroundPtr = std::shared_ptr<const BackgroundMetric>;

BackgroundMetric make_flat_background(const GridSpec& grid);

/// g0 = delta + psi_{i jbar}. Throws PositivityError if the smallest eigenvalue
/// of g0 drops below 0.1 anywhere.
BackgroundMetric make_perturbed_background(const GridSpec& grid, const ScalarField& psi);

/// K = max(0, -min over grid points of the minimal bisectional curvature).
double bisectional_lower_bound(const BackgroundMetric& bg);

/// omega = omega_0 + i ddbar phi.
struct MetricField {
  GridSpec grid;
  ComplexMatrixField g;
  ComplexMatrixField inverse_g;
  ScalarField det_ratio;  ///< det g / det g0
  double min_eigenvalue;  ///< smallest eigenvalue of g relative to g0, over the grid
  std::size_t worst_point;
};

/// Assembles omega without rejecting non-positive metrics; check min_eigenvalue.
MetricField assemble_metric(const BackgroundMetric& bg, const ScalarField& phi);
MetricField assemble_metric(const BackgroundMetric& bg, const Spectrum& phi);

/// As assemble_metric, but throws PositivityError when omega is not positive.
MetricField metric_of_potential(const BackgroundMetric& bg, const ScalarField& phi);

/// tr_omega omega_0 = g^{i jbar} g0_{i jbar}.
ScalarField trace_w_w0(const MetricField& m, const BackgroundMetric& bg);

/// |grad u|^2 = g^{i jbar} u_i u_jbar for the metric whose inverse is given.
ScalarField grad_norm_sq(const ScalarField& u, const ComplexMatrixField& inverse);
ScalarField grad_norm_sq(const std::vector<ComplexField>& grad, const ComplexMatrixField& inverse);

/// 2 Re <grad u, gradbar v> = 2 Re g^{i jbar} u_i v_jbar.
ScalarField hermitian_grad_pairing(const ScalarField& u, const ScalarField& v,
                                   const ComplexMatrixField& inverse);
ScalarField hermitian_grad_pairing(const std::vector<ComplexField>& du,
                                   const std::vector<ComplexField>& dv,
                                   const ComplexMatrixField& inverse);

/// Delta_omega u = g^{i jbar} u_{i jbar}.
ScalarField laplacian(const ScalarField& u, const MetricField& m);
ScalarField laplacian(const Spectrum& u, const MetricField& m);

/// u_{k i} = d_k d_i u - Gamma^p_{k i} u_p, the (2,0) part of the covariant Hessian.
ComplexMatrixField covariant_hessian_holo(const ScalarField& u, const BackgroundMetric& bg);
ComplexMatrixField covariant_hessian_holo(const Spectrum& u, const BackgroundMetric& bg);

/// Pointwise smallest eigenvalue of a (relative to b0), both Hermitian n x n, n <= 2.
double relative_min_eigenvalue(int n, const cplx* a, const cplx* b0);

/// Mixed discriminant D(A_1, ..., A_n) with D(A, ..., A) = det A (n <= 2).
/// A wedge of (1,1)-forms integrates as D of their coefficient matrices.
double mixed_discriminant(int n, const cplx* a, const cplx* b);

}  // namespace cma
