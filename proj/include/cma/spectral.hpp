#pragma once

// Fourier-spectral calculus on the periodic grid.
//
// Conventions: d/dz = (d/dx - i d/dy)/2. Derivatives of odd order along a real
// axis drop that axis' Nyquist mode; even orders keep it, so the flat Laplacian
// is invertible on every non-constant mode and real fields stay real.

#include <array>
#include <vector>

#include "cma/grid_field.hpp"

namespace cma {

/// Half-complex (r2c) spectrum of a real field, normalized so that the
/// coefficients are the Fourier coefficients of the trigonometric interpolant.
struct Spectrum {
  GridSpec grid;
  std::vector<cplx> coeffs;
};

/// Constant-coefficient differential operator: a sum of coef * prod_a D_a^{m_a},
/// where D_a is the real derivative along real axis a.
class DiffOp {
 public:
  struct Term {
    std::array<int, 4> orders{};
    cplx coef;
  };

  DiffOp() = default;
  static DiffOp identity();
  /// d/dx_a for real axis a.
  static DiffOp real_axis(int axis);
  static DiffOp dz(int j);
  static DiffOp dzbar(int j);

  const std::vector<Term>& terms() const { return terms_; }

  friend DiffOp operator*(const DiffOp& a, const DiffOp& b);
  friend DiffOp operator+(const DiffOp& a, const DiffOp& b);
  friend DiffOp operator*(cplx s, const DiffOp& a);

 private:
  void add(const Term& t);
  std::vector<Term> terms_;
};

Spectrum forward(const ScalarField& u);
/// Inverse of forward (takes the real part of the interpolant).
ScalarField inverse(const Spectrum& s);

/// Apply `op` to the field whose spectrum is `s`; complex result.
ComplexField apply(const Spectrum& s, const DiffOp& op);
/// Real part of `apply`; one inverse transform.
ScalarField apply_real(const Spectrum& s, const DiffOp& op);
/// Imaginary part of `apply`.
ScalarField apply_imag(const Spectrum& s, const DiffOp& op);

/// Multiply a spectrum by the inverse of the flat Laplacian sum_j d_j d_jbar; mode 0 maps to 0.
Spectrum inverse_flat_laplacian(const Spectrum& s);

/// d u / d z^axis.
ComplexField partial_z(const ScalarField& u, int axis);
/// d u / d zbar^axis.
ComplexField partial_zbar(const ScalarField& u, int axis);
/// All n holomorphic first derivatives.
std::vector<ComplexField> complex_gradient(const ScalarField& u);
std::vector<ComplexField> complex_gradient(const Spectrum& s);

/// Entry (i, j) = d_{z^i} d_{zbar^j} u. Hermitian to round-off.
ComplexMatrixField complex_hessian(const ScalarField& u);
ComplexMatrixField complex_hessian(const Spectrum& s);
/// Entry (i, j) = d_{z^i} d_{z^j} u (flat, no connection terms).
ComplexMatrixField holomorphic_hessian(const Spectrum& s);

/// Trigonometric interpolation at an arbitrary point; reproduces grid samples.
double point_eval(const ScalarField& u, const Coords& x);
double point_eval(const Spectrum& s, const Coords& x);

/// Spectral prolongation to a finer grid (zero padding), N_new >= N.
ScalarField resample(const ScalarField& u, int new_points_per_axis);

/// Largest |index| of an active Fourier mode (half of N for the Nyquist band).
int nyquist(const GridSpec& g);

}  // namespace cma
