#pragma once

// Uniform periodic grids on the torus C^n / Z^{2n} and the fields sampled on them.
//
// Real axes are ordered (x^1, y^1, x^2, y^2) with z^j = x^j + i y^j, and values are
// stored row-major with x^1 the slowest axis. Every real axis has period 1.

#include <array>
#include <complex>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cma {

using cplx = std::complex<double>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GridMismatch : public Error {
 public:
  using Error::Error;
};

/// Point on the torus, one coordinate per real axis (unused trailing entries are 0).
using Coords = std::array<double, 4>;

class GridSpec {
 public:
  /// Validates n in {1, 2} and N even, N >= 8.
  GridSpec(int complex_dim, int points_per_axis);

  int complex_dim() const { return n_; }
  int points_per_axis() const { return N_; }
  int real_dims() const { return 2 * n_; }
  std::size_t size() const { return size_; }
  double spacing() const { return 1.0 / N_; }

  /// Per-axis integer indices of a flat index.
  std::array<int, 4> unflatten(std::size_t flat) const;
  std::size_t flatten(const std::array<int, 4>& idx) const;
  Coords coords(std::size_t flat) const;

  bool operator==(const GridSpec&) const = default;

 private:
  int n_;
  int N_;
  std::size_t size_;
};

class ScalarField {
 public:
  ScalarField(GridSpec grid, std::vector<double> values);
  /// Constant field.
  ScalarField(GridSpec grid, double value);

  static ScalarField generate(const GridSpec& grid,
                              const std::function<double(const Coords&)>& fn);

  const GridSpec& grid() const { return grid_; }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::size_t size() const { return values_.size(); }

  double max() const;
  double min() const;
  std::size_t argmax() const;
  double max_abs() const;

  /// Pointwise map of the samples onto a new field.
  ScalarField map(const std::function<double(double)>& fn) const;

 private:
  GridSpec grid_;
  std::vector<double> values_;
};

/// Pointwise arithmetic. All binary forms require identical grids.
ScalarField operator+(const ScalarField& a, const ScalarField& b);
ScalarField operator-(const ScalarField& a, const ScalarField& b);
ScalarField operator*(const ScalarField& a, const ScalarField& b);
ScalarField operator*(double s, const ScalarField& a);
ScalarField operator+(const ScalarField& a, double c);

/// Complex samples on a grid, e.g. the output of partial_z.
struct ComplexField {
  GridSpec grid;
  std::vector<cplx> values;
};

/// n x n complex matrix per grid point; at(p, i, j) is entry (i, j) at point p.
class ComplexMatrixField {
 public:
  ComplexMatrixField(GridSpec grid, int dim);

  const GridSpec& grid() const { return grid_; }
  int dim() const { return dim_; }
  cplx& at(std::size_t p, int i, int j) { return data_[(p * dim_ + i) * dim_ + j]; }
  const cplx& at(std::size_t p, int i, int j) const {
    return data_[(p * dim_ + i) * dim_ + j];
  }

  /// Largest pointwise |A - A^H| entry.
  double hermitian_defect() const;

 private:
  GridSpec grid_;
  int dim_;
  std::vector<cplx> data_;
};

void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what);

/// Integral over the torus against the volume convention: mean of u * weight over grid points.
double integrate(const ScalarField& u, const ScalarField& weight);
/// Integral against the flat volume (weight 1).
double integrate(const ScalarField& u);

/// (integral of |u|^p * weight)^(1/p); any volume density must be folded into `weight`.
double lp_norm(const ScalarField& u, double p, const ScalarField& weight);

/// sup over grid points of |a - b|.
double sup_distance(const ScalarField& a, const ScalarField& b);

/// Write `<base>.bin` (little-endian float64, row-major) and `<base>.meta` ({n, N, name}).
void write_snapshot(const ScalarField& u, const std::string& base, const std::string& name);

struct Snapshot {
  ScalarField field;
  std::string name;
};
Snapshot read_snapshot(const std::string& base);

}  // namespace cma
