#include "cma/kahler_geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace cma {

namespace {

constexpr double kBackgroundFloor = 0.1;

double det_of(int n, const cplx* a) {
  if (n == 1) return a[0].real();
  return (a[0] * a[3] - a[1] * a[2]).real();
}

// out(i, j) = g^{i jbar}, the transpose of the matrix inverse.
void upper_inverse(int n, const cplx* a, cplx* out) {
  if (n == 1) {
    out[0] = 1.0 / a[0].real();
    return;
  }
  double det = det_of(2, a);
  out[0] = a[3] / det;
  out[1] = -a[2] / det;
  out[2] = -a[1] / det;
  out[3] = a[0] / det;
}

std::string describe(const Coords& x, int d) {
  std::ostringstream os;
  os << "(";
  for (int a = 0; a < d; ++a) os << (a ? ", " : "") << x[a];
  os << ")";
  return os.str();
}

const cplx* block(const ComplexMatrixField& f, std::size_t p) { return &f.at(p, 0, 0); }

}  // namespace

PositivityError::PositivityError(const std::string& what, std::size_t point, Coords where,
                                 double eigenvalue)
    : Error(what), point_(point), where_(where), eigenvalue_(eigenvalue) {}

double relative_min_eigenvalue(int n, const cplx* a, const cplx* b0) {
  if (n == 1) return a[0].real() / b0[0].real();
  // Eigenvalues of b0^{-1} a solve x^2 - t x + d = 0.
  cplx inv[4];
  upper_inverse(2, b0, inv);
  double t = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) t += (inv[i * 2 + j] * a[i * 2 + j]).real();
  }
  double d = det_of(2, a) / det_of(2, b0);
  double disc = std::max(0.0, t * t - 4.0 * d);
  return 0.5 * (t - std::sqrt(disc));
}

double mixed_discriminant(int n, const cplx* a, const cplx* b) {
  if (n == 1) return a[0].real();
  return 0.5 * (a[0] * b[3] + a[3] * b[0] - a[1] * b[2] - a[2] * b[1]).real();
}

BackgroundMetric::BackgroundMetric(const GridSpec& grid)
    : grid_(grid),
      g0_(grid, grid.complex_dim()),
      inverse_g0_(grid, grid.complex_dim()),
      det_g0_(grid, 1.0),
      psi_(grid, 0.0) {}

cplx BackgroundMetric::christoffel(std::size_t pt, int p, int k, int i) const {
  if (flat_) return 0.0;
  const int n = dim();
  return christoffel_[((pt * n + p) * n + k) * n + i];
}

cplx BackgroundMetric::curvature(std::size_t pt, int i, int j, int k, int l) const {
  if (flat_) return 0.0;
  const int n = dim();
  return curvature_[(((pt * n + i) * n + j) * n + k) * n + l];
}

double BackgroundMetric::volume() const { return integrate(det_g0_); }

BackgroundMetric make_flat_background(const GridSpec& grid) {
  BackgroundMetric bg(grid);
  const int n = grid.complex_dim();
  for (std::size_t p = 0; p < grid.size(); ++p) {
    for (int i = 0; i < n; ++i) {
      bg.g0_.at(p, i, i) = 1.0;
      bg.inverse_g0_.at(p, i, i) = 1.0;
    }
  }
  return bg;
}

BackgroundMetric make_perturbed_background(const GridSpec& grid, const ScalarField& psi) {
  require_same_grid(grid, psi.grid(), "make_perturbed_background");
  if (psi.max_abs() == 0.0) return make_flat_background(grid);

  BackgroundMetric bg(grid);
  bg.flat_ = false;
  bg.psi_ = psi;
  const int n = grid.complex_dim();
  const std::size_t P = grid.size();
  Spectrum s = forward(psi);

  ComplexMatrixField hess = complex_hessian(s);
  std::vector<double> det(P);
  double worst = std::numeric_limits<double>::infinity();
  std::size_t worst_at = 0;
  cplx identity[4] = {1.0, 0.0, 0.0, 1.0};
  if (n == 1) identity[0] = 1.0;
  for (std::size_t p = 0; p < P; ++p) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        bg.g0_.at(p, i, j) = (i == j ? 1.0 : 0.0) + hess.at(p, i, j);
      }
    }
    double lam = relative_min_eigenvalue(n, block(bg.g0_, p), identity);
    if (lam < worst) {
      worst = lam;
      worst_at = p;
    }
    det[p] = det_of(n, block(bg.g0_, p));
    upper_inverse(n, block(bg.g0_, p), &bg.inverse_g0_.at(p, 0, 0));
  }
  if (worst < kBackgroundFloor) {
    Coords x = grid.coords(worst_at);
    throw PositivityError("background metric has eigenvalue " + std::to_string(worst) + " < " +
                              std::to_string(kBackgroundFloor) + " at " +
                              describe(x, grid.real_dims()),
                          worst_at, x, worst);
  }
  bg.det_g0_ = ScalarField(grid, std::move(det));

  // t3[k][i][q] = d_k d_i d_qbar psi, symmetric in (k, i).
  std::vector<ComplexField> t3(n * n * n, ComplexField{grid, {}});
  for (int k = 0; k < n; ++k) {
    for (int i = k; i < n; ++i) {
      for (int q = 0; q < n; ++q) {
        ComplexField f = apply(s, DiffOp::dz(k) * DiffOp::dz(i) * DiffOp::dzbar(q));
        t3[(k * n + i) * n + q] = f;
        if (i != k) t3[(i * n + k) * n + q] = std::move(f);
      }
    }
  }
  auto T3 = [&](int k, int i, int q, std::size_t p) { return t3[(k * n + i) * n + q].values[p]; };

  bg.christoffel_.assign(P * n * n * n, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    for (int a = 0; a < n; ++a) {
      for (int k = 0; k < n; ++k) {
        for (int i = 0; i < n; ++i) {
          cplx acc = 0.0;
          for (int q = 0; q < n; ++q) acc += bg.inverse_g0_.at(p, a, q) * T3(k, i, q, p);
          bg.christoffel_[((p * n + a) * n + k) * n + i] = acc;
        }
      }
    }
  }

  bg.curvature_.assign(P * n * n * n * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k) {
        for (int l = 0; l < n; ++l) {
          ComplexField t4 =
              apply(s, DiffOp::dz(i) * DiffOp::dzbar(j) * DiffOp::dz(k) * DiffOp::dzbar(l));
          for (std::size_t p = 0; p < P; ++p) {
            cplx acc = -t4.values[p];
            for (int a = 0; a < n; ++a) {
              for (int q = 0; q < n; ++q) {
                // d_lbar g_{a jbar} = conj(d_l d_j d_abar psi)
                acc += bg.inverse_g0_.at(p, a, q) * T3(k, i, q, p) * std::conj(T3(l, j, a, p));
              }
            }
            bg.curvature_[(((p * n + i) * n + j) * n + k) * n + l] = acc;
          }
        }
      }
    }
  }

  bg.K_ = bisectional_lower_bound(bg);
  return bg;
}

namespace {

// Real 4x4 form B with R(xi, xibar, zeta, zetabar) = a^T B b for unit xi, zeta in
// an orthonormal frame, where xi xi^* = (I + s.sigma)/2, a = (1, s), b = (1, t).
using Form = std::array<std::array<double, 4>, 4>;

const std::array<Eigen::Matrix2cd, 4>& pauli() {
  static const std::array<Eigen::Matrix2cd, 4> m = [] {
    std::array<Eigen::Matrix2cd, 4> s;
    const cplx I(0.0, 1.0);
    s[0] << 1.0, 0.0, 0.0, 1.0;
    s[1] << 0.0, 1.0, 1.0, 0.0;
    s[2] << 0.0, -I, I, 0.0;
    s[3] << 1.0, 0.0, 0.0, -1.0;
    return s;
  }();
  return m;
}

std::array<double, 3> normalized(std::array<double, 3> v) {
  double r = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (r == 0.0) return {1.0, 0.0, 0.0};
  return {v[0] / r, v[1] / r, v[2] / r};
}

// Inner minimum over t in S^2 of a^T B b for fixed s.
double min_over_t(const Form& B, const std::array<double, 3>& s, std::array<double, 3>* t_out) {
  double base = B[0][0];
  std::array<double, 3> c{};
  for (int j = 0; j < 3; ++j) c[j] = B[0][j + 1];
  for (int i = 0; i < 3; ++i) {
    base += s[i] * B[i + 1][0];
    for (int j = 0; j < 3; ++j) c[j] += s[i] * B[i + 1][j + 1];
  }
  double r = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
  if (t_out) *t_out = normalized({-c[0], -c[1], -c[2]});
  return base - r;
}

const std::vector<std::array<double, 3>>& fibonacci_sphere() {
  static const std::vector<std::array<double, 3>> pts = [] {
    const int m = 512;
    std::vector<std::array<double, 3>> v(m);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < m; ++i) {
      double z = 1.0 - (2.0 * i + 1.0) / m;
      double r = std::sqrt(1.0 - z * z);
      v[i] = {r * std::cos(golden * i), r * std::sin(golden * i), z};
    }
    return v;
  }();
  return pts;
}

Form bisectional_form(const BackgroundMetric& bg, std::size_t pt) {
  // |xi|^2 = xi^H conj(G0) xi, so with conj(G0) = L L^H the columns of W = L^{-H}
  // form an orthonormal frame.
  Eigen::Matrix2cd G;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) G(i, j) = std::conj(bg.g0().at(pt, i, j));
  }
  Eigen::Matrix2cd L = G.llt().matrixL();
  Eigen::Matrix2cd W = L.adjoint().inverse();

  cplx Rw[2][2][2][2];
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 2; ++d) {
          cplx acc = 0.0;
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
              for (int k = 0; k < 2; ++k)
                for (int l = 0; l < 2; ++l) {
                  acc += bg.curvature(pt, i, j, k, l) * W(i, a) * std::conj(W(j, b)) * W(k, c) *
                         std::conj(W(l, d));
                }
          Rw[a][b][c][d] = acc;
        }

  const auto& sig = pauli();
  Form B{};
  for (int mu = 0; mu < 4; ++mu) {
    for (int nu = 0; nu < 4; ++nu) {
      cplx acc = 0.0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int c = 0; c < 2; ++c)
            for (int d = 0; d < 2; ++d) acc += Rw[a][b][c][d] * sig[mu](a, b) * sig[nu](c, d);
      B[mu][nu] = 0.25 * acc.real();
    }
  }
  return B;
}

// Certified lower bound of min a^T B b over s, t in S^2.
double cheap_lower_bound(const Form& B) {
  double bs = 0.0, bt = 0.0, frob = 0.0;
  for (int i = 1; i < 4; ++i) {
    bs += B[i][0] * B[i][0];
    bt += B[0][i] * B[0][i];
    for (int j = 1; j < 4; ++j) frob += B[i][j] * B[i][j];
  }
  return B[0][0] - std::sqrt(bs) - std::sqrt(bt) - std::sqrt(frob);
}

double minimize_form(const Form& B) {
  double best = std::numeric_limits<double>::infinity();
  std::array<double, 3> best_s{};
  for (const auto& s : fibonacci_sphere()) {
    double v = min_over_t(B, s, nullptr);
    if (v < best) {
      best = v;
      best_s = s;
    }
  }
  // Alternating exact minimization; each half-step can only decrease the value.
  std::array<double, 3> s = best_s, t{};
  for (int it = 0; it < 1000; ++it) {
    min_over_t(B, s, &t);
    std::array<double, 3> d{};
    for (int i = 0; i < 3; ++i) {
      d[i] = B[i + 1][0];
      for (int j = 0; j < 3; ++j) d[i] += B[i + 1][j + 1] * t[j];
    }
    s = normalized({-d[0], -d[1], -d[2]});
    double v = min_over_t(B, s, nullptr);
    if (v >= best - 1e-15 * (1.0 + std::abs(best))) {
      best = std::min(best, v);
      break;
    }
    best = v;
  }
  return best;
}

}  // namespace

double BackgroundMetric::min_bisectional_at(std::size_t pt) const {
  if (flat_) return 0.0;
  if (dim() == 1) {
    double g = g0_.at(pt, 0, 0).real();
    return curvature(pt, 0, 0, 0, 0).real() / (g * g);
  }
  return minimize_form(bisectional_form(*this, pt));
}

double bisectional_lower_bound(const BackgroundMetric& bg) {
  if (bg.is_flat()) return 0.0;
  const std::size_t P = bg.grid().size();
  double best = std::numeric_limits<double>::infinity();
  if (bg.dim() == 1) {
    for (std::size_t p = 0; p < P; ++p) best = std::min(best, bg.min_bisectional_at(p));
    return std::max(0.0, -best);
  }
  // Visit points by increasing lower bound and stop once no remaining point can
  // go below the current minimum.
  std::vector<Form> forms(P);
  std::vector<std::pair<double, std::size_t>> order(P);
  for (std::size_t p = 0; p < P; ++p) {
    forms[p] = bisectional_form(bg, p);
    order[p] = {cheap_lower_bound(forms[p]), p};
  }
  std::sort(order.begin(), order.end());
  for (const auto& [lb, p] : order) {
    if (lb >= best) break;
    best = std::min(best, minimize_form(forms[p]));
  }
  return std::max(0.0, -best);
}

MetricField assemble_metric(const BackgroundMetric& bg, const Spectrum& phi) {
  require_same_grid(bg.grid(), phi.grid, "assemble_metric");
  const GridSpec& grid = bg.grid();
  const int n = grid.complex_dim();
  ComplexMatrixField g = complex_hessian(phi);
  ComplexMatrixField inv(grid, n);
  std::vector<double> ratio(grid.size());
  double worst = std::numeric_limits<double>::infinity();
  std::size_t worst_at = 0;
  for (std::size_t p = 0; p < grid.size(); ++p) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) g.at(p, i, j) += bg.g0().at(p, i, j);
    }
    double lam = relative_min_eigenvalue(n, block(g, p), block(bg.g0(), p));
    if (lam < worst) {
      worst = lam;
      worst_at = p;
    }
    ratio[p] = det_of(n, block(g, p)) / bg.det_g0()[p];
    upper_inverse(n, block(g, p), &inv.at(p, 0, 0));
  }
  return MetricField{grid, std::move(g), std::move(inv), ScalarField(grid, std::move(ratio)), worst,
                     worst_at};
}

MetricField assemble_metric(const BackgroundMetric& bg, const ScalarField& phi) {
  return assemble_metric(bg, forward(phi));
}

MetricField metric_of_potential(const BackgroundMetric& bg, const ScalarField& phi) {
  MetricField m = assemble_metric(bg, phi);
  if (!(m.min_eigenvalue > 0.0)) {
    Coords x = bg.grid().coords(m.worst_point);
    throw PositivityError("omega_0 + i ddbar phi is not positive: eigenvalue " +
                              std::to_string(m.min_eigenvalue) + " at " +
                              describe(x, bg.grid().real_dims()),
                          m.worst_point, x, m.min_eigenvalue);
  }
  return m;
}

ScalarField trace_w_w0(const MetricField& m, const BackgroundMetric& bg) {
  require_same_grid(m.grid, bg.grid(), "trace_w_w0");
  const int n = bg.dim();
  std::vector<double> v(m.grid.size());
  for (std::size_t p = 0; p < v.size(); ++p) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) acc += (m.inverse_g.at(p, i, j) * bg.g0().at(p, i, j)).real();
    }
    v[p] = acc;
  }
  return ScalarField(m.grid, std::move(v));
}

ScalarField hermitian_grad_pairing(const std::vector<ComplexField>& du,
                                   const std::vector<ComplexField>& dv,
                                   const ComplexMatrixField& inverse) {
  const GridSpec& grid = inverse.grid();
  const int n = inverse.dim();
  if (static_cast<int>(du.size()) != n || static_cast<int>(dv.size()) != n) {
    throw Error("hermitian_grad_pairing: gradient has wrong number of components");
  }
  for (int i = 0; i < n; ++i) {
    require_same_grid(du[i].grid, grid, "hermitian_grad_pairing");
    require_same_grid(dv[i].grid, grid, "hermitian_grad_pairing");
  }
  std::vector<double> v(grid.size());
  for (std::size_t p = 0; p < v.size(); ++p) {
    cplx acc = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        acc += inverse.at(p, i, j) * du[i].values[p] * std::conj(dv[j].values[p]);
      }
    }
    v[p] = 2.0 * acc.real();
  }
  return ScalarField(grid, std::move(v));
}

ScalarField hermitian_grad_pairing(const ScalarField& u, const ScalarField& v,
                                   const ComplexMatrixField& inverse) {
  return hermitian_grad_pairing(complex_gradient(u), complex_gradient(v), inverse);
}

ScalarField grad_norm_sq(const std::vector<ComplexField>& grad,
                         const ComplexMatrixField& inverse) {
  return 0.5 * hermitian_grad_pairing(grad, grad, inverse);
}

ScalarField grad_norm_sq(const ScalarField& u, const ComplexMatrixField& inverse) {
  return grad_norm_sq(complex_gradient(u), inverse);
}

ScalarField laplacian(const Spectrum& u, const MetricField& m) {
  require_same_grid(u.grid, m.grid, "laplacian");
  ComplexMatrixField h = complex_hessian(u);
  const int n = m.grid.complex_dim();
  std::vector<double> v(m.grid.size());
  for (std::size_t p = 0; p < v.size(); ++p) {
    cplx acc = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) acc += m.inverse_g.at(p, i, j) * h.at(p, i, j);
    }
    v[p] = acc.real();
  }
  return ScalarField(m.grid, std::move(v));
}

ScalarField laplacian(const ScalarField& u, const MetricField& m) {
  return laplacian(forward(u), m);
}

ComplexMatrixField covariant_hessian_holo(const Spectrum& u, const BackgroundMetric& bg) {
  require_same_grid(u.grid, bg.grid(), "covariant_hessian_holo");
  ComplexMatrixField h = holomorphic_hessian(u);
  if (bg.is_flat()) return h;
  const int n = bg.dim();
  auto grad = complex_gradient(u);
  for (std::size_t p = 0; p < bg.grid().size(); ++p) {
    for (int k = 0; k < n; ++k) {
      for (int i = 0; i < n; ++i) {
        cplx acc = 0.0;
        for (int a = 0; a < n; ++a) acc += bg.christoffel(p, a, k, i) * grad[a].values[p];
        h.at(p, k, i) -= acc;
      }
    }
  }
  return h;
}

ComplexMatrixField covariant_hessian_holo(const ScalarField& u, const BackgroundMetric& bg) {
  return covariant_hessian_holo(forward(u), bg);
}

}  // namespace cma
