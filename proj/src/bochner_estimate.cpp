#include "cma/bochner_estimate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cma/spectral.hpp"

namespace cma {

namespace {

constexpr double pi = std::numbers::pi;

ScalarField from_values(const GridSpec& g, std::vector<double> v) {
  return ScalarField(g, std::move(v));
}

double wrap(double d) { return d - std::round(d); }

double torus_distance_sq(const GridSpec& g, const Coords& x, const Coords& x0) {
  double s = 0.0;
  for (int a = 0; a < g.real_dims(); ++a) {
    const double d = wrap(x[a] - x0[a]);
    s += d * d;
  }
  return s;
}

// g^{i jbar} g0^{k lbar} (A_{ki} conj(A_{lj}) + B_{k jbar} B_{i lbar}) at point p.
double hessian_contraction(const ComplexMatrixField& inv, const ComplexMatrixField& inv0,
                           const ComplexMatrixField& holo, const ComplexMatrixField& mixed,
                           std::size_t p) {
  const int n = inv.dim();
  cplx acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l)
          acc += inv.at(p, i, j) * inv0.at(p, k, l) *
                 (holo.at(p, k, i) * std::conj(holo.at(p, l, j)) +
                  mixed.at(p, k, j) * mixed.at(p, i, l));
  return acc.real();
}

struct Quintic {
  double lo, hi;
  double operator()(double s) const {
    if (s <= lo) return 0.0;
    if (s >= hi) return 1.0;
    const double t = (s - lo) / (hi - lo);
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
  }
};

double cutoff_formula(int dims, const Coords& x0, double r, double theta, const Coords& x) {
  const double sr = std::sin(0.75 * pi * r) / (pi * r);
  const Quintic ramp{0.25, sr * sr};
  double d2 = 0.0;
  for (int a = 0; a < dims; ++a) {
    const double s = std::sin(pi * (x[a] - x0[a]));
    d2 += s * s;
  }
  d2 /= pi * pi;
  return 1.0 - theta * ramp(d2 / (r * r));
}

ScalarField cutoff_field(const GridSpec& g, const Coords& x0, double r, double theta) {
  return ScalarField::generate(
      g, [&](const Coords& x) { return cutoff_formula(g.real_dims(), x0, r, theta, x); });
}

std::vector<double> ball_indicator(const GridSpec& g, const Coords& x0, double r) {
  std::vector<double> in(g.size());
  for (std::size_t p = 0; p < g.size(); ++p)
    in[p] = torus_distance_sq(g, g.coords(p), x0) < r * r ? 1.0 : 0.0;
  return in;
}

}  // namespace

double lambda_of(double K) {
  if (!(K >= 0.0)) throw Error("lambda_of: K must be non-negative");
  return 2.0 * K + 10.0;
}

ScalarField normalized_potential(const MASolution& sol) {
  const double inf = sol.phi.min();
  return sol.phi.map([inf](double v) { return v - inf; });
}

ScalarField H_field(const MASolution& sol, double lambda) {
  const auto& bg = *sol.problem.bg;
  const ScalarField Q = grad_norm_sq(sol.phi, bg.inverse_g0());
  const ScalarField tilde = normalized_potential(sol);
  std::vector<double> h(Q.size());
  for (std::size_t p = 0; p < h.size(); ++p) h[p] = std::exp(-lambda * tilde[p]) * Q[p];
  return from_values(Q.grid(), std::move(h));
}

BochnerTerms bochner_terms(const MASolution& sol) {
  const auto& bg = *sol.problem.bg;
  const GridSpec& g = bg.grid();
  const int n = bg.dim();
  const Spectrum s = forward(sol.phi);
  const MetricField m = metric_of_potential(bg, sol.phi);
  const auto& inv = m.inverse_g;
  const auto& inv0 = bg.inverse_g0();

  const auto grad = complex_gradient(s);
  const ScalarField Q = grad_norm_sq(grad, inv0);
  ScalarField lhs = laplacian(Q, m);
  ScalarField gradient = hermitian_grad_pairing(complex_gradient(sol.problem.F), grad, inv0);

  const ComplexMatrixField holo = covariant_hessian_holo(s, bg);
  const ComplexMatrixField mixed = complex_hessian(s);
  std::vector<double> hess(g.size()), curv(g.size(), 0.0);
  for (std::size_t p = 0; p < g.size(); ++p) {
    hess[p] = hessian_contraction(inv, inv0, holo, mixed, p);
    if (bg.is_flat()) continue;
    cplx V[2];
    for (int k = 0; k < n; ++k) {
      V[k] = 0.0;
      for (int q = 0; q < n; ++q) V[k] += inv0.at(p, k, q) * std::conj(grad[q].values[p]);
    }
    cplx acc = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
          for (int l = 0; l < n; ++l)
            acc += inv.at(p, i, j) * bg.curvature(p, i, j, k, l) * V[k] * std::conj(V[l]);
    curv[p] = acc.real();
  }
  return {std::move(lhs), std::move(gradient), from_values(g, std::move(hess)),
          from_values(g, std::move(curv))};
}

ScalarField bochner_residual(const MASolution& sol) {
  const BochnerTerms t = bochner_terms(sol);
  return t.lhs - (t.gradient + t.hessian + t.curvature);
}

double bochner_relative_residual(const MASolution& sol) {
  const BochnerTerms t = bochner_terms(sol);
  const double res = (t.lhs - (t.gradient + t.hessian + t.curvature)).max_abs();
  const double scale = t.lhs.max_abs();
  if (scale == 0.0) return res == 0.0 ? 0.0 : INFINITY;
  return res / scale;
}

DiffInequality diff_inequality(const MASolution& sol, double lambda) {
  const auto& bg = *sol.problem.bg;
  const int n = bg.dim();
  const double K = bg.K();
  const MetricField m = metric_of_potential(bg, sol.phi);
  const ScalarField H = H_field(sol, lambda);
  const ScalarField lap = laplacian(H, m);
  const ScalarField tr = trace_w_w0(m, bg);
  const ScalarField pair = hermitian_grad_pairing(sol.problem.F, sol.phi, bg.inverse_g0());
  const ScalarField tilde = normalized_potential(sol);

  std::vector<double> slack(H.size());
  for (std::size_t p = 0; p < slack.size(); ++p) {
    const double rhs = std::exp(-lambda * tilde[p]) * pair[p] +
                       (lambda - 2.0 * K) * H[p] * tr[p] - lambda * (n + 2) * H[p];
    slack[p] = lap[p] - rhs;
  }
  ScalarField sl = from_values(H.grid(), std::move(slack));
  const double scale = lap.max_abs();
  const double rel = scale > 0.0 ? sl.min() / scale : 0.0;
  return {std::move(sl), scale, rel};
}

ScalarField diff_inequality_slack(const MASolution& sol, double lambda) {
  return diff_inequality(sol, lambda).slack;
}

double cutoff_theta(int n, double r, double C0) {
  if (n < 1 || !(r > 0.0) || !(C0 > 0.0)) throw Error("cutoff_theta: invalid arguments");
  return std::min(1.0, r * r) / (10.0 * n * C0);
}

double eta_at(const CutoffSpec& cut, const Coords& x) {
  return cutoff_formula(cut.eta.grid().real_dims(), cut.x0, cut.r, cut.theta, x);
}

Coords locate_max(const ScalarField& u) {
  const GridSpec& g = u.grid();
  const int d = g.real_dims();
  const Spectrum s = forward(u);
  Coords x = g.coords(u.argmax());
  double best = point_eval(s, x);
  // Compass search with a halving step.
  for (double step = 0.5 * g.spacing(); step > 1e-10;) {
    bool moved = false;
    for (int a = 0; a < d; ++a)
      for (double sign : {1.0, -1.0}) {
        Coords y = x;
        y[a] += sign * step;
        const double v = point_eval(s, y);
        if (v > best) {
          best = v;
          x = y;
          moved = true;
        }
      }
    if (!moved) step *= 0.5;
  }
  for (int a = 0; a < d; ++a) x[a] -= std::floor(x[a]);
  return x;
}

CutoffCertificate certify_cutoff(const CutoffSpec& cut, const BackgroundMetric& bg) {
  const int n = bg.dim();
  const auto& inv0 = bg.inverse_g0();
  const Spectrum s = forward(cut.eta);
  const ScalarField grad_sq = grad_norm_sq(complex_gradient(s), inv0);
  const ComplexMatrixField holo = covariant_hessian_holo(s, bg);
  const ComplexMatrixField mixed = complex_hessian(s);
  double hess = 0.0;
  for (std::size_t p = 0; p < cut.eta.size(); ++p) {
    cplx acc = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
          for (int l = 0; l < n; ++l)
            acc += inv0.at(p, i, j) * inv0.at(p, k, l) *
                   (holo.at(p, i, k) * std::conj(holo.at(p, j, l)) +
                    mixed.at(p, i, l) * mixed.at(p, k, j));
    hess = std::max(hess, std::sqrt(std::max(0.0, acc.real())));
  }
  CutoffCertificate c{};
  c.eta_min = cut.eta.min();
  c.eta_max = cut.eta.max();
  c.grad_sq_max = grad_sq.max();
  c.hess_max = hess;
  c.grad_sq_limit = cut.C0 * cut.theta * cut.theta / (cut.r * cut.r);
  c.hess_limit = cut.C0 * cut.theta / (cut.r * cut.r);
  c.ok = c.eta_min >= 1.0 - cut.theta - 1e-14 && c.eta_max <= 1.0 + 1e-14 &&
         c.grad_sq_max <= c.grad_sq_limit && c.hess_max <= c.hess_limit;
  return c;
}

CutoffSpec build_cutoff(const Coords& x0, double r, double C0, const BackgroundMetric& bg,
                        double alpha) {
  if (!(r > 0.0) || r > 0.25) throw Error("build_cutoff: radius must lie in (0, 0.25]");
  if (!(C0 >= 1.0)) throw Error("build_cutoff: C0 must be >= 1");
  if (!(alpha >= 1.0)) throw Error("build_cutoff: alpha must be >= 1");
  const int n = bg.dim();
  for (int attempt = 0; attempt < 40; ++attempt, C0 *= 2.0) {
    const double theta = cutoff_theta(n, r, C0);
    CutoffSpec cut{x0, r, C0, theta, cutoff_field(bg.grid(), x0, r, theta), alpha};
    if (certify_cutoff(cut, bg).ok) return cut;
  }
  throw Error("build_cutoff: derivative bounds not met for any C0");
}

std::vector<Coords> sphere_samples(int n) {
  std::vector<Coords> pts;
  pts.reserve(256);
  if (n == 1) {
    for (int k = 0; k < 256; ++k) {
      const double t = 2.0 * pi * k / 256.0;
      pts.push_back({std::cos(t), std::sin(t), 0.0, 0.0});
    }
    return pts;
  }
  for (int e = 0; e < 4; ++e) {
    const double eta = (e + 0.5) * pi / 8.0;
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b) {
        const double xi1 = 2.0 * pi * a / 8.0;
        const double xi2 = 2.0 * pi * (b + 0.5 * (e % 2)) / 8.0;
        pts.push_back({std::cos(eta) * std::cos(xi1), std::cos(eta) * std::sin(xi1),
                       std::sin(eta) * std::cos(xi2), std::sin(eta) * std::sin(xi2)});
      }
  }
  return pts;
}

ABPReport abp_check(const MASolution& sol, const CutoffSpec& cut, double lambda) {
  const auto& bg = *sol.problem.bg;
  const GridSpec& g = bg.grid();
  require_same_grid(g, cut.eta.grid(), "abp_check");
  const int n = bg.dim();
  const double alpha = cut.alpha;
  const ScalarField& F = sol.problem.F;
  const ScalarField& det0 = bg.det_g0();
  const ScalarField H = H_field(sol, lambda);
  const ScalarField tilde = normalized_potential(sol);
  const ScalarField gradF_sq = grad_norm_sq(F, bg.inverse_g0());
  const std::vector<double> in = ball_indicator(g, cut.x0, cut.r);

  std::vector<double> f(g.size());
  for (std::size_t p = 0; p < f.size(); ++p) f[p] = cut.eta[p] * std::pow(H[p], alpha);

  const Spectrum hs = forward(H);
  const double H_x0 = std::max(0.0, point_eval(hs, cut.x0));
  ABPReport rep{};
  rep.sup_inner = eta_at(cut, cut.x0) * std::pow(H_x0, alpha);
  for (std::size_t p = 0; p < f.size(); ++p)
    if (in[p] > 0.0) rep.sup_inner = std::max(rep.sup_inner, f[p]);

  rep.sup_boundary = 0.0;
  for (const Coords& u : sphere_samples(n)) {
    Coords x{};
    for (int a = 0; a < g.real_dims(); ++a) x[a] = cut.x0[a] + cut.r * u[a];
    const double h = std::max(0.0, point_eval(hs, x));
    rep.sup_boundary = std::max(rep.sup_boundary, eta_at(cut, x) * std::pow(h, alpha));
  }

  const int two_n = 2 * n;
  double integral = 0.0, int_H = 0.0, int_gradF = 0.0;
  for (std::size_t p = 0; p < f.size(); ++p) {
    if (in[p] == 0.0) continue;
    const double gF = std::sqrt(std::max(0.0, gradF_sq[p]));
    const double first = 2.0 * alpha * cut.eta[p] * std::pow(H[p], alpha - 0.5) *
                         std::exp(-0.5 * lambda * tilde[p]) * gF;
    const double second = lambda * alpha * (n + 2) * std::pow(H[p], alpha);
    const double w = std::exp(2.0 * F[p]) * det0[p];
    integral += std::pow(first + second, two_n) * w;
    int_H += H[p] * det0[p];
    int_gradF += std::pow(gF, two_n) * w;
  }
  const double cells = static_cast<double>(g.size());
  integral /= cells;
  int_H /= cells;
  int_gradF /= cells;
  rep.integral_term = cut.r * std::pow(integral, 1.0 / two_n);
  rep.implied_constant =
      rep.integral_term > 0.0 ? std::max(0.0, rep.sup_inner - rep.sup_boundary) / rep.integral_term
                              : 0.0;

  rep.M = std::max(H.max(), H_x0);
  rep.M_alpha = std::pow(rep.M, alpha);
  rep.bootstrap_A = lambda * alpha * (n + 2) * std::exp(F.max() / n) * std::pow(int_H, 1.0 / two_n);
  rep.bootstrap_B = 2.0 * alpha * std::pow(int_gradF, 1.0 / two_n);
  rep.bootstrap_beta = std::min(0.5, 1.0 / two_n);
  const double C = rep.implied_constant * cut.r * std::max(rep.bootstrap_A, rep.bootstrap_B);
  rep.bootstrap_bound = std::max(1.0, std::pow(2.0 * C / cut.theta, 1.0 / rep.bootstrap_beta));
  rep.bootstrap_ok = rep.M <= rep.bootstrap_bound * (1.0 + 1e-9);
  return rep;
}

IbpTerms ibp_identity_terms(const MASolution& sol, double lambda) {
  const auto& bg = *sol.problem.bg;
  const int n = bg.dim();
  const MetricField m = metric_of_potential(bg, sol.phi);
  const ScalarField tilde = normalized_potential(sol);
  const auto grad = complex_gradient(sol.phi);
  const auto& g0 = bg.g0();
  const ScalarField& det0 = bg.det_g0();

  double lhs = 0.0, rhs = 0.0;
  for (std::size_t p = 0; p < tilde.size(); ++p) {
    const double E = std::exp(-lambda * tilde[p]);
    lhs += (E - 1.0) * (m.det_ratio[p] - 1.0) * det0[p];
    cplx P[4], G[4], G0[4];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        P[i * n + j] = grad[i].values[p] * std::conj(grad[j].values[p]);
        G[i * n + j] = m.g.at(p, i, j);
        G0[i * n + j] = g0.at(p, i, j);
      }
    double D = 0.0;
    if (n == 1) {
      D = P[0].real();
    } else {
      D = mixed_discriminant(2, P, G) + mixed_discriminant(2, P, G0);
    }
    rhs += E * D;
  }
  const double cells = static_cast<double>(tilde.size());
  return {lhs / cells, lambda * rhs / cells};
}

double ibp_identity_residual(const MASolution& sol, double lambda) {
  const IbpTerms t = ibp_identity_terms(sol, lambda);
  return std::abs(t.lhs - t.rhs) / (std::abs(t.lhs) + std::abs(t.rhs) + 1.0);
}

L1Bound l1_H_bound(const MASolution& sol, double lambda) {
  const auto& bg = *sol.problem.bg;
  const ScalarField H = H_field(sol, lambda);
  const double mass = integrate(sol.problem.F.map([](double v) { return std::exp(v); }),
                                bg.det_g0());
  return {integrate(H, bg.det_g0()), bg.dim() * (mass + bg.volume()) / lambda};
}

EstimateReport estimate_report(const MASolution& sol) {
  const auto& bg = *sol.problem.bg;
  const int n = bg.dim();
  const ScalarField& F = sol.problem.F;
  EstimateReport r{};
  r.K = bg.K();
  r.lambda = lambda_of(r.K);
  r.sup_F = F.max();
  const ScalarField gradF = grad_norm_sq(F, bg.inverse_g0()).map(
      [](double v) { return std::sqrt(std::max(0.0, v)); });
  const ScalarField w = F.map([](double v) { return std::exp(2.0 * v); }) * bg.det_g0();
  r.wgrad_F_norm = lp_norm(gradF, 2.0 * n, w);
  const ScalarField H = H_field(sol, r.lambda);
  r.sup_H = H.max();
  r.inf_phi = mean_zero_gauge(sol.phi, bg).min();
  r.c_emp = r.sup_H;
  r.bochner_residual_max = bochner_relative_residual(sol);
  r.diff_ineq_min_slack = diff_inequality(sol, r.lambda).min_relative;

  const ScalarField Q = grad_norm_sq(sol.phi, bg.inverse_g0());
  const ScalarField tilde = normalized_potential(sol);
  double excess = -INFINITY;
  for (std::size_t p = 0; p < Q.size(); ++p)
    excess = std::max(excess, Q[p] - r.c_emp * std::exp(r.lambda * tilde[p]));
  r.certificate_excess = r.c_emp > 0.0 ? excess / r.c_emp : excess;
  r.certificate_ok = r.certificate_excess <= 1e-12;
  return r;
}

nlohmann::json to_json(const EstimateReport& r) {
  return {{"lambda", r.lambda},
          {"K", r.K},
          {"sup_F", r.sup_F},
          {"wgrad_F_norm", r.wgrad_F_norm},
          {"sup_H", r.sup_H},
          {"inf_phi", r.inf_phi},
          {"c_emp", r.c_emp},
          {"bochner_residual_max", r.bochner_residual_max},
          {"diff_ineq_min_slack", r.diff_ineq_min_slack},
          {"certificate_excess", r.certificate_excess},
          {"certificate_ok", r.certificate_ok}};
}

nlohmann::json to_json(const ABPReport& r) {
  return {{"sup_inner", r.sup_inner},
          {"sup_boundary", r.sup_boundary},
          {"integral_term", r.integral_term},
          {"implied_constant", r.implied_constant},
          {"M", r.M},
          {"M_alpha", r.M_alpha},
          {"bootstrap_A", r.bootstrap_A},
          {"bootstrap_B", r.bootstrap_B},
          {"bootstrap_beta", r.bootstrap_beta},
          {"bootstrap_bound", r.bootstrap_bound},
          {"bootstrap_ok", r.bootstrap_ok}};
}

nlohmann::json to_json(const CutoffSpec& c, const CutoffCertificate& cert) {
  const int d = c.eta.grid().real_dims();
  return {{"x0", std::vector<double>(c.x0.begin(), c.x0.begin() + d)},
          {"r", c.r},
          {"C0", c.C0},
          {"theta", c.theta},
          {"alpha", c.alpha},
          {"eta_min", cert.eta_min},
          {"eta_max", cert.eta_max},
          {"grad_sq_max", cert.grad_sq_max},
          {"grad_sq_limit", cert.grad_sq_limit},
          {"hess_max", cert.hess_max},
          {"hess_limit", cert.hess_limit},
          {"ok", cert.ok}};
}

}  // namespace cma
