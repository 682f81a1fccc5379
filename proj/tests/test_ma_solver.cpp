#include <doctest.h>

#include "cma/ma_solver.hpp"
#include "cma/spectral.hpp"
#include "oracles.hpp"

using namespace cma;
using oracle::pi;
using oracle::two_pi;

namespace {

BackgroundPtr flat(int n, int N) {
  return std::make_shared<const BackgroundMetric>(make_flat_background(GridSpec(n, N)));
}

BackgroundPtr perturbed(int n, int N) {
  GridSpec g(n, N);
  auto psi = ScalarField::generate(g, [n](const Coords& x) {
    double v = 0.02 * std::cos(two_pi * x[0]) + 0.01 * std::sin(two_pi * (x[0] + x[1]));
    if (n == 2) v += 0.015 * std::sin(two_pi * x[2]) * std::cos(two_pi * x[1]) + 0.01 * std::cos(two_pi * x[3]);
    return v;
  });
  return std::make_shared<const BackgroundMetric>(make_perturbed_background(g, psi));
}

ScalarField log_of(const ScalarField& u) {
  return u.map([](double v) { return std::log(v); });
}

ScalarField closed_form_phi(const GridSpec& g, double eps, int axis) {
  auto phi = ScalarField::generate(g, [&](const Coords& x) {
    return -(eps / (pi * pi)) * std::sin(two_pi * x[axis]);
  });
  return phi + (-integrate(phi));
}

}  // namespace

TEST_CASE("normalize_density examples") {
  auto bg = flat(1, 32);
  GridSpec g = bg->grid();
  auto F = normalize_density(ScalarField(g, 5.0), *bg);
  CHECK(F.max_abs() < 1e-14);

  auto s = ScalarField::generate(g, [](const Coords& x) { return std::sin(two_pi * x[0]); });
  auto Fs = normalize_density(s, *bg);
  // mean of e^{sin} by an independent quadrature: I0(1) series
  double i0 = 0.0, term = 1.0;
  for (int k = 0; k < 30; ++k) {
    if (k > 0) term *= 0.25 / (k * k);
    i0 += term;
  }
  CHECK(Fs[0] - s[0] == doctest::Approx(-std::log(i0)).epsilon(1e-13));
  CHECK(integrate(Fs.map([](double v) { return std::exp(v); })) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(sup_distance(normalize_density(Fs, *bg), Fs) < 1e-14);
}

TEST_CASE("normalize_density on a perturbed background integrates against det g0 (property)") {
  oracle::Rng rng(61);
  auto bg = perturbed(2, 8);
  for (int trial = 0; trial < 3; ++trial) {
    auto raw = ScalarField::generate(bg->grid(), oracle::random_trig(rng, 4, 2, 5, 2.0)) + 40.0;
    auto F = normalize_density(raw, *bg);
    double mass = integrate(F.map([](double v) { return std::exp(v); }), bg->det_g0());
    CHECK(std::abs(mass - bg->volume()) <= 1e-13 * bg->volume());
    CHECK_NOTHROW(MAProblem(bg, F));
  }
}

TEST_CASE("MAProblem enforces compatibility") {
  auto bg = flat(1, 16);
  CHECK_THROWS_AS(MAProblem(bg, ScalarField(bg->grid(), 0.01)), IncompatibleDensity);
  CHECK_THROWS_AS(MAProblem(bg, ScalarField(GridSpec(1, 32), 0.0)), GridMismatch);
  MAProblem p(bg, ScalarField(bg->grid(), 0.0));
  CHECK(p.newton_tol == 1e-10);
  CHECK(p.max_newton_iters == 50);
  CHECK(p.continuation_steps == 8);
}

TEST_CASE("solve_linear_n1 examples") {
  auto bg = flat(1, 64);
  GridSpec g = bg->grid();
  auto zero = solve_linear_n1(MAProblem(bg, ScalarField(g, 0.0)));
  CHECK(zero.phi.max_abs() == 0.0);

  for (int axis = 0; axis < 2; ++axis) {
    auto ef = ScalarField::generate(g, [&](const Coords& x) { return 1.0 + 0.3 * std::sin(two_pi * x[axis]); });
    auto sol = solve_linear_n1(MAProblem(bg, normalize_density(log_of(ef), *bg)));
    CHECK(sup_distance(sol.phi, closed_form_phi(g, 0.3, axis)) <= 1e-12);
    CHECK(sol.residual_sup <= 1e-12);
    CHECK(std::abs(integrate(sol.phi)) <= 1e-15);
    CHECK(sol.min_eigen_omega == doctest::Approx(0.7).epsilon(1e-10));
    CHECK(sol.inf_phi == doctest::Approx(sol.phi.min()));
  }

  CHECK_THROWS_AS(solve_linear_n1(MAProblem(flat(2, 8), ScalarField(GridSpec(2, 8), 0.0))), Error);
  MAProblem bad(bg, ScalarField(g, 0.0));
  bad.F = ScalarField(g, 0.1);
  CHECK_THROWS_AS(solve_linear_n1(bad), IncompatibleDensity);
}

TEST_CASE("manufactured examples") {
  auto bg1 = flat(1, 32);
  auto p0 = manufactured(bg1, ScalarField(bg1->grid(), 0.0));
  CHECK(p0.F.max_abs() < 1e-15);

  auto phi = closed_form_phi(bg1->grid(), 0.3, 0);
  auto p1 = manufactured(bg1, phi);
  double err = 0.0;
  for (std::size_t p = 0; p < p1.F.size(); ++p) {
    err = std::max(err, std::abs(p1.F[p] - std::log(1.0 + 0.3 * std::sin(two_pi * bg1->grid().coords(p)[0]))));
  }
  CHECK(err < 1e-12);

  auto bg2 = flat(2, 16);
  GridSpec g2 = bg2->grid();
  auto star = ScalarField::generate(g2, [](const Coords& x) {
    return 0.02 * std::sin(two_pi * x[0]) * std::cos(two_pi * x[3]);
  });
  auto p2 = manufactured(bg2, star);
  // Pointwise 2x2 determinant from the symbolic second derivatives.
  double derr = 0.0;
  for (std::size_t p = 0; p < g2.size(); ++p) {
    auto x = g2.coords(p);
    double s = std::sin(two_pi * x[0]), c = std::cos(two_pi * x[0]);
    double sy = std::sin(two_pi * x[3]), cy = std::cos(two_pi * x[3]);
    double a = 0.02 * two_pi * two_pi;
    cplx g11 = 1.0 - 0.25 * a * s * cy;
    cplx g22 = 1.0 - 0.25 * a * s * cy;
    // d_{z1} d_{zbar2} = (1/4)(D_x1 - i D_y1)(D_x2 + i D_y2); only D_x1 D_y2 survives.
    cplx g12 = cplx(0.0, 0.25) * (-a * c * sy);
    double det = (g11 * g22 - g12 * std::conj(g12)).real();
    derr = std::max(derr, std::abs(p2.F[p] - std::log(det)));
  }
  CHECK(derr < 1e-12);
  double mass = integrate(p2.F.map([](double v) { return std::exp(v); }));
  CHECK(std::abs(mass - 1.0) <= 1e-12);

  auto bad = ScalarField::generate(bg1->grid(), [](const Coords& x) { return -(2.0 / (pi * pi)) * std::sin(two_pi * x[0]); });
  CHECK_THROWS_AS(manufactured(bg1, bad), PositivityError);
}

TEST_CASE("Newton: F = 0 is an exact root") {
  auto bg = flat(2, 8);
  auto sol = solve_newton(MAProblem(bg, ScalarField(bg->grid(), 0.0)));
  CHECK(sol.iterations <= 1);
  CHECK(sol.phi.max_abs() == 0.0);
  CHECK(sol.residual_sup == 0.0);
}

TEST_CASE("Newton matches the linear n=1 path") {
  auto bg = flat(1, 64);
  auto ef = ScalarField::generate(bg->grid(), [](const Coords& x) { return 1.0 + 0.3 * std::sin(two_pi * x[0]); });
  MAProblem prob(bg, normalize_density(log_of(ef), *bg));
  auto lin = solve_linear_n1(prob);
  auto nw = solve_newton(prob);
  CHECK(sup_distance(lin.phi, nw.phi) <= 1e-10);
  CHECK(nw.residual_sup <= prob.newton_tol);
  CHECK(!nw.log.empty());
}

TEST_CASE("Newton recovers the n=2 manufactured solution") {
  for (bool pert : {false, true}) {
    auto bg = pert ? perturbed(2, 16) : flat(2, 16);
    auto star = ScalarField::generate(bg->grid(), [](const Coords& x) {
      return 0.02 * std::sin(two_pi * x[0]) * std::cos(two_pi * x[3]);
    });
    auto prob = manufactured(bg, star);
    auto sol = solve_newton(prob);
    CHECK(sup_distance(sol.phi, mean_zero_gauge(star, *bg)) <= 1e-6);
    CHECK(sol.iterations <= 20);
    CHECK(sol.residual_sup <= 1e-10);
    CHECK(std::abs(integrate(sol.phi, bg->det_g0())) <= 1e-12);
    CHECK(sol.min_eigen_omega > 0.0);

    // Monotone residual in the iteration log.
    for (std::size_t i = 1; i < sol.log.size(); ++i) {
      if (sol.log[i].s == sol.log[i - 1].s) CHECK(sol.log[i].residual_sup <= sol.log[i - 1].residual_sup);
    }
    // Volume conservation: int det g = int e^F det g0.
    auto m = metric_of_potential(*bg, sol.phi);
    double lhs = integrate(m.det_ratio, bg->det_g0());
    double rhs = integrate(prob.F.map([](double v) { return std::exp(v); }), bg->det_g0());
    CHECK(std::abs(lhs - rhs) <= 1e-10);
    CHECK(lhs == doctest::Approx(bg->volume()).epsilon(1e-10));
  }
}

TEST_CASE("gauge invariance of the Newton solve") {
  auto bg = perturbed(1, 32);
  auto F = normalize_density(ScalarField::generate(bg->grid(), [](const Coords& x) {
    return 0.4 * std::sin(two_pi * x[0]) * std::cos(two_pi * x[1]);
  }), *bg);
  MAProblem prob(bg, F);
  auto a = solve_newton(prob);
  ScalarField shifted = a.phi + 3.25;
  auto b = solve_newton(prob, &shifted);
  CHECK(sup_distance(a.phi, b.phi) <= 1e-10);
  CHECK(b.iterations <= 1);
}

TEST_CASE("continuation handles a strongly oscillating density") {
  auto bg = flat(1, 32);
  auto F = normalize_density(ScalarField::generate(bg->grid(), [](const Coords& x) {
    return 3.0 * std::sin(two_pi * x[0]) * std::sin(two_pi * x[1]);
  }), *bg);
  MAProblem prob(bg, F);
  auto nw = solve_newton(prob);
  auto lin = solve_linear_n1(prob);
  CHECK(nw.residual_sup <= 1e-10);
  CHECK(sup_distance(nw.phi, lin.phi) <= 1e-9);
}

TEST_CASE("grid refinement consistency on analytic data") {
  std::vector<ScalarField> sols;
  for (int N : {8, 16, 32}) {
    auto bg = flat(1, N);
    auto F = normalize_density(ScalarField::generate(bg->grid(), [](const Coords& x) {
      return 0.5 * std::sin(two_pi * x[0]) * std::cos(two_pi * x[1]) + 0.3 * std::cos(two_pi * x[1]);
    }), *bg);
    sols.push_back(solve(MAProblem(bg, F)).phi);
  }
  auto coarse_gap = [](const ScalarField& a, const ScalarField& b) {
    // compare on the coarse grid points of a
    double m = 0.0;
    int r = b.grid().points_per_axis() / a.grid().points_per_axis();
    for (std::size_t p = 0; p < a.size(); ++p) {
      auto i = a.grid().unflatten(p);
      for (auto& v : i) v *= r;
      m = std::max(m, std::abs(a[p] - b[b.grid().flatten(i)]));
    }
    return m;
  };
  double d1 = coarse_gap(sols[0], sols[1]);
  double d2 = coarse_gap(sols[1], sols[2]);
  MESSAGE("refinement gaps: " << d1 << " " << d2);
  CHECK(d1 / std::max(d2, 1e-300) > 100.0);
}

TEST_CASE("solver errors report their kind") {
  auto bg = flat(1, 16);
  auto F = normalize_density(ScalarField::generate(bg->grid(), [](const Coords& x) {
    return 1.5 * std::sin(two_pi * x[0]);
  }), *bg);
  MAProblem prob(bg, F);
  prob.max_newton_iters = 1;
  prob.continuation_steps = 1;
  try {
    solve_newton(prob);
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(e.kind() == SolverError::Kind::MaxIterations);
    CHECK(std::string(e.what()).find("MaxIterations") != std::string::npos);
    CHECK(e.last().residual_sup > 0.0);
  }
  CHECK(std::string(to_string(SolverError::Kind::PositivityLoss)) == "PositivityLoss");
  CHECK(std::string(to_string(SolverError::Kind::LinearSolveStagnation)) == "LinearSolveStagnation");
}

TEST_CASE("Newton stops early when the residual stagnates on under-resolved data") {
  // A bump narrower than the grid spacing puts energy in the Nyquist modes, which the
  // mixed second derivatives cannot see; the discrete equation then has a residual floor.
  auto bg = flat(2, 16);
  auto F = normalize_density(ScalarField::generate(bg->grid(), [](const Coords& x) {
    double d2 = 0.0;
    for (int a = 0; a < 4; ++a) d2 += std::pow(std::sin(pi * (x[a] - 0.5)) / pi, 2);
    return std::exp(-d2 / 0.0025);
  }), *bg);
  try {
    solve(MAProblem(bg, F));
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(e.kind() == SolverError::Kind::MaxIterations);
    CHECK(std::string(e.what()).find("stagnated") != std::string::npos);
    CHECK(e.last().iter < 50);
    CHECK(e.last().residual_sup > 1e-10);
    CHECK(e.last().residual_sup < 1e-4);
  }
}
