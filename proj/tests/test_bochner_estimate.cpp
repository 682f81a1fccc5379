#include <doctest.h>

#include "cma/bochner_estimate.hpp"
#include "cma/spectral.hpp"
#include "oracles.hpp"

using namespace cma;
using oracle::pi;
using oracle::two_pi;

namespace {

constexpr double eps = 0.3;

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

MASolution sine_instance(int N, double e = eps) {
  auto bg = flat(1, N);
  auto F = ScalarField::generate(bg->grid(), [e](const Coords& x) {
    return std::log1p(e * std::sin(two_pi * x[0]));
  });
  return solve(MAProblem(bg, F));
}

MASolution zero_instance(int n, int N) {
  auto bg = flat(n, N);
  return solve(MAProblem(bg, ScalarField(bg->grid(), 0.0)));
}

// Closed-form data of the sine instance: phi = -(eps/pi^2) sin(2 pi x).
double phi_exact(double x) { return -(eps / (pi * pi)) * std::sin(two_pi * x); }
double H_exact(double x) {
  const double c = std::cos(two_pi * x);
  return std::exp(-10.0 * (phi_exact(x) + eps / (pi * pi))) * (eps * eps / (pi * pi)) * c * c;
}

MASolution random_instance(oracle::Rng& rng, bool pert, int N) {
  auto bg = pert ? perturbed(1, N) : flat(1, N);
  auto raw = ScalarField::generate(bg->grid(), oracle::random_trig(rng, 2, 2, 4, 0.15));
  return solve(MAProblem(bg, normalize_density(raw, *bg)));
}

}  // namespace

TEST_CASE("lambda_of examples") {
  CHECK(lambda_of(0.0) == 10.0);
  CHECK(lambda_of(2.0) == 14.0);
  CHECK(lambda_of(0.5) == 11.0);
  CHECK_THROWS_AS(lambda_of(-1e-3), Error);
}

TEST_CASE("phi = 0 makes every diagnostic vanish") {
  for (int n : {1, 2}) {
    const auto sol = zero_instance(n, n == 1 ? 32 : 8);
    CHECK(H_field(sol, 10.0).max_abs() == 0.0);
    CHECK(bochner_residual(sol).max_abs() == 0.0);
    CHECK(diff_inequality_slack(sol, 10.0).max_abs() == 0.0);
    CHECK(ibp_identity_residual(sol, 10.0) == 0.0);
    const auto l1 = l1_H_bound(sol, 10.0);
    CHECK(l1.value == 0.0);
    CHECK(l1.bound > 0.0);
    const auto rep = estimate_report(sol);
    CHECK(rep.c_emp == 0.0);
    CHECK(rep.certificate_ok);
    const auto cut = build_cutoff(Coords{0.5, 0.5, 0.5, 0.5}, 0.25, 4.0, *sol.problem.bg);
    const auto abp = abp_check(sol, cut, 10.0);
    CHECK(abp.sup_inner == 0.0);
    CHECK(abp.sup_boundary == 0.0);
    CHECK(abp.integral_term == 0.0);
    CHECK(abp.implied_constant == 0.0);
  }
}

TEST_CASE("H on the sine instance matches the closed form") {
  const auto sol = sine_instance(64);
  const auto H = H_field(sol, 10.0);
  double err = 0.0;
  for (std::size_t p = 0; p < H.size(); ++p)
    err = std::max(err, std::abs(H[p] - H_exact(H.grid().coords(p)[0])));
  CHECK(err <= 1e-10);

  // Grid sup against a 10x finer interpolation and the closed form on that grid.
  const auto fine = resample(H, 640);
  double fine_exact = 0.0;
  for (int i = 0; i < 640; ++i) fine_exact = std::max(fine_exact, H_exact(i / 640.0));
  CHECK(std::abs(fine.max() - fine_exact) <= 1e-9);
  CHECK(H.max() <= fine.max() + 1e-14);
  CHECK(std::abs(H.max() - fine.max()) <= 1e-2 * fine.max());

  MASolution shifted = sol;
  shifted.phi = sol.phi + 3.5;
  CHECK(sup_distance(H_field(shifted, 10.0), H) <= 1e-12);
}

TEST_CASE("Bochner terms on the sine instance match the closed form") {
  const auto sol = sine_instance(64);
  const auto t = bochner_terms(sol);
  const auto& g = sol.phi.grid();
  double worst = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    const double x = g.coords(p)[0];
    const double s = std::sin(two_pi * x), c = std::cos(two_pi * x);
    const double det = 1.0 + eps * s;
    worst = std::max(worst, std::abs(t.lhs[p] + 2.0 * eps * eps * std::cos(2.0 * two_pi * x) / det));
    worst = std::max(worst, std::abs(t.gradient[p] + 2.0 * eps * eps * c * c / det));
    worst = std::max(worst, std::abs(t.hessian[p] - 2.0 * eps * eps * s * s / det));
    worst = std::max(worst, std::abs(t.curvature[p]));
  }
  CHECK(worst <= 1e-10);
  CHECK(bochner_relative_residual(sol) <= 1e-8);
}

TEST_CASE("Bochner residual decays spectrally on analytic data") {
  auto rel = [](int N) {
    auto bg = flat(1, N);
    auto F = ScalarField::generate(bg->grid(), [](const Coords& x) {
      return std::log1p(0.8 * std::sin(two_pi * x[0]));
    });
    return bochner_relative_residual(solve(MAProblem(bg, F)));
  };
  const double r32 = rel(32), r64 = rel(64);
  MESSAGE("relative residual N=32: " << r32 << ", N=64: " << r64);
  CHECK(r64 <= 1e-2 * r32);
  CHECK(r64 <= 1e-8);
}

TEST_CASE("Bochner identity with background curvature") {
  auto bg = perturbed(1, 64);
  auto raw = ScalarField::generate(bg->grid(), [](const Coords& x) {
    return 0.4 * std::sin(two_pi * x[0]) + 0.2 * std::cos(two_pi * (x[0] - x[1]));
  });
  const auto sol = solve(MAProblem(bg, normalize_density(raw, *bg)));
  const auto t = bochner_terms(sol);
  CHECK(t.curvature.max_abs() >= 1e-3 * t.lhs.max_abs());
  CHECK(bochner_relative_residual(sol) <= 1e-8);
  CHECK(bg->K() > 0.0);
  CHECK(diff_inequality(sol, lambda_of(bg->K())).min_relative >= -1e-6);
}

TEST_CASE("n=2 perturbed instance: Bochner identity, inequality, integral identity") {
  auto bg = perturbed(2, 32);
  auto phi_star = ScalarField::generate(bg->grid(), [](const Coords& x) {
    return 0.02 * std::sin(two_pi * x[0]) * std::cos(two_pi * x[3]) +
           0.01 * std::cos(two_pi * (x[1] + x[2]));
  });
  const auto sol = solve_newton(manufactured(bg, phi_star));
  const double lambda = lambda_of(bg->K());
  CHECK(bochner_relative_residual(sol) <= 1e-4);
  CHECK(diff_inequality(sol, lambda).min_relative >= -1e-6);
  CHECK(ibp_identity_residual(sol, lambda) <= 1e-8);
  const auto l1 = l1_H_bound(sol, lambda);
  CHECK(l1.value <= l1.bound);
}

TEST_CASE("differential inequality on the sine instance") {
  const auto sol = sine_instance(64);
  const auto d = diff_inequality(sol, 10.0);
  CHECK(d.max_abs_lap_H > 0.0);
  CHECK(d.min_relative >= -1e-8);
}

TEST_CASE("random n=1 instances satisfy every pointwise and integral check (property)") {
  oracle::Rng rng(907);
  for (int trial = 0; trial < 6; ++trial) {
    const bool pert = trial % 2 == 1;
    const auto sol = random_instance(rng, pert, 48);
    const double lambda = lambda_of(sol.problem.bg->K());
    CAPTURE(trial);
    CHECK(bochner_relative_residual(sol) <= 1e-8);
    CHECK(diff_inequality(sol, lambda).min_relative >= -1e-6);
    CHECK(ibp_identity_residual(sol, lambda) <= 1e-8);
    const auto l1 = l1_H_bound(sol, lambda);
    CHECK(l1.value <= l1.bound);
    CHECK(estimate_report(sol).certificate_ok);
  }
}

TEST_CASE("cutoff theta examples") {
  CHECK(cutoff_theta(1, 0.25, 4.0) == doctest::Approx(0.0015625).epsilon(1e-15));
  CHECK(cutoff_theta(2, 0.2, 8.0) == doctest::Approx(0.04 / 160.0).epsilon(1e-15));
  CHECK(cutoff_theta(1, 2.0, 1.0) == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("cutoff construction and certificate") {
  oracle::Rng rng(5);
  for (int n : {1, 2}) {
    auto bg = n == 1 ? perturbed(1, 64) : perturbed(2, 16);
    const auto& g = bg->grid();
    for (double r : {0.15, 0.25}) {
      Coords x0{};
      for (int a = 0; a < g.real_dims(); ++a) x0[a] = rng.uniform();
      const auto cut = build_cutoff(x0, r, 4.0, *bg);
      CAPTURE(n);
      CAPTURE(r);
      CHECK(cut.C0 >= 4.0);
      CHECK(cut.theta == cutoff_theta(n, r, cut.C0));
      CHECK(cut.alpha == 2.0);
      CHECK(eta_at(cut, x0) == 1.0);
      Coords at_r = x0;
      at_r[0] += r;
      CHECK(eta_at(cut, at_r) == doctest::Approx(1.0 - cut.theta).epsilon(1e-14));
      for (std::size_t p = 0; p < g.size(); ++p) {
        const Coords x = g.coords(p);
        double d2 = 0.0;
        for (int a = 0; a < g.real_dims(); ++a) {
          const double d = x[a] - x0[a] - std::round(x[a] - x0[a]);
          d2 += d * d;
        }
        const double eta = cut.eta[p];
        if (d2 <= 0.25 * r * r) REQUIRE(eta == 1.0);
        if (d2 >= 0.5625 * r * r) REQUIRE(eta == doctest::Approx(1.0 - cut.theta).epsilon(1e-14));
        REQUIRE(eta >= 1.0 - cut.theta - 1e-15);
        REQUIRE(eta <= 1.0);
      }
      const auto cert = certify_cutoff(cut, *bg);
      CHECK(cert.ok);
    }
  }
  auto bg = flat(1, 32);
  CHECK_THROWS_AS(build_cutoff(Coords{}, 0.3, 4.0, *bg), Error);
  CHECK_THROWS_AS(build_cutoff(Coords{}, 0.2, 0.5, *bg), Error);
}

TEST_CASE("cutoff gradient bound agrees with finite differences of the formula") {
  auto bg = flat(1, 128);
  const auto cut = build_cutoff(Coords{0.4, 0.7, 0, 0}, 0.25, 4.0, *bg);
  const auto cert = certify_cutoff(cut, *bg);
  const double h = 1e-5;
  double fd_max = 0.0;
  for (std::size_t p = 0; p < bg->grid().size(); ++p) {
    const Coords x = bg->grid().coords(p);
    Coords xp = x, xm = x, yp = x, ym = x;
    xp[0] += h;
    xm[0] -= h;
    yp[1] += h;
    ym[1] -= h;
    const double ex = (eta_at(cut, xp) - eta_at(cut, xm)) / (2 * h);
    const double ey = (eta_at(cut, yp) - eta_at(cut, ym)) / (2 * h);
    fd_max = std::max(fd_max, 0.25 * (ex * ex + ey * ey));
  }
  CHECK(cert.grad_sq_max == doctest::Approx(fd_max).epsilon(1e-3));
}

TEST_CASE("sphere samples and locate_max") {
  for (int n : {1, 2}) {
    const auto pts = sphere_samples(n);
    CHECK(pts.size() == 256);
    for (const auto& u : pts) {
      double s = 0.0;
      for (double v : u) s += v * v;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  GridSpec g(1, 32);
  auto u = ScalarField::generate(g, [](const Coords& x) {
    return std::cos(two_pi * (x[0] - 0.3137)) + 0.5 * std::cos(two_pi * (x[1] - 0.8521));
  });
  const Coords m = locate_max(u);
  CHECK(m[0] == doctest::Approx(0.3137).epsilon(1e-8));
  CHECK(m[1] == doctest::Approx(0.8521).epsilon(1e-8));
}

TEST_CASE("ABP chain on the sine instance") {
  auto report = [](int N) {
    const auto sol = sine_instance(N);
    const auto H = H_field(sol, 10.0);
    const auto cut = build_cutoff(locate_max(H), 0.25, 4.0, *sol.problem.bg);
    return abp_check(sol, cut, 10.0);
  };
  const auto a64 = report(64), a128 = report(128);
  for (const auto& a : {a64, a128}) {
    CHECK(std::isfinite(a.implied_constant));
    CHECK(a.implied_constant > 0.0);
    CHECK(a.integral_term > 0.0);
    CHECK(a.sup_boundary >= 0.0);
    CHECK(a.sup_inner - a.sup_boundary <= a.implied_constant * a.integral_term * (1 + 1e-12));
    CHECK(a.M_alpha == doctest::Approx(a.M * a.M).epsilon(1e-14));
    CHECK(a.bootstrap_ok);
  }
  CHECK(std::abs(a128.implied_constant / a64.implied_constant - 1.0) <= 0.2);
}

TEST_CASE("ABP integrand without a density gradient keeps only the H^alpha term") {
  auto bg = flat(1, 64);
  const MAProblem pr(bg, ScalarField(bg->grid(), 0.0));
  const auto phi = ScalarField::generate(bg->grid(), [](const Coords& x) {
    return 0.01 * std::sin(two_pi * x[0]) * std::cos(two_pi * x[1]);
  });
  MASolution sol{pr, phi, 0.0, 0, 1.0, phi.min(), {}};
  const double lambda = 10.0, r = 0.2;
  const auto H = H_field(sol, lambda);
  const auto cut = build_cutoff(locate_max(H), r, 4.0, *bg);
  const auto abp = abp_check(sol, cut, lambda);

  // (lambda alpha (n + 2) H^alpha)^2 integrated over the ball, with the closed-form gradient.
  double acc = 0.0;
  const auto& g = bg->grid();
  const double inf = phi.min();
  for (std::size_t p = 0; p < g.size(); ++p) {
    const Coords x = g.coords(p);
    double d2 = 0.0;
    for (int a = 0; a < 2; ++a) {
      const double d = x[a] - cut.x0[a] - std::round(x[a] - cut.x0[a]);
      d2 += d * d;
    }
    if (d2 >= r * r) continue;
    const double px = 0.01 * two_pi * std::cos(two_pi * x[0]) * std::cos(two_pi * x[1]);
    const double py = -0.01 * two_pi * std::sin(two_pi * x[0]) * std::sin(two_pi * x[1]);
    const double h = std::exp(-lambda * (phi[p] - inf)) * 0.25 * (px * px + py * py);
    const double term = lambda * 2.0 * 3.0 * h * h;
    acc += term * term;
  }
  acc /= static_cast<double>(g.size());
  CHECK(abp.integral_term == doctest::Approx(r * std::sqrt(acc)).epsilon(1e-10));
}

TEST_CASE("integral identity and L1 bound on the sine instance") {
  const auto sol = sine_instance(64);
  const double lambda = 10.0;
  // Independent quadrature of both sides from the closed form.
  const int M = 4096;
  double lhs = 0.0, rhs = 0.0, l1 = 0.0;
  for (int i = 0; i < M; ++i) {
    const double x = static_cast<double>(i) / M;
    const double E = std::exp(-lambda * (phi_exact(x) + eps / (pi * pi)));
    const double c = std::cos(two_pi * x);
    lhs += (E - 1.0) * eps * std::sin(two_pi * x);
    rhs += lambda * E * (eps * eps / (pi * pi)) * c * c;
    l1 += H_exact(x);
  }
  lhs /= M;
  rhs /= M;
  l1 /= M;
  const auto t = ibp_identity_terms(sol, lambda);
  CHECK(t.lhs == doctest::Approx(lhs).epsilon(1e-10));
  CHECK(t.rhs == doctest::Approx(rhs).epsilon(1e-10));
  CHECK(ibp_identity_residual(sol, lambda) <= 1e-10);
  const auto b = l1_H_bound(sol, lambda);
  CHECK(b.value == doctest::Approx(l1).epsilon(1e-10));
  CHECK(b.bound == doctest::Approx(0.2).epsilon(1e-12));
  MESSAGE("L1 margin: value " << b.value << " bound " << b.bound);
}

TEST_CASE("L1 bound stays above the value as the density sharpens") {
  double prev_bound = 0.0;
  for (double e : {0.3, 0.6, 0.9}) {
    const auto sol = sine_instance(64, e);
    const auto b = l1_H_bound(sol, 10.0);
    CHECK(b.value <= b.bound);
    CHECK(b.bound >= prev_bound);
    prev_bound = b.bound;
  }
}

TEST_CASE("estimate report on the sine instance") {
  const auto sol = sine_instance(64);
  const auto r = estimate_report(sol);
  CHECK(r.lambda == 10.0);
  CHECK(r.K == 0.0);
  CHECK(r.sup_F == doctest::Approx(std::log(1.3)).epsilon(1e-14));
  CHECK(r.wgrad_F_norm == doctest::Approx(eps * pi / std::sqrt(2.0)).epsilon(1e-10));
  CHECK(r.sup_H == H_field(sol, 10.0).max());
  CHECK(r.c_emp == r.sup_H);
  CHECK(r.inf_phi == doctest::Approx(-eps / (pi * pi)).epsilon(1e-10));
  CHECK(r.bochner_residual_max <= 1e-8);
  CHECK(r.diff_ineq_min_slack >= -1e-8);
  CHECK(r.certificate_ok);
  CHECK(r.certificate_excess == doctest::Approx(0.0));

  const auto j = to_json(r);
  for (const char* key : {"lambda", "K", "sup_F", "wgrad_F_norm", "sup_H", "inf_phi", "c_emp",
                          "bochner_residual_max", "diff_ineq_min_slack"})
    CHECK(j.contains(key));
}

TEST_CASE("estimate report is invariant under constant shifts of phi (property)") {
  oracle::Rng rng(77);
  for (int trial = 0; trial < 3; ++trial) {
    const auto sol = random_instance(rng, trial == 1, 32);
    const auto a = estimate_report(sol);
    MASolution shifted = sol;
    const double c = rng.uniform(-5.0, 5.0);
    shifted.phi = sol.phi + c;
    shifted.inf_phi = sol.inf_phi + c;
    const auto b = estimate_report(shifted);
    CHECK(b.lambda == a.lambda);
    CHECK(b.K == a.K);
    CHECK(b.sup_F == a.sup_F);
    CHECK(b.wgrad_F_norm == a.wgrad_F_norm);
    CHECK(b.sup_H == doctest::Approx(a.sup_H).epsilon(1e-10));
    CHECK(b.c_emp == doctest::Approx(a.c_emp).epsilon(1e-10));
    CHECK(b.inf_phi == doctest::Approx(a.inf_phi).epsilon(1e-10));
    // Both residual diagnostics sit at round-off, where only their size is meaningful.
    CHECK(std::abs(b.bochner_residual_max - a.bochner_residual_max) <= 1e-9);
    CHECK(std::abs(b.diff_ineq_min_slack - a.diff_ineq_min_slack) <= 1e-9);
  }
}
