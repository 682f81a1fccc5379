#include "cma/degenerate_rhs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "cma/bochner_estimate.hpp"
#include "cma/kahler_geometry.hpp"
#include "cma/parallel.hpp"

namespace cma {

namespace {

double smoothstep(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

double profile_value(const Profile& p, double d2) {
  if (p.kind == Profile::Kind::Power) return std::pow(d2, 0.5 * p.eps0);
  return 1.0 / std::abs(std::log(d2 + std::numeric_limits<double>::min()));
}

}  // namespace

std::string to_string(const Profile& p) {
  if (p.kind == Profile::Kind::LogType) return "log_type";
  std::ostringstream os;
  os << "power(" << p.eps0 << ")";
  return os.str();
}

double surrogate_distance_sq(int real_dims, const Coords& x, const Coords& c) {
  double d2 = 0.0;
  for (int a = 0; a < real_dims; ++a) {
    const double s = std::sin(std::numbers::pi * (x[a] - c[a]));
    d2 += s * s;
  }
  return d2 / (std::numbers::pi * std::numbers::pi);
}

DegenerateDensity make_degenerate(const BackgroundMetric& bg, const std::vector<Coords>& centers,
                                  const Profile& profile, double patch_radius) {
  if (!(patch_radius > 0.0) || patch_radius > 0.2) {
    throw Error("make_degenerate: patch radius must lie in (0, 0.2]");
  }
  if (profile.kind == Profile::Kind::Power && !(profile.eps0 > 0.0)) {
    throw Error("make_degenerate: eps0 must be positive");
  }
  const GridSpec& g = bg.grid();
  const int dims = g.real_dims();
  const double R = patch_radius;
  // Scale the profile to 1 at the patch edge so it meets the outside level without a ramp.
  const double amplitude = 1.0 / profile_value(profile, R * R);
  const double outside = 1.0;

  std::vector<double> raw(g.size()), sigma(g.size());
  for (std::size_t p = 0; p < g.size(); ++p) {
    const Coords x = g.coords(p);
    double value = outside, weight = 0.0;
    for (const Coords& c : centers) {
      const double d2 = surrogate_distance_sq(dims, x, c);
      const double s = 1.0 - smoothstep((std::sqrt(d2) - R) / R);
      if (s == 0.0) continue;
      if (weight > 0.0) throw Error("make_degenerate: zero patches overlap");
      weight = s;
      value = s * amplitude * profile_value(profile, d2) + (1.0 - s) * outside;
    }
    raw[p] = value;
    sigma[p] = weight;
  }

  const ScalarField f_raw(g, raw);
  const ScalarField sig(g, sigma);
  const ScalarField out = sig.map([](double s) { return 1.0 - s; });
  const double inner_mass = integrate(f_raw * sig, bg.det_g0());
  const double outer_mass = integrate(f_raw * out, bg.det_g0());
  const double beta = (bg.volume() - inner_mass) / outer_mass;
  if (!(outer_mass > 0.0) || !(beta > 0.0)) {
    throw Error("make_degenerate: normalization infeasible (patch too large)");
  }
  std::vector<double> f(g.size());
  for (std::size_t p = 0; p < g.size(); ++p) f[p] = raw[p] * (sigma[p] + beta * (1.0 - sigma[p]));
  return {ScalarField(g, std::move(f)), centers, profile, patch_radius, amplitude, sig};
}

DegenerateDensity make_power_vanishing(const BackgroundMetric& bg,
                                       const std::vector<Coords>& centers, double eps0,
                                       double patch_radius) {
  return make_degenerate(bg, centers, Profile{Profile::Kind::Power, eps0}, patch_radius);
}

DegenerateDensity make_log_vanishing(const BackgroundMetric& bg,
                                     const std::vector<Coords>& centers, double patch_radius) {
  return make_degenerate(bg, centers, Profile{Profile::Kind::LogType, 0.0}, patch_radius);
}

ScalarField regularize(const DegenerateDensity& d, const BackgroundMetric& bg, int k) {
  if (k < 1) throw Error("regularize: k must be >= 1");
  const ScalarField& f = d.f;
  const ScalarField& sig = d.patch_weight;
  const ScalarField out_f = sig.map([](double s) { return 1.0 - s; }) * f;
  const double added = integrate(sig, bg.det_g0()) / k;
  const double outer = integrate(out_f, bg.det_g0());
  const double gamma = added > 0.0 ? -added / outer : 0.0;
  if (added > 0.0 && !(1.0 + gamma > 0.0)) {
    throw Error("regularize: rescaling outside the patch would make f_k non-positive");
  }
  std::vector<double> fk(f.size());
  for (std::size_t p = 0; p < fk.size(); ++p) {
    if (sig[p] == 1.0) {
      fk[p] = f[p] + 1.0 / k;
    } else {
      fk[p] = f[p] + sig[p] / k + gamma * out_f[p];
    }
    if (!(fk[p] > 0.0)) throw Error("regularize: f_k is not positive");
  }
  return ScalarField(f.grid(), std::move(fk));
}

double sobolev_quantity(const ScalarField& f, const BackgroundMetric& bg) {
  require_same_grid(f.grid(), bg.grid(), "sobolev_quantity");
  if (!(f.min() > 0.0)) throw Error("sobolev_quantity: f must be positive at every grid point");
  const int n = bg.dim();
  const ScalarField g2 = grad_norm_sq(f, bg.inverse_g0());
  std::vector<double> q(f.size());
  for (std::size_t p = 0; p < q.size(); ++p) {
    q[p] = std::pow(std::max(0.0, g2[p]), n) / std::pow(f[p], 2 * n - 2);
  }
  return integrate(ScalarField(f.grid(), std::move(q)), bg.det_g0());
}

double classical_driver(const ScalarField& f, const BackgroundMetric& bg) {
  const int n = bg.dim();
  const ScalarField root = f.map([n](double v) { return std::pow(std::max(0.0, v), 1.0 / n); });
  return std::sqrt(std::max(0.0, grad_norm_sq(root, bg.inverse_g0()).max()));
}

RegularizedFamily build_family(BackgroundPtr bg, const DegenerateDensity& base,
                               const std::vector<int>& k_values, int workers) {
  for (std::size_t i = 1; i < k_values.size(); ++i) {
    if (k_values[i] <= k_values[i - 1]) throw Error("build_family: k values must increase");
  }
  RegularizedFamily fam{base, k_values, {}, {}, {}, {}};
  for (int k : k_values) {
    fam.f_k.push_back(regularize(base, *bg, k));
    fam.sobolev_k.push_back(sobolev_quantity(fam.f_k.back(), *bg));
  }
  const std::size_t count = k_values.size();
  fam.solutions.resize(count);
  fam.failures.resize(count);

  parallel_for(count, workers, [&](std::size_t i) {
    try {
      const ScalarField F = fam.f_k[i].map([](double v) { return std::log(v); });
      fam.solutions[i] = solve(MAProblem(bg, F));
    } catch (const Error& e) {
      fam.failures[i] = e.what();
    }
  });
  return fam;
}

LipschitzReport lipschitz_study(const RegularizedFamily& fam) {
  LipschitzReport r{};
  r.k_values = fam.k_values;
  r.sobolev_k = fam.sobolev_k;
  r.complete = true;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& sol : fam.solutions) {
    if (!sol) {
      r.complete = false;
      r.grad_sup_k.push_back(nan);
      r.sup_H_k.push_back(nan);
      continue;
    }
    const auto& bg = *sol->problem.bg;
    r.grad_sup_k.push_back(std::sqrt(std::max(0.0, grad_norm_sq(sol->phi, bg.inverse_g0()).max())));
    r.sup_H_k.push_back(H_field(*sol, lambda_of(bg.K())).max());
  }
  for (std::size_t i = 0; i + 1 < fam.solutions.size(); ++i) {
    const auto& a = fam.solutions[i];
    const auto& b = fam.solutions[i + 1];
    r.cauchy_gaps.push_back(a && b ? sup_distance(a->phi, b->phi) : nan);
  }

  double lo = INFINITY, hi = 0.0;
  for (double v : r.grad_sup_k) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  r.grad_spread = r.complete && lo > 0.0 ? hi / lo : (r.complete && hi == 0.0 ? 1.0 : nan);
  r.uniform_ok = r.complete && r.grad_spread <= 2.0;
  // A family without a zero locus has identical members; all gaps vanish.
  const bool all_zero = std::all_of(r.cauchy_gaps.begin(), r.cauchy_gaps.end(),
                                    [](double v) { return v == 0.0; });
  r.gaps_decreasing = r.complete;
  for (std::size_t i = 1; i < r.cauchy_gaps.size() && !all_zero; ++i) {
    if (!(r.cauchy_gaps[i] < r.cauchy_gaps[i - 1])) r.gaps_decreasing = false;
  }
  return r;
}

std::string family_csv(const LipschitzReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "k,sobolev_k,grad_sup_k,sup_H_k,gap_to_next\n";
  for (std::size_t i = 0; i < r.k_values.size(); ++i) {
    os << r.k_values[i] << ',' << r.sobolev_k[i] << ',' << r.grad_sup_k[i] << ',' << r.sup_H_k[i]
       << ',';
    if (i < r.cauchy_gaps.size()) os << r.cauchy_gaps[i];
    os << '\n';
  }
  return os.str();
}

}  // namespace cma
