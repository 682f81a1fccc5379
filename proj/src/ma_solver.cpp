#include "cma/ma_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cma/spectral.hpp"

namespace cma {

namespace {

constexpr double kCompatTol = 1e-12;
constexpr double kPositivityFloor = 1e-8;
constexpr double kMinStep = 1.0 / 1024.0;
constexpr double kLinearRtol = 1e-3;
constexpr int kRestart = 40;
constexpr int kMaxRestarts = 10;
constexpr double kStagnation = 0.9;
constexpr double kStageTol = 1e-4;
// Accepted steps shrinking the residual by less than this factor count as no progress.
constexpr double kSlowRatio = 0.9;
constexpr int kMaxSlowSteps = 3;

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

void remove_mean(Vec& v) {
  double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  for (double& x : v) x -= m;
}

ScalarField residual_field(const MetricField& m, const ScalarField& F) {
  std::vector<double> g(F.size());
  for (std::size_t p = 0; p < g.size(); ++p) g[p] = std::log(m.det_ratio[p]) - F[p];
  return ScalarField(F.grid(), std::move(g));
}

// Linearized operator v -> det g * Delta_omega v in divergence form, right
// preconditioned by the inverse flat Laplacian.
class LinearizedOperator {
 public:
  LinearizedOperator(const MetricField& m, const BackgroundMetric& bg)
      : grid_(m.grid), n_(grid_.complex_dim()), cof_(grid_.size() * n_ * n_) {
    for (std::size_t p = 0; p < grid_.size(); ++p) {
      double detg = m.det_ratio[p] * bg.det_g0()[p];
      for (int i = 0; i < n_; ++i) {
        for (int j = 0; j < n_; ++j) cof_[(p * n_ + i) * n_ + j] = detg * m.inverse_g.at(p, i, j);
      }
    }
  }

  Spectrum precondition(const Vec& y) const {
    return inverse_flat_laplacian(forward(ScalarField(grid_, y)));
  }

  Vec apply_preconditioned(const Vec& y) const {
    ComplexMatrixField h = complex_hessian(precondition(y));
    Vec out(grid_.size());
    for (std::size_t p = 0; p < out.size(); ++p) {
      cplx acc = 0.0;
      for (int i = 0; i < n_; ++i) {
        for (int j = 0; j < n_; ++j) acc += cof_[(p * n_ + i) * n_ + j] * h.at(p, i, j);
      }
      out[p] = acc.real();
    }
    remove_mean(out);
    return out;
  }

 private:
  GridSpec grid_;
  int n_;
  std::vector<cplx> cof_;
};

struct GmresResult {
  Vec y;
  double relative_residual;
};

// Restarted GMRES with modified Gram-Schmidt and Givens rotations, x0 = 0.
GmresResult gmres(const LinearizedOperator& A, const Vec& b, double rtol) {
  const std::size_t P = b.size();
  Vec y(P, 0.0);
  const double beta0 = norm(b);
  if (beta0 == 0.0) return {y, 0.0};
  double rel = 1.0;
  Vec r = b;
  for (int cycle = 0; cycle < kMaxRestarts; ++cycle) {
    if (cycle > 0) {
      Vec Ay = A.apply_preconditioned(y);
      for (std::size_t i = 0; i < P; ++i) r[i] = b[i] - Ay[i];
    }
    double beta = norm(r);
    rel = beta / beta0;
    if (rel <= rtol) break;
    const double cycle_start = rel;

    std::vector<Vec> V;
    V.reserve(kRestart + 1);
    V.push_back(r);
    for (double& x : V[0]) x /= beta;
    std::vector<std::vector<double>> H(kRestart + 1, std::vector<double>(kRestart, 0.0));
    std::vector<double> cs(kRestart), sn(kRestart), g(kRestart + 1, 0.0);
    g[0] = beta;
    int k = 0;
    for (; k < kRestart; ++k) {
      Vec w = A.apply_preconditioned(V[k]);
      for (int i = 0; i <= k; ++i) {
        H[i][k] = dot(w, V[i]);
        for (std::size_t q = 0; q < P; ++q) w[q] -= H[i][k] * V[i][q];
      }
      H[k + 1][k] = norm(w);
      for (int i = 0; i < k; ++i) {
        double t = cs[i] * H[i][k] + sn[i] * H[i + 1][k];
        H[i + 1][k] = -sn[i] * H[i][k] + cs[i] * H[i + 1][k];
        H[i][k] = t;
      }
      double den = std::hypot(H[k][k], H[k + 1][k]);
      cs[k] = den == 0.0 ? 1.0 : H[k][k] / den;
      sn[k] = den == 0.0 ? 0.0 : H[k + 1][k] / den;
      double hk1 = H[k + 1][k];
      H[k][k] = cs[k] * H[k][k] + sn[k] * hk1;
      H[k + 1][k] = 0.0;
      g[k + 1] = -sn[k] * g[k];
      g[k] = cs[k] * g[k];
      rel = std::abs(g[k + 1]) / beta0;
      bool breakdown = hk1 <= 1e-14 * beta0;
      if (!breakdown) {
        V.push_back(std::move(w));
        for (double& x : V.back()) x /= hk1;
      }
      if (rel <= rtol || breakdown) {
        ++k;
        break;
      }
    }
    std::vector<double> c(k);
    for (int i = k - 1; i >= 0; --i) {
      double s = g[i];
      for (int j = i + 1; j < k; ++j) s -= H[i][j] * c[j];
      c[i] = s / H[i][i];
    }
    for (int i = 0; i < k; ++i) {
      for (std::size_t q = 0; q < P; ++q) y[q] += c[i] * V[i][q];
    }
    if (rel <= rtol) break;
    // A full cycle that barely moves the residual will not be rescued by restarting.
    if (rel > 0.99 * cycle_start) break;
  }
  return {y, rel};
}

struct StageState {
  ScalarField phi;
  double residual;
  double min_eig;
  int iterations;
};

std::string describe_record(const IterationRecord& r) {
  std::ostringstream os;
  os << " (s=" << r.s << ", iter=" << r.iter << ", residual_sup=" << r.residual_sup
     << ", step_length=" << r.step_length << ", min_eigen_omega=" << r.min_eigen_omega << ")";
  return os.str();
}

// The residual stopped decreasing; more continuation stages will not help.
class NewtonStagnation : public SolverError {
 public:
  using SolverError::SolverError;
};

StageState newton_stage(const BackgroundMetric& bg, const ScalarField& F, double s, double tol,
                        int max_iters, ScalarField phi, std::vector<IterationRecord>& log) {
  MetricField m = assemble_metric(bg, phi);
  if (!(m.min_eigenvalue > 0.0)) {
    IterationRecord rec{s, 0, NAN, 0.0, m.min_eigenvalue};
    throw SolverError(SolverError::Kind::PositivityLoss, "initial iterate is not positive", rec);
  }
  ScalarField G = residual_field(m, F);
  double r = G.max_abs();
  double lam = m.min_eigenvalue;
  int iter = 0;
  int slow = 0;
  while (r > tol) {
    IterationRecord last{s, iter, r, 0.0, lam};
    if (iter >= max_iters) {
      throw SolverError(SolverError::Kind::MaxIterations,
                        "Newton did not converge in " + std::to_string(max_iters) + " iterations" +
                            describe_record(last),
                        last);
    }
    LinearizedOperator A(m, bg);
    Vec b(G.size());
    for (std::size_t p = 0; p < b.size(); ++p) b[p] = -m.det_ratio[p] * bg.det_g0()[p] * G[p];
    remove_mean(b);
    GmresResult lin = gmres(A, b, kLinearRtol);
    if (lin.relative_residual > kStagnation) {
      throw SolverError(SolverError::Kind::LinearSolveStagnation,
                        "linear solve stagnated at relative residual " +
                            std::to_string(lin.relative_residual) + describe_record(last),
                        last);
    }
    ScalarField dir = inverse(A.precondition(lin.y));

    double t = 1.0;
    while (true) {
      ScalarField trial = phi + t * dir;
      MetricField mt = assemble_metric(bg, trial);
      if (mt.min_eigenvalue > 0.0 && mt.min_eigenvalue >= 0.5 * lam) {
        ScalarField Gt = residual_field(mt, F);
        double rt = Gt.max_abs();
        if (rt <= r) {
          phi = std::move(trial);
          m = std::move(mt);
          G = std::move(Gt);
          r = rt;
          lam = m.min_eigenvalue;
          break;
        }
      }
      t *= 0.5;
      if (t < kMinStep) {
        throw SolverError(SolverError::Kind::PositivityLoss,
                          "line search reached its floor" + describe_record(last), last);
      }
    }
    ++iter;
    log.push_back({s, iter, r, t, lam});
    slow = r > kSlowRatio * last.residual_sup ? slow + 1 : 0;
    if (slow >= kMaxSlowSteps) {
      throw NewtonStagnation(SolverError::Kind::MaxIterations,
                             "Newton residual stagnated" + describe_record(log.back()),
                             log.back());
    }
    if (lam < kPositivityFloor) {
      throw SolverError(SolverError::Kind::PositivityLoss,
                        "omega eigenvalue fell below the positivity floor" +
                            describe_record(log.back()),
                        log.back());
    }
  }
  return {std::move(phi), r, lam, iter};
}

MASolution finish(const MAProblem& problem, const ScalarField& phi_raw, int iterations,
                  std::vector<IterationRecord> log) {
  ScalarField phi = mean_zero_gauge(phi_raw, *problem.bg);
  MetricField m = assemble_metric(*problem.bg, phi);
  if (!(m.min_eigenvalue > 0.0)) {
    Coords x = problem.bg->grid().coords(m.worst_point);
    throw PositivityError("solution metric is not positive", m.worst_point, x, m.min_eigenvalue);
  }
  double r = residual_field(m, problem.F).max_abs();
  double inf_phi = phi.min();
  return MASolution{problem, std::move(phi), r, iterations, m.min_eigenvalue, inf_phi,
                    std::move(log)};
}

}  // namespace

SolverError::SolverError(Kind kind, const std::string& what, IterationRecord last)
    : Error(std::string(to_string(kind)) + ": " + what), kind_(kind), last_(last) {}

const char* to_string(SolverError::Kind kind) {
  switch (kind) {
    case SolverError::Kind::PositivityLoss:
      return "PositivityLoss";
    case SolverError::Kind::MaxIterations:
      return "MaxIterations";
    case SolverError::Kind::LinearSolveStagnation:
      return "LinearSolveStagnation";
  }
  return "SolverError";
}

MAProblem::MAProblem(BackgroundPtr bg_, ScalarField F_) : bg(std::move(bg_)), F(std::move(F_)) {
  if (!bg) throw Error("MAProblem: null background");
  require_same_grid(bg->grid(), F.grid(), "MAProblem");
  double vol = bg->volume();
  double mass = integrate(F.map([](double v) { return std::exp(v); }), bg->det_g0());
  if (!(std::abs(mass - vol) <= kCompatTol * vol)) {
    std::ostringstream os;
    os.precision(17);
    os << "MAProblem: density is not compatible: int e^F omega_0^n = " << mass
       << " but int omega_0^n = " << vol;
    throw IncompatibleDensity(os.str());
  }
}

ScalarField normalize_density(const ScalarField& F_raw, const BackgroundMetric& bg) {
  require_same_grid(F_raw.grid(), bg.grid(), "normalize_density");
  const double top = F_raw.max();
  double s = 0.0;
  for (std::size_t p = 0; p < F_raw.size(); ++p) s += std::exp(F_raw[p] - top) * bg.det_g0()[p];
  s /= static_cast<double>(F_raw.size());
  double c = std::log(bg.volume()) - top - std::log(s);
  ScalarField F = F_raw + c;
  // One correction with the same quadrature the compatibility check uses.
  c = std::log(bg.volume() / integrate(F.map([](double v) { return std::exp(v); }), bg.det_g0()));
  return F + c;
}

ScalarField mean_zero_gauge(const ScalarField& phi, const BackgroundMetric& bg) {
  double mean = integrate(phi, bg.det_g0()) / bg.volume();
  return phi + (-mean);
}

double residual_sup(const MAProblem& problem, const ScalarField& phi) {
  MetricField m = metric_of_potential(*problem.bg, phi);
  return residual_field(m, problem.F).max_abs();
}

MASolution solve_linear_n1(const MAProblem& problem) {
  const BackgroundMetric& bg = *problem.bg;
  if (bg.dim() != 1 || !bg.is_flat()) {
    throw Error("solve_linear_n1: requires n = 1 and a flat background");
  }
  ScalarField rhs = problem.F.map([](double v) { return std::expm1(v); });
  double mean = integrate(rhs);
  if (std::abs(mean) > kCompatTol) {
    throw IncompatibleDensity("solve_linear_n1: e^F - 1 has mean " + std::to_string(mean) +
                              ", expected 0");
  }
  ScalarField phi = inverse(inverse_flat_laplacian(forward(rhs)));
  return finish(problem, phi, 1, {});
}

MASolution solve_newton(const MAProblem& problem, const ScalarField* initial) {
  const BackgroundMetric& bg = *problem.bg;
  if (initial) require_same_grid(initial->grid(), bg.grid(), "solve_newton");

  // Plain Newton first (from the initial guess if any); on failure restart
  // from zero with m continuation stages, doubling m on each further failure.
  std::vector<int> schedule{1};
  for (int m = std::max(2, problem.continuation_steps); m <= 16 * problem.continuation_steps;
       m *= 2) {
    schedule.push_back(m);
  }
  for (std::size_t attempt = 0; attempt < schedule.size(); ++attempt) {
    const int stages = schedule[attempt];
    std::vector<IterationRecord> log;
    ScalarField phi = (attempt == 0 && initial) ? *initial : ScalarField(bg.grid(), 0.0);
    int total = 0;
    try {
      for (int k = 1; k <= stages; ++k) {
        double s = static_cast<double>(k) / stages;
        bool last = (k == stages);
        ScalarField Fs = last ? problem.F : normalize_density(s * problem.F, bg);
        double tol = last ? problem.newton_tol : std::max(problem.newton_tol, kStageTol);
        StageState st =
            newton_stage(bg, Fs, s, tol, problem.max_newton_iters, std::move(phi), log);
        phi = std::move(st.phi);
        total += st.iterations;
      }
      return finish(problem, phi, total, std::move(log));
    } catch (const NewtonStagnation&) {
      throw;
    } catch (const SolverError&) {
      if (attempt + 1 == schedule.size()) throw;
    }
  }
  throw Error("solve_newton: unreachable");
}

MASolution solve(const MAProblem& problem) {
  if (problem.bg->dim() == 1 && problem.bg->is_flat()) return solve_linear_n1(problem);
  return solve_newton(problem);
}

MAProblem manufactured(BackgroundPtr bg, const ScalarField& phi_star) {
  MetricField m = metric_of_potential(*bg, phi_star);
  ScalarField F = m.det_ratio.map([](double v) { return std::log(v); });
  ScalarField Fn = normalize_density(F, *bg);
  return MAProblem(std::move(bg), std::move(Fn));
}

}  // namespace cma
