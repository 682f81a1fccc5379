#include "cma/runner.hpp"

#include <boost/math/tools/roots.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include "cma/bochner_estimate.hpp"
#include "cma/degenerate_rhs.hpp"
#include "cma/ma_solver.hpp"
#include "cma/parallel.hpp"
#include "cma/spectral.hpp"

namespace cma {

using nlohmann::json;
namespace pt = boost::property_tree;

namespace {

constexpr int schema_version = 1;
constexpr double two_pi = 2.0 * std::numbers::pi;

// ---- config parsing ----

const std::map<std::string, std::set<std::string>> known_keys = {
    {"run", {"command", "seed"}},
    {"grid", {"n", "N"}},
    {"background", {"kind", "psi_scale"}},
    {"density",
     {"family", "epsilon", "axis", "wavenumber", "amplitude", "width", "center", "eps0",
      "patch_radius", "k", "snapshot"}},
    {"solver", {"tol", "max_iters", "continuation_steps"}},
    {"estimate", {"r", "C0", "alpha", "abp_refine"}},
    {"sweep", {"a_values", "width1", "amplitude1", "center", "baseline"}},
    {"degenerate",
     {"profile", "eps0", "center", "patch_radius", "k_values", "log_center", "log_patch_radius",
      "log_N"}},
    {"output", {"dir", "snapshots"}},
};

template <class T>
T get(const pt::ptree& tree, const std::string& key, T fallback) {
  auto node = tree.get_child_optional(pt::ptree::path_type(key, '.'));
  if (!node) return fallback;
  try {
    return node->get_value<T>();
  } catch (const pt::ptree_bad_data&) {
    throw ConfigError("config: bad value for " + key + ": '" + node->data() + "'");
  }
}

bool get_bool(const pt::ptree& tree, const std::string& key, bool fallback) {
  const std::string v = get<std::string>(tree, key, fallback ? "true" : "false");
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v;
    if (!(is >> v) || !(is >> std::ws).eof()) {
      throw ConfigError("config: bad list entry for " + key + ": '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

template <class T>
std::vector<T> get_list(const pt::ptree& tree, const std::string& key, std::vector<T> fallback) {
  auto node = tree.get_child_optional(pt::ptree::path_type(key, '.'));
  if (!node) return fallback;
  return parse_list<T>(key, node->data());
}

Coords get_coords(const pt::ptree& tree, const std::string& key, Coords fallback) {
  auto node = tree.get_child_optional(pt::ptree::path_type(key, '.'));
  if (!node) return fallback;
  const auto v = parse_list<double>(key, node->data());
  if (v.size() > 4) throw ConfigError("config: " + key + " has more than 4 coordinates");
  Coords c = fallback;
  std::copy(v.begin(), v.end(), c.begin());
  return c;
}

RunConfig from_ptree(const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    auto it = known_keys.find(section);
    if (it == known_keys.end()) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) {
        throw ConfigError("config: unknown key " + section + "." + key);
      }
    }
  }
  RunConfig c;
  if (auto cmd = tree.get_optional<std::string>("run.command")) c.command = parse_command(*cmd);
  c.seed = get<long>(tree, "run.seed", c.seed);
  c.n = get<int>(tree, "grid.n", c.n);
  c.N = get<int>(tree, "grid.N", c.N);
  c.background = get<std::string>(tree, "background.kind", c.background);
  c.psi_scale = get<double>(tree, "background.psi_scale", c.psi_scale);

  DensitySpec& d = c.density;
  d.family = get<std::string>(tree, "density.family", d.family);
  d.epsilon = get<double>(tree, "density.epsilon", d.epsilon);
  d.axis = get<int>(tree, "density.axis", d.axis);
  d.wavenumber = get<int>(tree, "density.wavenumber", d.wavenumber);
  d.amplitude = get<double>(tree, "density.amplitude", d.amplitude);
  d.width = get<double>(tree, "density.width", d.width);
  d.center = get_coords(tree, "density.center", d.center);
  d.eps0 = get<double>(tree, "density.eps0", d.eps0);
  d.patch_radius = get<double>(tree, "density.patch_radius", d.patch_radius);
  d.k = get<int>(tree, "density.k", d.k);
  d.snapshot = get<std::string>(tree, "density.snapshot", d.snapshot);

  c.newton_tol = get<double>(tree, "solver.tol", c.newton_tol);
  c.max_newton_iters = get<int>(tree, "solver.max_iters", c.max_newton_iters);
  c.continuation_steps = get<int>(tree, "solver.continuation_steps", c.continuation_steps);

  c.cutoff_r = get<double>(tree, "estimate.r", c.cutoff_r);
  c.cutoff_C0 = get<double>(tree, "estimate.C0", c.cutoff_C0);
  c.alpha = get<double>(tree, "estimate.alpha", c.alpha);
  c.abp_refine = get_bool(tree, "estimate.abp_refine", c.n == 1);

  c.sweep_a = get_list<double>(tree, "sweep.a_values", c.sweep_a);
  c.sweep_width1 = get<double>(tree, "sweep.width1", c.sweep_width1);
  c.sweep_amplitude1 = get<double>(tree, "sweep.amplitude1", c.sweep_amplitude1);
  c.sweep_center = get_coords(tree, "sweep.center", c.sweep_center);
  c.sweep_baseline = get<std::string>(tree, "sweep.baseline", c.sweep_baseline);

  c.deg_profile = get<std::string>(tree, "degenerate.profile", c.deg_profile);
  c.deg_eps0 = get<double>(tree, "degenerate.eps0", c.deg_eps0);
  c.deg_center = get_coords(tree, "degenerate.center", c.deg_center);
  c.deg_patch_radius = get<double>(tree, "degenerate.patch_radius", c.deg_patch_radius);
  c.deg_k = get_list<int>(tree, "degenerate.k_values", c.deg_k);
  c.log_center = get_coords(tree, "degenerate.log_center", c.log_center);
  c.log_patch_radius = get<double>(tree, "degenerate.log_patch_radius", c.log_patch_radius);
  c.log_N = get_list<int>(tree, "degenerate.log_N", c.log_N);

  c.output_dir = get<std::string>(tree, "output.dir", c.output_dir);
  c.snapshots = get_bool(tree, "output.snapshots", c.snapshots);

  if (c.n != 1 && c.n != 2) throw ConfigError("config: grid.n must be 1 or 2");
  if (c.background != "flat" && c.background != "perturbed") {
    throw ConfigError("config: background.kind must be flat or perturbed");
  }
  static const std::set<std::string> families{"zero", "trig", "bump", "power", "log_type", "snapshot"};
  if (!families.count(d.family)) throw ConfigError("config: unknown density family " + d.family);
  if (c.deg_profile != "power" && c.deg_profile != "log_type") {
    throw ConfigError("config: degenerate.profile must be power or log_type");
  }
  if (d.axis < 0 || d.axis >= 2 * c.n) throw ConfigError("config: density.axis out of range");
  return c;
}

json coords_json(const Coords& x, int dims) { return json(std::vector<double>(x.begin(), x.begin() + dims)); }

// ---- report helpers ----

void add_check(json& checks, const std::string& name, double value, const std::string& rule,
               double threshold, bool pass) {
  checks[name] = {{"value", value}, {"rule", rule}, {"threshold", threshold}, {"pass", pass}};
}

bool all_finite(const json& j) {
  if (j.is_number_float()) return std::isfinite(j.get<double>());
  if (j.is_structured()) {
    for (const auto& v : j) {
      if (!all_finite(v)) return false;
    }
  }
  return true;
}

std::string csv_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

MAProblem make_problem(const RunConfig& c, BackgroundPtr bg, const ScalarField& F) {
  MAProblem p(std::move(bg), F);
  p.newton_tol = c.newton_tol;
  p.max_newton_iters = c.max_newton_iters;
  p.continuation_steps = c.continuation_steps;
  return p;
}

json solver_json(const MASolution& s) {
  json log = json::array();
  for (const auto& r : s.log) {
    log.push_back({{"s", r.s},
                   {"iter", r.iter},
                   {"residual_sup", r.residual_sup},
                   {"step_length", r.step_length},
                   {"min_eigen_omega", r.min_eigen_omega}});
  }
  return {{"residual_sup", s.residual_sup},
          {"iterations", s.iterations},
          {"min_eigen_omega", s.min_eigen_omega},
          {"inf_phi", s.inf_phi},
          {"log", log}};
}

std::string solver_log_csv(const MASolution& s) {
  std::ostringstream os;
  os << "s,iter,residual_sup,step_length,min_eigen_omega\n";
  for (const auto& r : s.log) {
    os << csv_number(r.s) << ',' << r.iter << ',' << csv_number(r.residual_sup) << ','
       << csv_number(r.step_length) << ',' << csv_number(r.min_eigen_omega) << '\n';
  }
  return os.str();
}

struct Analysis {
  EstimateReport est;
  CutoffSpec cut;
  CutoffCertificate cert;
  ABPReport abp;
  IbpTerms ibp;
  double ibp_residual;
  L1Bound l1;
  double bochner_rel;
  DiffInequality ineq;
};

Analysis analyze(const MASolution& sol, const RunConfig& c) {
  const auto& bg = *sol.problem.bg;
  const double lambda = lambda_of(bg.K());
  const ScalarField H = H_field(sol, lambda);
  CutoffSpec cut = build_cutoff(locate_max(H), c.cutoff_r, c.cutoff_C0, bg, c.alpha);
  const CutoffCertificate cert = certify_cutoff(cut, bg);
  const ABPReport abp = abp_check(sol, cut, lambda);
  Analysis a{estimate_report(sol),
             std::move(cut),
             cert,
             abp,
             ibp_identity_terms(sol, lambda),
             ibp_identity_residual(sol, lambda),
             l1_H_bound(sol, lambda),
             bochner_relative_residual(sol),
             diff_inequality(sol, lambda)};
  return a;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// ---- commands ----

void run_single(const RunConfig& c, RunReport& rep) {
  json& j = rep.json;
  json& checks = j["checks"];
  auto bg = make_background(c);
  const ScalarField F = normalize_density(raw_density(c.density, *bg), *bg);
  const MASolution sol = solve(make_problem(c, bg, F));
  const Analysis a = analyze(sol, c);

  j["solve"] = solver_json(sol);
  j["estimate"] = to_json(a.est);
  j["cutoff"] = to_json(a.cut, a.cert);
  j["abp"] = to_json(a.abp);
  j["ibp"] = {{"lhs", a.ibp.lhs}, {"rhs", a.ibp.rhs}, {"residual", a.ibp_residual}};
  j["l1_H"] = {{"value", a.l1.value}, {"bound", a.l1.bound}};
  rep.tables["solver_log.csv"] = solver_log_csv(sol);

  const double tol = std::max(c.newton_tol, 1e-12);
  add_check(checks, "residual", sol.residual_sup, "<=", tol, sol.residual_sup <= tol);
  add_check(checks, "certificate", a.est.certificate_excess, "<=", 0.0, a.est.certificate_ok);

  if (c.command == Command::Verify) {
    const double bochner_tol = bg->is_flat() ? 1e-8 : 1e-4;
    add_check(checks, "bochner_relative_residual", a.bochner_rel, "<=", bochner_tol,
              a.bochner_rel <= bochner_tol);
    add_check(checks, "diff_inequality_min_relative_slack", a.ineq.min_relative, ">=", -1e-6,
              a.ineq.min_relative >= -1e-6);
    add_check(checks, "cutoff_certificate", a.cert.ok ? 1.0 : 0.0, "==", 1.0, a.cert.ok);
    const double theta = cutoff_theta(c.n, a.cut.r, a.cut.C0);
    add_check(checks, "cutoff_theta_exact", std::abs(a.cut.theta - theta), "==", 0.0,
              a.cut.theta == theta);
    const double gap = a.abp.sup_inner - a.abp.sup_boundary;
    const double chain = a.abp.implied_constant * a.abp.integral_term;
    const double slack = 1e-12 * std::max(1.0, std::abs(gap));
    add_check(checks, "abp_chain", gap - chain, "<=", slack,
              std::isfinite(a.abp.implied_constant) && gap - chain <= slack);
    if (c.abp_refine) {
      RunConfig fine = c;
      fine.N = 2 * c.N;
      auto bg2 = make_background(fine);
      const ScalarField F2 = normalize_density(raw_density(c.density, *bg2), *bg2);
      const MASolution sol2 = solve(make_problem(fine, bg2, F2));
      const Analysis a2 = analyze(sol2, fine);
      const double c1 = a.abp.implied_constant, c2 = a2.abp.implied_constant;
      const double rel = c1 > 0.0 ? std::abs(c2 / c1 - 1.0) : (c2 == 0.0 ? 0.0 : 1.0);
      j["abp_refined"] = to_json(a2.abp);
      add_check(checks, "abp_implied_constant_stability", rel, "<=", 0.2, rel <= 0.2);
    }
    add_check(checks, "ibp_identity_residual", a.ibp_residual, "<=", 1e-8, a.ibp_residual <= 1e-8);
    const double margin = a.l1.bound - a.l1.value;
    add_check(checks, "l1_H_margin", margin, ">", 0.0, margin > 0.0);
  }

  if (c.snapshots && !c.output_dir.empty()) {
    const std::filesystem::path dir(c.output_dir);
    write_snapshot(sol.phi, (dir / "phi").string(), "phi");
    write_snapshot(sol.problem.F, (dir / "F").string(), "F");
  }
}

std::optional<double> read_baseline(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in).at("sup_H").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError("sweep baseline " + path + " is unreadable: " + e.what());
  }
}

void run_sweep(const RunConfig& c, RunReport& rep) {
  json& j = rep.json;
  json& checks = j["checks"];
  if (c.sweep_a.empty() || c.sweep_a.front() != 1.0) {
    throw ConfigError("config: sweep.a_values must start at 1");
  }
  auto bg = make_background(c);
  const StressSpec spec{c.sweep_width1, c.sweep_amplitude1, c.sweep_center};
  const std::size_t count = c.sweep_a.size();

  struct Row {
    std::optional<StressMember> member;
    std::optional<MASolution> sol;
    double sup_H = std::numeric_limits<double>::quiet_NaN();
    std::string error;
  };
  std::vector<Row> rows(count);
  parallel_for(count, workers_from_env(), [&](std::size_t i) {
    try {
      rows[i].member = stress_family(*bg, spec, c.sweep_a[i]);
      rows[i].sol = solve(make_problem(c, bg, rows[i].member->F));
      rows[i].sup_H = H_field(*rows[i].sol, lambda_of(bg->K())).max();
    } catch (const Error& e) {
      rows[i].error = e.what();
    }
  });

  std::ostringstream csv;
  csv << "a,width,amplitude,sup_F,wgrad_F_norm,grad_F_inf,sup_H,residual_sup\n";
  json table = json::array();
  bool complete = true;
  for (std::size_t i = 0; i < count; ++i) {
    const Row& r = rows[i];
    json row{{"a", c.sweep_a[i]}};
    if (r.member) {
      const auto& m = *r.member;
      row.update({{"width", m.width},
                  {"amplitude", m.amplitude},
                  {"sup_F", m.sup_F},
                  {"wgrad_F_norm", m.wgrad_F_norm},
                  {"grad_F_inf", m.grad_F_inf}});
    }
    if (r.sol) row.update({{"sup_H", r.sup_H}, {"residual_sup", r.sol->residual_sup}, {"iterations", r.sol->iterations}});
    if (!r.error.empty()) {
      row["error"] = r.error;
      complete = false;
    }
    table.push_back(row);
    auto num = [&](const char* key) {
      return row.contains(key) ? csv_number(row[key].get<double>()) : std::string("nan");
    };
    csv << csv_number(c.sweep_a[i]) << ',' << num("width") << ',' << num("amplitude") << ','
        << num("sup_F") << ',' << num("wgrad_F_norm") << ',' << num("grad_F_inf") << ','
        << num("sup_H") << ',' << num("residual_sup") << '\n';
  }
  j["sweep"] = {{"members", table}};
  rep.tables["sweep.csv"] = csv.str();
  // The frozen reference comes from the a = 1 member whenever it solved.
  double baseline = rows.front().sup_H;
  if (rows.front().sol) {
    std::string baseline_path = c.sweep_baseline;
    if (baseline_path.empty() && !c.output_dir.empty()) {
      baseline_path = (std::filesystem::path(c.output_dir) / "sweep_baseline.json").string();
    }
    if (!baseline_path.empty()) {
      if (auto frozen = read_baseline(baseline_path)) {
        baseline = *frozen;
      } else {
        write_file(baseline_path, json{{"sup_H", baseline}}.dump(2) + "\n");
      }
    }
    j["sweep"]["baseline_sup_H"] = baseline;
  }

  add_check(checks, "sweep_complete", complete ? 1.0 : 0.0, "==", 1.0, complete);
  const bool constructed = std::all_of(rows.begin(), rows.end(), [](const Row& r) { return r.member.has_value(); });
  if (!constructed) return;

  // Properties of the density family itself; they do not depend on the solves.
  const StressMember& base = *rows.front().member;
  double wgrad_dev = 0.0, supF_ratio_hi = 0.0, supF_ratio_lo = INFINITY;
  bool monotone = true;
  for (std::size_t i = 0; i < count; ++i) {
    const StressMember& m = *rows[i].member;
    wgrad_dev = std::max(wgrad_dev, std::abs(m.wgrad_F_norm / base.wgrad_F_norm - 1.0));
    supF_ratio_hi = std::max(supF_ratio_hi, m.sup_F / base.sup_F);
    supF_ratio_lo = std::min(supF_ratio_lo, m.sup_F / base.sup_F);
    if (i > 0 && !(m.grad_F_inf >= rows[i - 1].member->grad_F_inf)) monotone = false;
  }
  const double growth = rows.back().member->grad_F_inf / base.grad_F_inf;
  add_check(checks, "wgrad_F_held", wgrad_dev, "<=", 0.01, wgrad_dev <= 0.01);
  add_check(checks, "sup_F_within_2x", std::max(supF_ratio_hi, 1.0 / supF_ratio_lo), "<=", 2.0,
            supF_ratio_hi <= 2.0 && supF_ratio_lo >= 0.5);
  add_check(checks, "grad_F_inf_growth", growth, ">=", 10.0, growth >= 10.0);
  add_check(checks, "grad_F_inf_monotone", monotone ? 1.0 : 0.0, "==", 1.0, monotone);
  if (!complete) return;

  double supH_max = 0.0;
  for (const Row& r : rows) supH_max = std::max(supH_max, r.sup_H);
  add_check(checks, "sup_H_within_10x_baseline", supH_max / baseline, "<=", 10.0,
            supH_max <= 10.0 * baseline);
}

void run_degenerate(const RunConfig& c, RunReport& rep) {
  json& j = rep.json;
  json& checks = j["checks"];
  auto bg = make_background(c);
  const Profile profile{c.deg_profile == "power" ? Profile::Kind::Power : Profile::Kind::LogType,
                        c.deg_eps0};
  const auto base = make_degenerate(*bg, {c.deg_center}, profile, c.deg_patch_radius);
  const double base_sobolev = sobolev_quantity(base.f, *bg);
  const auto fam = build_family(bg, base, c.deg_k, workers_from_env());
  const auto r = lipschitz_study(fam);
  rep.tables["family.csv"] = family_csv(r);

  json failures = json::object();
  for (std::size_t i = 0; i < fam.failures.size(); ++i) {
    if (!fam.failures[i].empty()) failures[std::to_string(fam.k_values[i])] = fam.failures[i];
  }
  j["family"] = {{"profile", to_string(profile)},
                 {"sobolev_f", base_sobolev},
                 {"k", r.k_values},
                 {"sobolev_k", r.sobolev_k},
                 {"grad_sup_k", r.grad_sup_k},
                 {"sup_H_k", r.sup_H_k},
                 {"cauchy_gaps", r.cauchy_gaps},
                 {"grad_spread", r.grad_spread},
                 {"failures", failures}};

  double sob_ratio = 0.0;
  for (double s : r.sobolev_k) sob_ratio = std::max(sob_ratio, s / base_sobolev);
  add_check(checks, "family_complete", r.complete ? 1.0 : 0.0, "==", 1.0, r.complete);
  add_check(checks, "sobolev_k_within_2x", sob_ratio, "<=", 2.0, sob_ratio <= 2.0);
  add_check(checks, "grad_sup_k_spread", r.complete ? r.grad_spread : 0.0, "<=", 2.0, r.uniform_ok);
  add_check(checks, "cauchy_gaps_decreasing", r.gaps_decreasing ? 1.0 : 0.0, "==", 1.0,
            r.gaps_decreasing);

  // Log-type contrast: the classical driver against the Sobolev quantity across resolutions.
  std::ostringstream csv;
  csv << "N,driver,sobolev\n";
  json study = json::array();
  std::vector<double> drivers, sobolevs;
  for (int N : c.log_N) {
    const BackgroundMetric lbg = make_flat_background(GridSpec(c.n, N));
    const auto d = make_log_vanishing(lbg, {c.log_center}, c.log_patch_radius);
    drivers.push_back(classical_driver(d.f, lbg));
    sobolevs.push_back(sobolev_quantity(d.f, lbg));
    study.push_back({{"N", N}, {"driver", drivers.back()}, {"sobolev", sobolevs.back()}});
    csv << N << ',' << csv_number(drivers.back()) << ',' << csv_number(sobolevs.back()) << '\n';
  }
  j["log_driver"] = study;
  rep.tables["log_driver.csv"] = csv.str();
  const double growth = drivers.back() / drivers.front();
  const auto [lo, hi] = std::minmax_element(sobolevs.begin(), sobolevs.end());
  const double variation = *hi / *lo - 1.0;
  add_check(checks, "log_driver_growth", growth, ">=", 2.0, growth >= 2.0);
  add_check(checks, "log_sobolev_variation", variation, "<=", 0.1, variation <= 0.1);
}

}  // namespace

Command parse_command(const std::string& s) {
  if (s == "solve") return Command::Solve;
  if (s == "verify") return Command::Verify;
  if (s == "sweep") return Command::Sweep;
  if (s == "degenerate") return Command::Degenerate;
  throw ConfigError("unknown command '" + s + "'");
}

const char* to_string(Command c) {
  switch (c) {
    case Command::Solve: return "solve";
    case Command::Verify: return "verify";
    case Command::Sweep: return "sweep";
    case Command::Degenerate: return "degenerate";
  }
  return "?";
}

RunConfig parse_config_file(const std::string& path) {
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(path, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return from_ptree(tree);
}

RunConfig parse_config_string(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return from_ptree(tree);
}

json to_json(const RunConfig& c) {
  const int dims = 2 * c.n;
  const DensitySpec& d = c.density;
  return {
      {"command", to_string(c.command)},
      {"seed", c.seed},
      {"grid", {{"n", c.n}, {"N", c.N}}},
      {"background", {{"kind", c.background}, {"psi_scale", c.psi_scale}}},
      {"density",
       {{"family", d.family},
        {"epsilon", d.epsilon},
        {"axis", d.axis},
        {"wavenumber", d.wavenumber},
        {"amplitude", d.amplitude},
        {"width", d.width},
        {"center", coords_json(d.center, dims)},
        {"eps0", d.eps0},
        {"patch_radius", d.patch_radius},
        {"k", d.k},
        {"snapshot", d.snapshot}}},
      {"solver",
       {{"tol", c.newton_tol},
        {"max_iters", c.max_newton_iters},
        {"continuation_steps", c.continuation_steps}}},
      {"estimate", {{"r", c.cutoff_r}, {"C0", c.cutoff_C0}, {"alpha", c.alpha}, {"abp_refine", c.abp_refine}}},
      {"sweep",
       {{"a_values", c.sweep_a},
        {"width1", c.sweep_width1},
        {"amplitude1", c.sweep_amplitude1},
        {"center", coords_json(c.sweep_center, dims)}}},
      {"degenerate",
       {{"profile", c.deg_profile},
        {"eps0", c.deg_eps0},
        {"center", coords_json(c.deg_center, dims)},
        {"patch_radius", c.deg_patch_radius},
        {"k_values", c.deg_k},
        {"log_center", coords_json(c.log_center, dims)},
        {"log_patch_radius", c.log_patch_radius},
        {"log_N", c.log_N}}},
      {"output", {{"snapshots", c.snapshots}}},
  };
}

int workers_from_env() {
  const char* v = std::getenv("CMA_WORKERS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long w = std::strtol(v, &end, 10);
  if (*end != '\0' || w < 1 || w > 1024) throw ConfigError(std::string("CMA_WORKERS: bad value '") + v + "'");
  return static_cast<int>(w);
}

BackgroundPtr make_background(const RunConfig& c) {
  const GridSpec g(c.n, c.N);
  if (c.background == "flat") return std::make_shared<const BackgroundMetric>(make_flat_background(g));
  const double s = c.psi_scale;
  const int n = c.n;
  auto psi = ScalarField::generate(g, [n, s](const Coords& x) {
    double v = 0.02 * std::cos(two_pi * x[0]) + 0.01 * std::sin(two_pi * (x[0] + x[1]));
    if (n == 2) v += 0.015 * std::sin(two_pi * x[2]) * std::cos(two_pi * x[1]) + 0.01 * std::cos(two_pi * x[3]);
    return s * v;
  });
  return std::make_shared<const BackgroundMetric>(make_perturbed_background(g, psi));
}

ScalarField raw_density(const DensitySpec& d, const BackgroundMetric& bg) {
  const GridSpec& g = bg.grid();
  const int dims = g.real_dims();
  if (d.family == "zero") return ScalarField(g, 0.0);
  if (d.family == "trig") {
    if (!(std::abs(d.epsilon) < 1.0)) throw ConfigError("density: trig needs |epsilon| < 1");
    return ScalarField::generate(g, [&](const Coords& x) {
      return std::log1p(d.epsilon * std::sin(two_pi * d.wavenumber * x[d.axis]));
    });
  }
  if (d.family == "bump") {
    if (!(d.width > 0.0)) throw ConfigError("density: bump needs width > 0");
    return ScalarField::generate(g, [&](const Coords& x) {
      return d.amplitude * std::exp(-surrogate_distance_sq(dims, x, d.center) / (d.width * d.width));
    });
  }
  if (d.family == "snapshot") {
    Snapshot s = read_snapshot(d.snapshot);
    require_same_grid(s.field.grid(), g, "density snapshot");
    return s.field;
  }
  const Profile profile{d.family == "power" ? Profile::Kind::Power : Profile::Kind::LogType, d.eps0};
  const auto deg = make_degenerate(bg, {d.center}, profile, d.patch_radius);
  const ScalarField f = d.k > 0 ? regularize(deg, bg, d.k) : deg.f;
  if (!(f.min() > 0.0)) throw ConfigError("density: f vanishes on the grid; set density.k");
  return f.map([](double v) { return std::log(v); });
}

double stress_wgrad(const BackgroundMetric& bg, const StressSpec& s, double width, double A) {
  const int dims = bg.grid().real_dims();
  const ScalarField raw = ScalarField::generate(bg.grid(), [&](const Coords& x) {
    return A * std::exp(-surrogate_distance_sq(dims, x, s.center) / (width * width));
  });
  const ScalarField F = normalize_density(raw, bg);
  const ScalarField g = grad_norm_sq(F, bg.inverse_g0()).map([](double v) { return std::sqrt(std::max(0.0, v)); });
  const ScalarField w = F.map([](double v) { return std::exp(2.0 * v); }) * bg.det_g0();
  return lp_norm(g, 2.0 * bg.dim(), w);
}

StressMember stress_family(const BackgroundMetric& bg, const StressSpec& s, double a) {
  if (!(a >= 1.0 && a <= 100.0)) throw Error("stress_family: a must lie in [1, 100]");
  if (!(s.width1 > 0.0) || !(s.amplitude1 > 0.0)) {
    throw Error("stress_family: width1 and amplitude1 must be positive");
  }
  const double width = s.width1 / a;
  const double target = stress_wgrad(bg, s, s.width1, s.amplitude1);
  double A = s.amplitude1;
  if (a != 1.0) {
    auto gap = [&](double amp) { return stress_wgrad(bg, s, width, amp) - target; };
    double hi = s.amplitude1;
    int grow = 0;
    while (gap(hi) < 0.0) {
      if (++grow > 60) throw Error("stress_family: no amplitude bracket found");
      hi *= 2.0;
    }
    std::uintmax_t iters = 200;
    const auto [lo_root, hi_root] = boost::math::tools::toms748_solve(
        gap, 0.0, hi, -target, gap(hi), boost::math::tools::eps_tolerance<double>(45), iters);
    A = 0.5 * (lo_root + hi_root);
  }
  const int dims = bg.grid().real_dims();
  const ScalarField raw = ScalarField::generate(bg.grid(), [&](const Coords& x) {
    return A * std::exp(-surrogate_distance_sq(dims, x, s.center) / (width * width));
  });
  StressMember m{a, width, A, normalize_density(raw, bg), 0.0, 0.0, 0.0};
  m.sup_F = m.F.max();
  m.wgrad_F_norm = stress_wgrad(bg, s, width, A);
  m.grad_F_inf = std::sqrt(std::max(0.0, grad_norm_sq(m.F, bg.inverse_g0()).max()));
  if (!(std::abs(m.wgrad_F_norm / target - 1.0) <= 0.01)) {
    throw Error("stress_family: root-find missed the weighted gradient norm by more than 1%");
  }
  return m;
}

RunReport run(const RunConfig& config) {
  RunReport rep;
  json& j = rep.json;
  j["schema_version"] = schema_version;
  j["command"] = to_string(config.command);
  j["config"] = to_json(config);
  j["checks"] = json::object();
  if (!config.output_dir.empty()) std::filesystem::create_directories(config.output_dir);

  const std::string context = std::string(to_string(config.command)) + ": ";
  try {
    switch (config.command) {
      case Command::Solve:
      case Command::Verify: run_single(config, rep); break;
      case Command::Sweep: run_sweep(config, rep); break;
      case Command::Degenerate: run_degenerate(config, rep); break;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const SolverError& e) {
    throw SolverError(e.kind(), context + e.what(), e.last());
  } catch (const Error& e) {
    throw Error(context + e.what());
  }

  const bool finite = all_finite(j);
  add_check(j["checks"], "report_finite", finite ? 1.0 : 0.0, "==", 1.0, finite);
  rep.all_pass = true;
  for (const auto& [name, chk] : j["checks"].items()) rep.all_pass = rep.all_pass && chk["pass"].get<bool>();
  j["all_pass"] = rep.all_pass;

  if (!config.output_dir.empty()) {
    const std::filesystem::path dir(config.output_dir);
    write_file(dir / "report.json", dump_report(rep));
    for (const auto& [name, text] : rep.tables) write_file(dir / name, text);
  }
  return rep;
}

std::string dump_report(const RunReport& r) { return r.json.dump(2) + "\n"; }

}  // namespace cma
