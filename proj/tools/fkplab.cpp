// fkplab: command-line driver. Configuration precedence is flags > JSON
// config file > built-in defaults; --print-effective-config shows the merge.
//
// Exit status: 0 success, 2 results outside tolerance, 1 errors.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fkplab/fkplab.hpp"

namespace {

using fkplab::io::json;
namespace io = fkplab::io;

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kFlagged = 2;

json defaults() {
  return {
      {"weight", {{"n", 1}, {"family", "constant"}, {"params", {{"c", 1.0}}}}},
      {"family", {{"r_min", 1.0 / 64.0}, {"r_max", 1.0}, {"radii", 33}, {"centers", 65}}},
      {"carleson_family", {{"radii", 14}, {"centers", 9}}},
      {"tol", 1e-10},
      {"M", 10.0},
      {"lattice", 5},
      {"kernel", "gauss"},
      {"octaves", 10},
      {"threads", 0},
      {"identity", {{"rel_tol", 1e-2}, {"abs_tol", 1e-4}, {"x", {0.5, 2.0}}, {"r", {0.25, 1.0}}, {"count", 3}}},
      {"sweep", {{"family", "power"}, {"t", {0.4, 0.2, 0.1, 0.05}}}},
      {"coefficients", {{"family", "identity"}}},
      {"experiment", {{"eps", {0.2, 0.1, 0.05}}, {"bump", {{"y", 0.0}, {"s", 0.75}, {"radius", 0.5}}}}},
      {"kernel_export", {{"n", 1}, {"eta", 0.5}, {"kappa", 8.0}}},
  };
}

// Recursive object merge; non-object values in `over` replace those in `base`.
void merge(json& base, const json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object()) merge(base[it.key()], *it);
    else base[it.key()] = *it;
  }
}

struct Flags {
  std::string config;
  std::string out;
  std::optional<double> tol;
  std::optional<int> samples;
  std::optional<int> threads;
  std::string export_kernel;
  bool print_effective = false;
};

json effective_config(const Flags& f) {
  json cfg = defaults();
  if (!f.config.empty()) {
    const json file = io::load_json_file(f.config, "--config");
    if (!file.is_object()) throw fkplab::ConfigError("--config", "top level must be an object");
    merge(cfg, file);
  }
  if (f.tol) cfg["tol"] = *f.tol;
  if (f.samples) {
    cfg["family"]["centers"] = *f.samples;
    cfg["carleson_family"]["centers"] = *f.samples;
  }
  if (f.threads) cfg["threads"] = *f.threads;
  return cfg;
}

/// Writes `text` to <out>/<name>, or to stdout when no directory is given.
void emit(const Flags& f, const std::string& name, const std::string& text) {
  if (f.out.empty()) {
    std::cout << text;
    return;
  }
  std::filesystem::create_directories(f.out);
  const auto path = std::filesystem::path(f.out) / name;
  std::ofstream o(path, std::ios::binary);
  if (!o) throw fkplab::ConfigError("--out", "cannot write '" + path.string() + "'");
  o << text;
}

double tol_of(const json& cfg) {
  const double t = io::get_number(cfg, "tol", "");
  if (!(t > 0.0)) throw fkplab::ConfigError("tol", "must be positive");
  return t;
}

int threads_of(const json& cfg) {
  const int t = io::get_int_or(cfg, "threads", "", 0);
  if (t < 0) throw fkplab::ConfigError("threads", "must be >= 0");
  return t;
}

fkplab::SamplingFamily carleson_family_of(const json& cfg, int n) {
  const json& j = cfg.at("carleson_family");
  const int radii = io::get_int_or(j, "radii", "carleson_family", 14);
  const int centers = io::get_int_or(j, "centers", "carleson_family", 9);
  if (radii < 1) throw fkplab::ConfigError("carleson_family.radii", "must be >= 1");
  auto f = fkplab::default_carleson_family(n, centers, radii);
  return io::parse_family(j, n, f, "carleson_family");
}

fkplab::BoxMassOptions box_options(const json& cfg) {
  fkplab::BoxMassOptions o;
  o.octaves = io::get_int_or(cfg, "octaves", "", o.octaves);
  if (o.octaves < 1) throw fkplab::ConfigError("octaves", "must be >= 1");
  const std::string k = io::get_string(cfg, "kernel", "");
  if (k == "gauss") o.kernel = fkplab::FkpKernel::gauss;
  else if (k == "reference_bump") o.kernel = fkplab::FkpKernel::reference_bump;
  else throw fkplab::ConfigError("kernel", "expected 'gauss' or 'reference_bump'");
  o.heat.tol = tol_of(cfg);
  return o;
}

int weight_analyze(const json& cfg, const Flags& f) {
  const auto w = io::parse_weight(cfg.at("weight"));
  const int n = w.dimension();
  const int threads = threads_of(cfg);
  const double tol = tol_of(cfg);
  fkplab::SamplingFamily fam_default;
  if (n == 2) fam_default.centers = 17;
  const auto fam = io::parse_family(cfg.at("family"), n, fam_default, "family");
  const auto balls = fam.balls();
  const double M = io::get_number(cfg, "M", "");
  if (!(M > 1.0)) throw fkplab::ConfigError("M", "must exceed 1");
  const int lattice = io::get_int_or(cfg, "lattice", "", 5);
  if (lattice < 2) throw fkplab::ConfigError("lattice", "must be >= 2");

  const auto doubling = fkplab::doubling_constant(w, balls, fkplab::default_modulus_ratios(), threads);
  const auto good = fkplab::good_doubling_deficit(w, M, balls, lattice, threads);
  const auto ainf = fkplab::ainfty_constant(w, balls, tol, threads);
  const auto carl = fkplab::carleson_norm(w, carleson_family_of(cfg, n).balls(), box_options(cfg), threads);
  json out = {{"weight", io::to_json(w)},
              {"doubling", io::to_json(doubling, n)},
              {"good_doubling", io::to_json(good, n)},
              {"ainfty", ainf.value},
              {"ainfty_estimate", io::to_json(ainf, n)},
              {"carleson", carl.value},
              {"carleson_estimate", io::to_json(carl, n)}};
  emit(f, "weight_analyze.json", out.dump(2) + "\n");
  return kOk;
}

int carleson(const json& cfg, const Flags& f) {
  const auto w = io::parse_weight(cfg.at("weight"));
  const int n = w.dimension();
  const auto est = fkplab::carleson_norm(w, carleson_family_of(cfg, n).balls(), box_options(cfg), threads_of(cfg));
  json out = io::to_json(est, n);
  out["kernel"] = cfg.at("kernel");
  out["weight"] = io::to_json(w);
  emit(f, "carleson.json", out.dump(2) + "\n");
  return kOk;
}

int fkp_check(const json& cfg, const Flags& f) {
  const auto w = io::parse_weight(cfg.at("weight"));
  const json& id = cfg.at("identity");
  const double rel = io::get_number(id, "rel_tol", "identity");
  const double abs = io::get_number(id, "abs_tol", "identity");
  if (!(rel > 0.0)) throw fkplab::ConfigError("identity.rel_tol", "must be positive");
  if (!(abs > 0.0)) throw fkplab::ConfigError("identity.abs_tol", "must be positive");
  std::vector<fkplab::BallQuery> balls;
  if (id.contains("points")) {
    const auto& pts = id.at("points");
    if (!pts.is_array()) throw fkplab::ConfigError("identity.points", "expected an array of [x, r] pairs");
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const std::string p = "identity.points[" + std::to_string(i) + "]";
      if (!pts[i].is_array() || pts[i].size() < 2 || !pts[i][0].is_number() || !pts[i].back().is_number())
        throw fkplab::ConfigError(p, "expected [x, r] or [x, y, r]");
      const double y = pts[i].size() == 3 ? pts[i][1].get<double>() : 0.0;
      balls.push_back({{pts[i][0].get<double>(), y}, pts[i].back().get<double>()});
      if (!(balls.back().radius > 0.0)) throw fkplab::ConfigError(p, "radius must be positive");
    }
  } else {
    const auto xs = io::get_numbers(id, "x", "identity");
    const auto rs = io::get_numbers(id, "r", "identity");
    const int count = io::get_int_or(id, "count", "identity", 3);
    if (xs.size() != 2) throw fkplab::ConfigError("identity.x", "expected [lo, hi]");
    if (rs.size() != 2 || !(rs[0] > 0.0)) throw fkplab::ConfigError("identity.r", "expected [lo, hi] with lo > 0");
    if (count < 1) throw fkplab::ConfigError("identity.count", "must be >= 1");
    auto lin = [count](double a, double b, int k) { return count == 1 ? a : a + (b - a) * k / (count - 1); };
    for (int i = 0; i < count; ++i)
      for (int k = 0; k < count; ++k) balls.push_back({{lin(xs[0], xs[1], i), 0.0}, lin(rs[0], rs[1], k)});
  }
  fkplab::FkpOptions opt;
  opt.heat.tol = tol_of(cfg);
  opt.tol = opt.heat.tol;
  const auto reports = fkplab::identity_batch(w, balls, opt, threads_of(cfg));
  std::ostringstream csv;
  io::write_identity_csv(reports, csv);
  emit(f, "fkp_check.csv", csv.str());
  bool flagged = false;
  for (const auto& r : reports) flagged = flagged || r.heat_scaled_residual > std::max(rel * r.lhs, abs);
  return flagged ? kFlagged : kOk;
}

int sweep(const json& cfg, const Flags& f) {
  const json& s = cfg.at("sweep");
  const std::string fam = io::get_string(s, "family", "sweep");
  const auto ts = io::get_numbers(s, "t", "sweep");
  const int n = io::get_int_or(s, "n", "sweep", 1);
  if (n != 1 && n != 2) throw fkplab::ConfigError("sweep.n", "must be 1 or 2");
  std::vector<fkplab::SweepInput> inputs;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double t = ts[i];
    try {
      if (t == 0.0) inputs.push_back({t, fkplab::WeightSpec::constant(n, 1.0)});
      else if (fam == "power") inputs.push_back({t, fkplab::WeightSpec::power(n, t)});
      else if (fam == "plateau") inputs.push_back({t, fkplab::WeightSpec::plateau(n, t)});
      else throw fkplab::ConfigError("sweep.family", "expected 'power' or 'plateau'");
    } catch (const std::invalid_argument& e) {
      throw fkplab::ConfigError("sweep.t[" + std::to_string(i) + "]", e.what());
    }
  }
  fkplab::SweepOptions opt;
  opt.tol = tol_of(cfg);
  opt.fkp.heat.tol = opt.tol;
  opt.fkp.box = box_options(cfg);
  const auto rows = fkplab::theorem_sweep(inputs, carleson_family_of(cfg, n).balls(), opt, threads_of(cfg));
  std::ostringstream csv;
  fkplab::write_sweep_csv(rows, csv);
  emit(f, "sweep.csv", csv.str());
  for (const auto& r : rows)
    if (!r.log_bound_holds) return kFlagged;
  return kOk;
}

int dkp_solve(const json& cfg, const Flags& f) {
  const auto A = io::parse_coefficients(cfg.at("coefficients"));
  A.validate();
  const auto green = fkplab::green_at_infinity(A);
  const auto dens = fkplab::elliptic_measure_infinity(A, green);
  const auto riesz = fkplab::riesz_validation(A, green, dens, fkplab::default_riesz_battery());
  std::ostringstream csv;
  fkplab::write_density_csv(dens, csv);
  json checks = json::array();
  for (const auto& c : riesz.checks)
    checks.push_back({{"center", c.center}, {"radius", c.radius}, {"conormal", c.conormal}, {"pairing", c.pairing},
                      {"relative_gap", c.relative_gap}});
  json summary = {{"normalization", green.normalization},
                  {"ratio_discrepancy", green.ratio_discrepancy},
                  {"profile_gap", green.profile_gap},
                  {"boundary_zero", green.boundary_zero},
                  {"positive", green.positive},
                  {"riesz", {{"worst", riesz.worst}, {"flagged", riesz.flagged}, {"checks", checks}}}};
  if (f.out.empty()) {
    std::cout << summary.dump(2) << "\n" << csv.str();
  } else {
    emit(f, "dkp_density.csv", csv.str());
    emit(f, "dkp_solve.json", summary.dump(2) + "\n");
  }
  return riesz.flagged || !green.positive ? kFlagged : kOk;
}

int dkp_experiment(const json& cfg, const Flags& f) {
  const json& e = cfg.at("experiment");
  const auto eps = io::get_numbers(e, "eps", "experiment");
  const json bump = e.contains("bump") ? e.at("bump") : json::object();
  const fkplab::GridSpec grid = io::parse_grid(
      cfg.at("coefficients").contains("grid") ? cfg.at("coefficients").at("grid") : json::object(), "coefficients.grid");
  std::vector<fkplab::DkpInput> inputs;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    fkplab::ScalarBump b;
    b.eps = eps[i];
    b.y = io::get_number_or(bump, "y", "experiment.bump", b.y);
    b.s = io::get_number_or(bump, "s", "experiment.bump", b.s);
    b.radius = io::get_number_or(bump, "radius", "experiment.bump", b.radius);
    try {
      inputs.push_back({eps[i], eps[i] == 0.0 ? fkplab::identity_field(grid) : fkplab::bump_field({b}, grid)});
      inputs.back().field.validate();
    } catch (const std::invalid_argument& ex) {
      throw fkplab::ConfigError("experiment.eps[" + std::to_string(i) + "]", ex.what());
    }
  }
  fkplab::DkpOptions opt;
  opt.tol = tol_of(cfg);
  opt.box = box_options(cfg);
  const auto rows = fkplab::dkp_experiment(inputs, opt, threads_of(cfg));
  std::ostringstream csv;
  fkplab::write_dkp_csv(rows, csv);
  emit(f, "dkp_experiment.csv", csv.str());
  for (const auto& r : rows)
    if (r.flagged) return kFlagged;
  return kOk;
}

int export_kernel(const json& cfg, const Flags& f) {
  const json& k = cfg.at("kernel_export");
  static const std::vector<std::pair<std::string, fkplab::KernelKind>> kinds = {
      {"gauss", fkplab::KernelKind::gauss},
      {"gauss_gradient", fkplab::KernelKind::gauss_gradient},
      {"indicator", fkplab::KernelKind::indicator},
      {"normalized_indicator", fkplab::KernelKind::normalized_indicator},
      {"reference_bump", fkplab::KernelKind::reference_bump},
      {"eta_bump", fkplab::KernelKind::eta_bump},
      {"truncated_gauss", fkplab::KernelKind::truncated_gauss}};
  fkplab::KernelDescriptor d;
  bool found = false;
  for (const auto& [name, kind] : kinds)
    if (name == f.export_kernel) {
      d.kind = kind;
      found = true;
    }
  if (!found) throw fkplab::ConfigError("--export-kernel", "unknown kernel '" + f.export_kernel + "'");
  d.eta = io::get_number(k, "eta", "kernel_export");
  d.kappa = io::get_number(k, "kappa", "kernel_export");
  const int n = io::get_int_or(k, "n", "kernel_export", 1);
  try {
    std::ostringstream csv;
    fkplab::export_kernel_csv(fkplab::RadialKernel(n, d), csv);
    emit(f, "kernel_" + f.export_kernel + ".csv", csv.str());
  } catch (const std::invalid_argument& e) {
    throw fkplab::ConfigError("kernel_export", e.what());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fkplab: heat extensions, Carleson norms, A-infinity constants and elliptic measure"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  Flags flags;
  app.add_option("--config", flags.config, "JSON config file");
  app.add_option("--out", flags.out, "Output directory (default: stdout)");
  app.add_option("--tol", flags.tol, "Relative quadrature tolerance");
  app.add_option("--samples", flags.samples, "Sampled centres per axis for ball families");
  app.add_option("--threads", flags.threads, "Worker threads (0: FKPLAB_THREADS or hardware)");
  app.add_flag("--print-effective-config", flags.print_effective, "Print the merged configuration and exit");
  app.add_option("--export-kernel", flags.export_kernel, "Write a kernel profile table as CSV and exit");

  std::string command;
  auto* weight = app.add_subcommand("weight", "Weight diagnostics");
  weight->add_subcommand("analyze", "Doubling, M-good doubling, A-infinity and Carleson norm")
      ->callback([&] { command = "weight analyze"; });
  weight->require_subcommand(1);
  app.add_subcommand("carleson", "Carleson norm of the FKP measure with its witness box")
      ->callback([&] { command = "carleson"; });
  auto* fkp = app.add_subcommand("fkp", "Box-mass decomposition checks");
  fkp->add_subcommand("check", "Identity residuals over a batch of balls")->callback([&] { command = "fkp check"; });
  fkp->require_subcommand(1);
  app.add_subcommand("sweep", "Carleson norm, A-infinity constant and error term along a family")
      ->callback([&] { command = "sweep"; });
  auto* dkp = app.add_subcommand("dkp", "Elliptic measure at infinity");
  dkp->add_subcommand("solve", "Green function at infinity and boundary density")->callback([&] { command = "dkp solve"; });
  dkp->add_subcommand("experiment", "Weak-DKP norm versus the elliptic measure's norms")
      ->callback([&] { command = "dkp experiment"; });
  dkp->require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kError;
  }

  try {
    if (flags.tol && !(*flags.tol > 0.0)) throw fkplab::ConfigError("--tol", "must be positive");
    if (flags.samples && *flags.samples < 1) throw fkplab::ConfigError("--samples", "must be >= 1");
    if (flags.threads && *flags.threads < 0) throw fkplab::ConfigError("--threads", "must be >= 0");
    json cfg = effective_config(flags);
    if (!command.empty()) cfg["command"] = command;
    if (flags.print_effective) {
      std::cout << cfg.dump(2) << "\n";
      return kOk;
    }
    const int threads = threads_of(cfg);
    if (threads > 0) fkplab::default_thread_count() = threads;
    if (!flags.export_kernel.empty()) return export_kernel(cfg, flags);
    if (command == "weight analyze") return weight_analyze(cfg, flags);
    if (command == "carleson") return carleson(cfg, flags);
    if (command == "fkp check") return fkp_check(cfg, flags);
    if (command == "sweep") return sweep(cfg, flags);
    if (command == "dkp solve") return dkp_solve(cfg, flags);
    if (command == "dkp experiment") return dkp_experiment(cfg, flags);
    std::cerr << app.help();
    return kError;
  } catch (const fkplab::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  } catch (const fkplab::ToleranceNotMet& e) {
    std::cerr << "flagged: " << e.what() << " (best estimate " << e.best_estimate() << ", error "
              << e.error_bound() << ")\n";
    return kFlagged;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return kError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
}
