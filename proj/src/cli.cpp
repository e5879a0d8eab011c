#include "shjb/cli.hpp"

#include <CLI11.hpp>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>

#include "shjb/errors.hpp"
#include "shjb/families.hpp"
#include "shjb/galerkin.hpp"
#include "shjb/io.hpp"
#include "shjb/parallel.hpp"

#ifndef SHJB_VERSION
#define SHJB_VERSION "unknown"
#endif

namespace shjb {

using nlohmann::json;

std::vector<std::string> subcommands() {
  return {"simulate", "bsde", "value", "dpp-check", "pide", "verify",
          "bseej", "hjb-weak", "convergence", "validate-assumptions"};
}

std::string config_hash(const json& config) {
  const std::string s = config.dump();  // object keys are kept sorted
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

namespace {

// Typed access to the config with JSON-pointer style paths in errors.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }
  Node at(const std::string& key) const {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
    if (!j_.contains(key)) throw ConfigError(path_ + "/" + key, "required field is missing");
    return Node(j_.at(key), path_ + "/" + key);
  }
  const std::string& path() const { return path_; }
  const json& raw() const { return j_; }

  double number() const {
    if (!j_.is_number()) throw ConfigError(path_, "expected a number");
    return j_.get<double>();
  }
  long long integer() const {
    if (!j_.is_number_integer()) throw ConfigError(path_, "expected an integer");
    return j_.get<long long>();
  }
  std::string string() const {
    if (!j_.is_string()) throw ConfigError(path_, "expected a string");
    return j_.get<std::string>();
  }
  std::vector<double> numbers() const {
    if (!j_.is_array()) throw ConfigError(path_, "expected an array of numbers");
    std::vector<double> v;
    for (std::size_t k = 0; k < j_.size(); ++k) v.push_back(Node(j_[k], path_ + "/" + std::to_string(k)).number());
    return v;
  }
  std::vector<int> integers() const {
    if (!j_.is_array()) throw ConfigError(path_, "expected an array of integers");
    std::vector<int> v;
    for (std::size_t k = 0; k < j_.size(); ++k) {
      v.push_back(static_cast<int>(Node(j_[k], path_ + "/" + std::to_string(k)).integer()));
    }
    return v;
  }
  Vec vec(int dim) const {
    const auto v = numbers();
    if (static_cast<int>(v.size()) != dim) {
      throw ConfigError(path_, "expected " + std::to_string(dim) + " entries, got " + std::to_string(v.size()));
    }
    Vec out(dim);
    for (int k = 0; k < dim; ++k) out[k] = v[static_cast<std::size_t>(k)];
    return out;
  }

  double number(const std::string& key, double def) const { return has(key) ? at(key).number() : def; }
  long long integer(const std::string& key, long long def) const { return has(key) ? at(key).integer() : def; }
  double positive(const std::string& key, double def) const {
    const double v = number(key, def);
    if (!(v > 0.0)) throw ConfigError(path_ + "/" + key, "must be positive");
    return v;
  }
  std::size_t count(const std::string& key, long long def) const {
    const long long v = integer(key, def);
    if (v < 1) throw ConfigError(path_ + "/" + key, "must be at least 1");
    return static_cast<std::size_t>(v);
  }

 private:
  const json& j_;
  std::string path_;
};

struct Problem {
  CoefficientSet c;
  TimeGrid grid;
  std::uint64_t seed = 0;
  Vec x0;
  std::size_t samples = 10000;
  BsdeOptions bsde;
};

Problem load_problem(const Node& root) {
  Problem p;
  const std::string family = root.at("family").string();
  FamilyParams params;
  if (root.has("params")) {
    const Node pn = root.at("params");
    if (!pn.raw().is_object()) throw ConfigError(pn.path(), "expected an object");
    for (const auto& [k, v] : pn.raw().items()) params[k] = pn.at(k).number();
  }
  MarkMeasure mu;
  if (root.has("measure")) {
    try {
      mu = measure_from_json(root.at("measure").raw());
    } catch (const InvalidArgument& e) {
      throw ConfigError("/measure", e.what());
    }
  }
  const auto names = family_names();
  if (std::find(names.begin(), names.end(), family) == names.end()) {
    throw ConfigError("/family", "unknown family '" + family + "'");
  }
  try {
    p.c = make_family(family, params, mu);
  } catch (const InvalidArgument& e) {
    throw ConfigError("/params", e.what());
  }
  const Node seed = root.at("seed");
  if (!seed.raw().is_number_unsigned() && !(seed.raw().is_number_integer() && seed.integer() >= 0)) {
    throw ConfigError(seed.path(), "expected a nonnegative integer");
  }
  p.seed = seed.raw().get<std::uint64_t>();
  const Node time = root.at("time");
  p.grid = TimeGrid::uniform(time.positive("horizon", 1.0), time.count("steps", 100));
  p.x0 = root.has("x0") ? root.at("x0").vec(p.c.n) : zeros(p.c.n);
  p.samples = root.count("samples", 10000);
  if (root.has("regression")) {
    const Node r = root.at("regression");
    p.bsde.regression.degree = static_cast<int>(r.integer("degree", 3));
    p.bsde.regression.ridge = r.number("ridge", 1e-8);
    if (p.bsde.regression.degree < 0) throw ConfigError(r.path() + "/degree", "must be nonnegative");
  }
  return p;
}

ControlSet load_controls(const Node& root, int m) {
  if (!root.has("control")) return ControlSet::singleton(zeros(m));
  const Node c = root.at("control");
  const Vec lo = c.at("lo").vec(m), hi = c.at("hi").vec(m);
  for (int k = 0; k < m; ++k) {
    if (!(lo[k] <= hi[k])) throw ConfigError(c.path() + "/hi", "must not be below lo");
  }
  if (c.has("atoms")) {
    const Node a = c.at("atoms");
    if (!a.raw().is_array() || a.raw().empty()) throw ConfigError(a.path(), "expected a nonempty array");
    std::vector<Vec> atoms;
    for (std::size_t k = 0; k < a.raw().size(); ++k) {
      const Node e(a.raw()[k], a.path() + "/" + std::to_string(k));
      atoms.push_back(e.vec(m));
      for (int i = 0; i < m; ++i) {
        if (atoms.back()[i] < lo[i] || atoms.back()[i] > hi[i]) throw ConfigError(e.path(), "atom outside the control box");
      }
    }
    return ControlSet::from_atoms(std::move(atoms), lo, hi);
  }
  const auto pts = c.at("points").integers();
  if (static_cast<int>(pts.size()) != m) throw ConfigError(c.path() + "/points", "one entry per control dimension required");
  for (std::size_t k = 0; k < pts.size(); ++k) {
    if (pts[k] < 1) throw ConfigError(c.path() + "/points/" + std::to_string(k), "must be at least 1");
  }
  return ControlSet::grid(lo, hi, pts);
}

Vec load_constant_control(const Node& root, const ControlSet& U, int m) {
  if (root.has("u")) return root.at("u").vec(m);
  return U.atoms.front();
}

LatticeSpec load_lattice(const Node& root, int n) {
  const Node l = root.at("lattice");
  LatticeSpec s{l.at("lo").vec(n), l.at("hi").vec(n), l.at("cells").integers()};
  if (static_cast<int>(s.cells.size()) != n) throw ConfigError(l.path() + "/cells", "one entry per state dimension required");
  for (int k = 0; k < n; ++k) {
    if (s.cells[static_cast<std::size_t>(k)] < 2) throw ConfigError(l.path() + "/cells/" + std::to_string(k), "must be at least 2");
    if (!(s.lo[k] < s.hi[k])) throw ConfigError(l.path() + "/hi", "must exceed lo");
  }
  return s;
}

TensorGrid load_space(const Node& root, int n) {
  const Node s = root.at("space");
  const Vec lo = s.at("lo").vec(n), hi = s.at("hi").vec(n);
  const auto pts = s.at("points").integers();
  if (static_cast<int>(pts.size()) != n) throw ConfigError(s.path() + "/points", "one entry per state dimension required");
  for (int k = 0; k < n; ++k) {
    if (pts[static_cast<std::size_t>(k)] < 2) throw ConfigError(s.path() + "/points/" + std::to_string(k), "must be at least 2");
    if (!(lo[k] < hi[k])) throw ConfigError(s.path() + "/hi", "must exceed lo");
  }
  return TensorGrid(lo, hi, pts);
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

class Artifacts {
 public:
  explicit Artifacts(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  template <typename Writer>
  void csv(const std::string& name, Writer&& w) {
    std::ofstream os(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + (dir_ / name).string());
    w(os);
    files_.push_back(name);
  }
  void json_file(const std::string& name, const json& j) {
    std::ofstream os(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + (dir_ / name).string());
    os << j.dump(2) << '\n';
    files_.push_back(name);
  }
  const std::vector<std::string>& files() const { return files_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

GelfandTriple load_triple(const Node& root, int n) {
  const Node g = root.at("galerkin");
  const long long modes = g.integer("modes", 16);
  if (modes < 1) throw ConfigError(g.path() + "/modes", "must be at least 1");
  const long long intervals = g.integer("intervals", 0);
  if (intervals != 0 && intervals <= modes) throw ConfigError(g.path() + "/intervals", "must exceed modes");
  return assemble_triple(g.positive("L", 4.0), n, static_cast<int>(modes), static_cast<int>(intervals));
}

PicardOptions load_picard(const Node& root) {
  PicardOptions o;
  if (!root.has("galerkin")) return o;
  const Node g = root.at("galerkin");
  o.tol = g.positive("tol", 1e-8);
  o.max_iter = static_cast<int>(g.count("max_iter", 50));
  return o;
}

int run_subcommand(const std::string& sub, const Node& root, Artifacts& out, int halvings, json& summary) {
  Problem P = load_problem(root);
  CoefficientSet& c = P.c;
  c.validate();
  const ControlSet U = load_controls(root, c.m);
  summary["seed"] = P.seed;

  if (sub == "simulate") {
    const Vec u = load_constant_control(root, U, c.m);
    const DriverPath path = sample_path(P.grid, c.d, c.measure, P.seed);
    const StateTrajectory tr = simulate(c, constant_control(u), P.x0, path);
    out.csv("trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, tr); });
    return kExitOk;
  }
  if (sub == "bsde") {
    const Vec u = load_constant_control(root, U, c.m);
    const ForwardBatch batch = simulate_batch(c, constant_control(u), P.x0, P.grid, P.samples, P.seed);
    const BsdeSolution sol = solve_bsde(c, batch, P.bsde);
    out.csv("bsde.csv", [&](std::ostream& os) { write_bsde_csv(os, sol); });
    out.json_file("bsde.json", {{"y0", sol.y0}, {"y0_ci", sol.y0_ci}, {"z0", to_std(sol.z0)}, {"k0", to_std(sol.k0)},
                                {"ridge_fallback", sol.ridge_fallback}});
    return kExitOk;
  }
  if (sub == "value" || sub == "dpp-check") {
    const LatticeSpec lat = load_lattice(root, c.n);
    const ValueTable tab = compute_value_table(c, lat, P.grid, U);
    if (sub == "value") {
      out.csv("value_table.csv", [&](std::ostream& os) { write_value_table_csv(os, tab); });
      out.json_file("value.json", {{"V0", tab.value_at(0, P.x0)}, {"clamped", tab.clamped}});
      return kExitOk;
    }
    const Node d = root.has("dpp") ? root.at("dpp") : Node(json::object(), "/dpp");
    const auto t_node = static_cast<std::size_t>(d.integer("t_node", 0));
    const auto delta = static_cast<std::size_t>(d.integer("delta_nodes", 1));
    if (t_node + delta > P.grid.steps()) throw ConfigError(d.path() + "/delta_nodes", "t_node + delta_nodes exceeds the time steps");
    const DppResidual r = dpp_residual(c, t_node, P.x0, delta, tab, P.samples, P.seed, P.bsde);
    json cands = json::array();
    for (const auto& e : r.candidates) cands.push_back({{"value", e.value}, {"ci", e.ci}});
    out.json_file("dpp.json", {{"residual", r.residual}, {"table_value", r.table_value}, {"best", r.best},
                               {"best_ci", r.best_ci}, {"candidates", cands}, {"clamped", tab.clamped}});
    return kExitOk;
  }
  if (sub == "pide" || sub == "verify") {
    const TensorGrid space = load_space(root, c.n);
    PideSolution sol;
    try {
      sol = solve_pide_deterministic(c, space, P.grid, U);
    } catch (const CflViolation& e) {
      summary["suggested_dt"] = e.suggested_dt();
      throw;
    }
    const RandomFieldTriplet tr = sol.triplet(c.d, c.measure.size());
    if (sub == "pide") {
      out.csv("fields.csv", [&](std::ostream& os) { write_triplet_csv(os, tr); });
      out.json_file("pide.json", {{"stable_dt", sol.stable_dt}, {"clamped", sol.clamped},
                                  {"V0", space.interpolate(sol.V[0], P.x0)}});
      return kExitOk;
    }
    const Node v = root.has("verify") ? root.at("verify") : Node(json::object(), "/verify");
    VerificationOptions vo;
    vo.samples = P.samples;
    vo.seed = P.seed;
    vo.bsde = P.bsde;
    vo.alternatives = static_cast<std::size_t>(v.integer("alternatives", 0));
    const auto refine = v.count("sim_refine", 1);
    vo.sim_grid = TimeGrid::uniform(P.grid.end(), P.grid.steps() * refine);
    const double tol = v.positive("tolerance", 2e-2);
    const VerificationReport rep = verification_run(tr, c, U, P.x0, vo);
    json alts = json::array();
    for (const auto& e : rep.alternatives) alts.push_back({{"J", e.value}, {"ci", e.ci}});
    out.json_file("verify.json", {{"J_feedback", rep.J}, {"J_ci", rep.J_ci}, {"V0", rep.V0}, {"gap", rep.gap},
                                  {"tolerance", tol}, {"within_tolerance", std::abs(rep.gap) <= tol + rep.J_ci},
                                  {"alternatives", alts}, {"sandwich", rep.sandwich}});
    return kExitOk;
  }
  if (sub == "bseej" || sub == "hjb-weak") {
    const GelfandTriple tri = load_triple(root, c.n);
    const ScenarioModel sc = ScenarioModel::for_coefficients(c, P.grid);
    const PicardOptions po = load_picard(root);
    const Node g = root.at("galerkin");
    if (sub == "bseej") {
      const OperatorField ops = OperatorField::from_coefficients(c, tri, P.grid);
      const TerminalData xi = [&](const NoiseState& w) { return tri.project([&](const Vec& x) { return c.h(x, w); }); };
      const BseejSolution sol = solve_linear_bseej(ops, tri, nullptr, xi, sc);
      out.csv("bseej.csv", [&](std::ostream& os) { write_bseej_csv(os, sol); });
      const EnergyReport er = energy_identity(sol, ops, nullptr, tri);
      out.json_file("bseej.json", {{"energy_residual", er.residual}, {"y0_norm2", tri.h_norm2(sol.y[0][0])},
                                   {"basis_size", tri.size()}, {"operators_frozen", ops.frozen}});
      return kExitOk;
    }
    HjbWeakOptions ho;
    ho.picard = po;
    ho.alpha = g.number("alpha", 0.0);
    ho.lambda = g.number("lambda", 0.0);
    ho.seed = P.seed;
    if (root.has("space")) ho.output = load_space(root, c.n);
    const HjbWeakResult res = solve_hjb_weak(c, tri, U, sc, ho);
    out.csv("fields.csv", [&](std::ostream& os) { write_triplet_csv(os, res.triplet); });
    out.json_file("hjb_weak.json", {{"iterations", res.solution.iterations}, {"converged", res.solution.converged},
                                    {"history", res.solution.history}, {"weak_residual", res.weak_residual},
                                    {"coercivity_min_slack", res.coercivity.min_slack}, {"outside", res.outside},
                                    {"V0", res.triplet.grid.interpolate(res.triplet.at(0).V, P.x0)}});
    return res.solution.converged ? kExitOk : kExitNotConverged;
  }
  if (sub == "convergence") {
    const Vec u = load_constant_control(root, U, c.m);
    int h = halvings;
    if (h <= 0) h = root.has("convergence") ? static_cast<int>(root.at("convergence").count("halvings", 3)) : 3;
    const StrongErrorStudy st = strong_error_study(c, constant_control(u), P.x0, P.grid, h, P.samples, P.seed);
    out.csv("convergence.csv", [&](std::ostream& os) {
      os << "dt,error\n";
      for (std::size_t k = 0; k < st.dt.size(); ++k) os << format_double(st.dt[k]) << ',' << format_double(st.error[k]) << '\n';
    });
    out.json_file("convergence.json", {{"slope", st.slope}, {"halvings", h}});
    return kExitOk;
  }
  if (sub == "validate-assumptions") {
    const Node v = root.has("validate") ? root.at("validate") : Node(json::object(), "/validate");
    SamplingPlan plan;
    plan.samples = v.count("samples", 2000);
    plan.x_lo = v.has("x_lo") ? v.at("x_lo").vec(c.n) : Vec(Vec::Constant(c.n, -2.0));
    plan.x_hi = v.has("x_hi") ? v.at("x_hi").vec(c.n) : Vec(Vec::Constant(c.n, 2.0));
    plan.u_lo = U.lo;
    plan.u_hi = U.hi;
    plan.t_lo = P.grid.start();
    plan.t_hi = P.grid.end();
    plan.seed = P.seed;
    json checks = json::array();
    bool all = true;
    for (const auto& rep : {validate_lipschitz(c, plan), validate_jump_nondegeneracy(c, plan),
                            validate_driver_monotonicity(c, plan)}) {
      for (const auto& ck : rep.checks) {
        checks.push_back({{"name", ck.name}, {"observed", ck.observed}, {"bound", ck.bound},
                          {"upper", ck.upper}, {"pass", ck.pass}, {"where", ck.where}});
        all = all && ck.pass;
      }
    }
    out.json_file("assumptions.json", {{"pass", all}, {"checks", checks}});
    return kExitOk;
  }
  throw ConfigError("/", "unknown subcommand '" + sub + "'");
}

}  // namespace

int run(const std::string& sub, const json& config, const std::filesystem::path& out_dir, int halvings) {
  Artifacts out(out_dir);
  json summary;
  int code = kExitOk;
  std::string status = "ok";
  json error;
  try {
    code = run_subcommand(sub, Node(config, ""), out, halvings, summary);
    if (code == kExitNotConverged) status = "not-converged";
  } catch (const ConfigError& e) {
    code = kExitConfig;
    status = "config-error";
    error = {{"type", "config"}, {"path", e.path()}, {"message", e.what()}};
  } catch (const InvalidArgument& e) {
    code = kExitConfig;
    status = "config-error";
    error = {{"type", "invalid-argument"}, {"message", e.what()}};
  } catch (const NotConverged& e) {
    code = kExitNotConverged;
    status = "not-converged";
    error = {{"type", "not-converged"}, {"message", e.what()}};
  } catch (const NumericError& e) {
    code = kExitNumeric;
    status = "numeric-failure";
    error = {{"type", "numeric"}, {"message", e.what()}};
    if (summary.contains("suggested_dt")) error["suggested_dt"] = summary["suggested_dt"];
  }
  if (!error.is_null()) {
    out.json_file("error.json", error);
    std::cerr << "shjb " << sub << ": " << error.value("message", std::string()) << '\n';
  }
  json manifest = {{"subcommand", sub},
                   {"config_hash", config_hash(config)},
                   {"seed", config.contains("seed") ? config["seed"] : json()},
                   {"version", SHJB_VERSION},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"status", status},
                   {"exit_code", code},
                   {"config", config},
                   {"artifacts", out.files()}};
  out.json_file("manifest.json", manifest);
  return code;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Stochastic HJB toolkit: simulation, BSDEs, dynamic programming, PIDE and Galerkin solvers"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  int threads = 0, halvings = 0;
  for (const auto& name : subcommands()) {
    CLI::App* s = app.add_subcommand(name);
    s->add_option("-c,--config", config_path, "JSON config file")->required();
    s->add_option("-o,--out", out_dir, "output directory (default: config output_dir or ./out)");
    s->add_option("--threads", threads, "worker thread cap");
    if (name == "convergence") s->add_option("--halvings", halvings, "number of step halvings");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  const std::string sub = app.get_subcommands().front()->get_name();
  json config;
  {
    std::ifstream is(config_path);
    if (!is) {
      std::cerr << "cannot open config " << config_path << '\n';
      return kExitConfig;
    }
    try {
      config = json::parse(is);
    } catch (const json::parse_error& e) {
      std::cerr << "config parse error: " << e.what() << '\n';
      return kExitConfig;
    }
  }
  if (!config.is_object()) {
    std::cerr << "config error at /: expected an object\n";
    return kExitConfig;
  }
  if (threads <= 0 && config.contains("threads") && config["threads"].is_number_integer()) threads = config["threads"].get<int>();
  set_thread_count(threads > 0 ? threads : 1);
  if (out_dir.empty()) out_dir = config.contains("output_dir") && config["output_dir"].is_string() ? config["output_dir"].get<std::string>() : "out";
  return run(sub, config, out_dir, halvings);
}

}  // namespace shjb
