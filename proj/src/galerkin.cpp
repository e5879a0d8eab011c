#include "shjb/galerkin.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "shjb/errors.hpp"
#include "shjb/parallel.hpp"
#include "shjb/rng.hpp"

namespace shjb {

namespace {

double sine_mode(int k, double s, double L) {
  return std::sin(k * std::numbers::pi * (s + L) / (2.0 * L)) / std::sqrt(L);
}

double sine_mode_deriv(int k, double s, double L) {
  const double w = k * std::numbers::pi / (2.0 * L);
  return w * std::cos(w * (s + L)) / std::sqrt(L);
}

bool inside(const Vec& x, double L) {
  for (int k = 0; k < x.size(); ++k) {
    if (!(x[k] >= -L && x[k] <= L)) return false;
  }
  return true;
}

// <B z, phi> = int <sigma_d z, D phi> pairs derivatives with values, i.e. cos x sin
// products, which the trapezoid rule does not integrate exactly. Composite
// 6-point Gauss-Legendre on the trapezoid intervals brings it to rounding level.
Eigen::MatrixXd assemble_b(const CoefficientSet& c, const GelfandTriple& tri, double t, const Vec& u,
                           const NoiseState& w) {
  static constexpr std::array<double, 6> gx{-0.9324695142031521, -0.6612093864662645, -0.2386191860831969,
                                            0.2386191860831969,  0.6612093864662645,  0.9324695142031521};
  static constexpr std::array<double, 6> gw{0.1713244923791704, 0.3607615730481386, 0.4679139345726910,
                                            0.4679139345726910, 0.3607615730481386, 0.1713244923791704};
  const int n = tri.n, d = c.d;
  const double h = 2.0 * tri.L / tri.intervals;
  std::vector<double> nodes, weights;
  for (int k = 0; k < tri.intervals; ++k) {
    for (std::size_t g = 0; g < gx.size(); ++g) {
      nodes.push_back(-tri.L + h * (k + 0.5 * (gx[g] + 1.0)));
      weights.push_back(0.5 * h * gw[g]);
    }
  }
  std::size_t total = 1;
  for (int k = 0; k < n; ++k) total *= nodes.size();
  const Eigen::Index NB = tri.size();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(NB, NB);
  const std::size_t chunk = 2048;
  for (std::size_t begin = 0; begin < total; begin += chunk) {
    const std::size_t end = std::min(total, begin + chunk);
    const auto rows = static_cast<Eigen::Index>(end - begin);
    Eigen::MatrixXd G(rows, NB), E(rows, NB);
    for (std::size_t q = begin; q < end; ++q) {
      Vec x(n);
      double wt = 1.0;
      std::size_t rem = q;
      for (int k = n - 1; k >= 0; --k) {
        const std::size_t i = rem % nodes.size();
        rem /= nodes.size();
        x[k] = nodes[i];
        wt *= weights[i];
      }
      const Mat S = c.sigma(t, x, u, w);
      if (!S.allFinite()) throw NumericError("assemble_operators: non-finite sigma at a quadrature point");
      const auto r = static_cast<Eigen::Index>(q - begin);
      G.row(r) = wt * (S.col(d - 1).transpose() * tri.basis_gradient(x));
      E.row(r) = tri.basis_row(x);
    }
    B.noalias() += G.transpose() * E;
  }
  return B;
}

}  // namespace

GelfandTriple assemble_triple(double L, int n, int modes, int intervals_per_dim) {
  require(L > 0.0, "Gelfand triple: L must be positive");
  require(n >= 1 && n <= 3, "Gelfand triple: dimension must be 1, 2 or 3");
  require(modes >= 1, "Gelfand triple: need at least one mode");
  const int intervals = intervals_per_dim > 0 ? intervals_per_dim : 4 * modes;
  require(intervals > modes, "Gelfand triple: quadrature too coarse for exact integration");
  GelfandTriple tri;
  tri.L = L;
  tri.n = n;
  tri.modes = modes;
  tri.intervals = intervals;

  std::size_t nb = 1, nq = 1;
  for (int k = 0; k < n; ++k) {
    nb *= static_cast<std::size_t>(modes);
    nq *= static_cast<std::size_t>(intervals + 1);
  }
  for (std::size_t b = 0; b < nb; ++b) {
    std::array<int, 3> m{0, 0, 0};
    std::size_t rem = b;
    for (int k = n - 1; k >= 0; --k) {
      m[static_cast<std::size_t>(k)] = static_cast<int>(rem % static_cast<std::size_t>(modes)) + 1;
      rem /= static_cast<std::size_t>(modes);
    }
    tri.mode_index.push_back(m);
  }
  const double h = 2.0 * L / intervals;
  tri.weights.resize(static_cast<Eigen::Index>(nq));
  for (std::size_t q = 0; q < nq; ++q) {
    Vec x(n);
    double w = 1.0;
    std::size_t rem = q;
    for (int k = n - 1; k >= 0; --k) {
      const auto i = static_cast<int>(rem % static_cast<std::size_t>(intervals + 1));
      rem /= static_cast<std::size_t>(intervals + 1);
      x[k] = -L + h * i;
      w *= (i == 0 || i == intervals) ? 0.5 * h : h;
    }
    tri.points.push_back(x);
    tri.weights[static_cast<Eigen::Index>(q)] = w;
  }
  const auto Q = static_cast<Eigen::Index>(nq);
  const auto NB = static_cast<Eigen::Index>(nb);
  tri.E.resize(Q, NB);
  tri.DE.assign(static_cast<std::size_t>(n), Eigen::MatrixXd(Q, NB));
  for (Eigen::Index q = 0; q < Q; ++q) {
    const Vec& x = tri.points[static_cast<std::size_t>(q)];
    for (Eigen::Index b = 0; b < NB; ++b) {
      const auto& m = tri.mode_index[static_cast<std::size_t>(b)];
      std::array<double, 3> v{}, dv{};
      double prod = 1.0;
      for (int k = 0; k < n; ++k) {
        v[static_cast<std::size_t>(k)] = sine_mode(m[static_cast<std::size_t>(k)], x[k], L);
        dv[static_cast<std::size_t>(k)] = sine_mode_deriv(m[static_cast<std::size_t>(k)], x[k], L);
        prod *= v[static_cast<std::size_t>(k)];
      }
      tri.E(q, b) = prod;
      for (int k = 0; k < n; ++k) {
        double g = dv[static_cast<std::size_t>(k)];
        for (int l = 0; l < n; ++l) {
          if (l != k) g *= v[static_cast<std::size_t>(l)];
        }
        tri.DE[static_cast<std::size_t>(k)](q, b) = g;
      }
    }
  }
  const Eigen::VectorXd sw = tri.weights.cwiseSqrt();
  const Eigen::MatrixXd We = sw.asDiagonal() * tri.E;
  tri.mass = We.transpose() * We;
  tri.stiffness = Eigen::MatrixXd::Zero(NB, NB);
  for (int k = 0; k < n; ++k) {
    const Eigen::MatrixXd Wd = sw.asDiagonal() * tri.DE[static_cast<std::size_t>(k)];
    tri.stiffness += Wd.transpose() * Wd;
  }
  return tri;
}

Eigen::RowVectorXd GelfandTriple::basis_row(const Vec& x) const {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(size());
  if (!inside(x, L)) return row;
  for (int b = 0; b < size(); ++b) {
    double prod = 1.0;
    for (int k = 0; k < n; ++k) prod *= sine_mode(mode_index[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)], x[k], L);
    row[b] = prod;
  }
  return row;
}

Eigen::MatrixXd GelfandTriple::basis_gradient(const Vec& x) const {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, size());
  if (!inside(x, L)) return g;
  for (int b = 0; b < size(); ++b) {
    const auto& m = mode_index[static_cast<std::size_t>(b)];
    for (int k = 0; k < n; ++k) {
      double v = sine_mode_deriv(m[static_cast<std::size_t>(k)], x[k], L);
      for (int l = 0; l < n; ++l) {
        if (l != k) v *= sine_mode(m[static_cast<std::size_t>(l)], x[l], L);
      }
      g(k, b) = v;
    }
  }
  return g;
}

double GelfandTriple::evaluate(const Eigen::VectorXd& coords, const Vec& x) const {
  return basis_row(x).dot(coords);
}

Eigen::VectorXd GelfandTriple::load(const Eigen::VectorXd& v) const {
  return E.transpose() * weights.cwiseProduct(v);
}

Eigen::VectorXd GelfandTriple::project(const std::function<double(const Vec&)>& fn) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(points.size()));
  for (std::size_t q = 0; q < points.size(); ++q) v[static_cast<Eigen::Index>(q)] = fn(points[q]);
  return mass.ldlt().solve(load(v));
}

double GelfandTriple::h_norm2_values(const Eigen::VectorXd& v) const {
  return weights.dot(v.cwiseProduct(v));
}

OperatorPair assemble_operators(const CoefficientSet& c, const GelfandTriple& tri, double t, const NoiseState& w_in) {
  require(!c.control_in_sigma, "assemble_operators: sigma must not depend on the control");
  require(tri.n == c.n, "assemble_operators: basis dimension differs from the state");
  NoiseState w = w_in;
  if (w.values.size() == 0) w.values = zeros(static_cast<int>(c.channels.size()));
  w.t = t;
  const Vec u = zeros(c.m);
  const auto Q = static_cast<Eigen::Index>(tri.quad_size());
  const Eigen::Index NB = tri.size();
  const int d = c.d;
  OperatorPair op;
  op.split = c.reads_last_brownian();
  const int dh = op.split ? d - 1 : d;

  Eigen::MatrixXd full(Q * d, NB), hat(Q * std::max(dh, 1), NB), sd(Q, NB);
  hat.setZero();
  sd.setZero();
  for (Eigen::Index q = 0; q < Q; ++q) {
    const Vec& x = tri.points[static_cast<std::size_t>(q)];
    const Mat S = c.sigma(t, x, u, w);
    if (!S.allFinite()) throw NumericError("assemble_operators: non-finite sigma at a quadrature point");
    const double sw = std::sqrt(tri.weights[q]);
    Eigen::MatrixXd G(tri.n, NB);
    for (int k = 0; k < tri.n; ++k) G.row(k) = tri.DE[static_cast<std::size_t>(k)].row(q);
    const Eigen::MatrixXd P = S.transpose() * G;  // d x NB
    full.middleRows(q * d, d) = sw * P;
    if (dh > 0) hat.middleRows(q * dh, dh) = sw * P.topRows(dh);
    if (op.split) sd.row(q) = sw * P.row(d - 1);
  }
  op.A = 0.5 * full.transpose() * full;
  op.sigma_hat_gram = dh > 0 ? Eigen::MatrixXd(hat.transpose() * hat) : Eigen::MatrixXd::Zero(NB, NB);
  op.bstar_gram = sd.transpose() * sd;
  if (op.split) {
    op.B = assemble_b(c, tri, t, u, w);
  } else {
    op.B = Eigen::MatrixXd::Zero(NB, NB);
  }
  return op;
}

OperatorField OperatorField::constant(OperatorPair pair) {
  OperatorField f;
  f.assemble = [p = std::move(pair)](double, const NoiseState&) { return p; };
  f.frozen = true;
  return f;
}

OperatorField OperatorField::from_coefficients(const CoefficientSet& c, const GelfandTriple& tri, const TimeGrid& grid) {
  const int ch = static_cast<int>(c.channels.size());
  const Vec u = zeros(c.m);
  std::vector<NoiseState> probes;
  for (double t : {grid.start(), 0.5 * (grid.start() + grid.end()), grid.end()}) {
    for (double v : {0.0, -1.5, 2.0}) {
      NoiseState w{t, Vec::Constant(ch, v)};
      for (int k = 0; k < ch; ++k) {
        if (c.channels[static_cast<std::size_t>(k)].kind == ChannelKind::JumpCount) w.values[k] = std::abs(v);
      }
      probes.push_back(w);
    }
  }
  bool frozen = true;
  for (std::size_t q = 0; q < tri.quad_size() && frozen; q += std::max<std::size_t>(1, tri.quad_size() / 64)) {
    const Mat ref = c.sigma(probes[0].t, tri.points[q], u, probes[0]);
    for (const auto& w : probes) {
      if (c.sigma(w.t, tri.points[q], u, w) != ref) {
        frozen = false;
        break;
      }
    }
  }
  OperatorField f;
  f.frozen = frozen;
  f.assemble = [c, tri](double t, const NoiseState& w) { return assemble_operators(c, tri, t, w); };
  return f;
}

CoercivityReport check_coercivity(const OperatorPair& pair, const GelfandTriple& tri, double alpha, double lambda,
                                  int trials, std::uint64_t seed) {
  const Eigen::MatrixXd form =
      2.0 * pair.A + lambda * tri.mass - alpha * tri.v_gram() - pair.bstar_gram;
  CoercivityReport rep;
  rep.min_slack = std::numeric_limits<double>::infinity();
  auto test = [&](const Eigen::VectorXd& phi, const std::string& name) {
    const double s = phi.dot(form * phi) / tri.h_norm2(phi);
    if (s < rep.min_slack) {
      rep.min_slack = s;
      rep.worst = name;
    }
  };
  const int nb = tri.size();
  for (int b = 0; b < nb; ++b) test(Eigen::VectorXd::Unit(nb, b), "e_" + std::to_string(b + 1));
  CounterEngine eng(child_seed(seed, 7));
  std::normal_distribution<double> nd;
  for (int k = 0; k < trials; ++k) {
    Eigen::VectorXd phi(nb);
    for (int b = 0; b < nb; ++b) phi[b] = nd(eng);
    test(phi, "random combination " + std::to_string(k));
  }
  rep.pass = rep.min_slack >= -1e-10;
  return rep;
}

ScenarioModel::ScenarioModel(TimeGrid grid, bool brownian, std::vector<double> atom_weights,
                             std::vector<Channel> channels)
    : grid_(std::move(grid)), brownian_(brownian), weights_(std::move(atom_weights)), channels_(std::move(channels)) {
  require(grid_.steps() >= 1, "scenario model: grid needs at least one step");
  if (brownian_) require(grid_.is_uniform(), "scenario model: the Brownian tree needs a uniform grid");
  double mass = 0.0;
  for (double w : weights_) {
    require(w > 0.0, "scenario model: atom weights must be positive");
    mass += w;
  }
  for (std::size_t i = 0; i < grid_.steps(); ++i) {
    require(mass * grid_.dt(i) <= 1.0, "scenario model: jump intensity times dt exceeds one");
  }
  prob_.resize(grid_.steps() + 1);
  prob_[0] = {1.0};
  for (std::size_t i = 0; i < grid_.steps(); ++i) {
    prob_[i + 1].assign(states(i + 1), 0.0);
    for (std::size_t s = 0; s < states(i); ++s) {
      for (const auto& br : branches(i, s)) prob_[i + 1][br.next] += prob_[i][s] * br.prob;
    }
  }
}

ScenarioModel ScenarioModel::for_coefficients(const CoefficientSet& c, const TimeGrid& grid) {
  c.require_galerkin_compatible();
  bool jumps = false;
  for (const auto& ch : c.channels) jumps = jumps || ch.kind == ChannelKind::JumpCount;
  std::vector<double> w;
  if (jumps) {
    for (const auto& a : c.measure.atoms()) w.push_back(a.weight);
  }
  return ScenarioModel(grid, c.reads_last_brownian(), std::move(w), c.channels);
}

std::size_t ScenarioModel::states(std::size_t node) const {
  return (brownian_ ? node + 1 : 1) * (jumps() ? node + 1 : 1);
}

std::vector<ScenarioModel::Branch> ScenarioModel::branches(std::size_t i, std::size_t s) const {
  const std::size_t nc = jumps() ? i + 1 : 1;
  const std::size_t nc1 = jumps() ? i + 2 : 1;
  const std::size_t level = s / nc, count = s % nc;
  const double dt = grid_.dt(i);
  const double sq = std::sqrt(dt);
  std::vector<std::pair<std::size_t, double>> wb;  // (next level, dw)
  if (brownian_) {
    wb = {{level + 1, sq}, {level, -sq}};
  } else {
    wb = {{0, 0.0}};
  }
  const double pw = brownian_ ? 0.5 : 1.0;
  double mass = 0.0;
  for (double w : weights_) mass += w;
  std::vector<Branch> out;
  for (const auto& [lv, dw] : wb) {
    out.push_back({lv * nc1 + count, pw * (1.0 - mass * dt), dw, -1});
    for (std::size_t j = 0; j < weights_.size(); ++j) {
      out.push_back({lv * nc1 + count + 1, pw * weights_[j] * dt, dw, static_cast<int>(j)});
    }
  }
  return out;
}

double ScenarioModel::brownian_value(std::size_t node, std::size_t s) const {
  if (!brownian_) return 0.0;
  const std::size_t nc = jumps() ? node + 1 : 1;
  const auto level = static_cast<double>(s / nc);
  return (2.0 * level - static_cast<double>(node)) * std::sqrt(grid_.dt(0));
}

std::size_t ScenarioModel::jump_count(std::size_t node, std::size_t s) const {
  return jumps() ? s % (node + 1) : 0;
}

NoiseState ScenarioModel::noise(std::size_t node, std::size_t s) const {
  NoiseState w{grid_.node(node), Vec(static_cast<int>(channels_.size()))};
  for (std::size_t k = 0; k < channels_.size(); ++k) {
    w.values[static_cast<int>(k)] = channels_[k].kind == ChannelKind::JumpCount
                                        ? static_cast<double>(jump_count(node, s))
                                        : brownian_value(node, s);
  }
  return w;
}

std::string ScenarioModel::label(std::size_t node, std::size_t s) const {
  std::ostringstream os;
  os << "w" << (brownian_ ? s / (jumps() ? node + 1 : 1) : 0) << "n" << jump_count(node, s);
  return os.str();
}

ScenarioPath sample_scenario_path(const ScenarioModel& sc, std::uint64_t seed) {
  CounterEngine eng(child_seed(seed, 11));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ScenarioPath p;
  p.states.push_back(0);
  for (std::size_t i = 0; i < sc.grid().steps(); ++i) {
    const auto br = sc.branches(i, p.states.back());
    const double r = unif(eng);
    double acc = 0.0;
    std::size_t pick = br.size() - 1;
    for (std::size_t k = 0; k < br.size(); ++k) {
      acc += br[k].prob;
      if (r < acc) {
        pick = k;
        break;
      }
    }
    p.states.push_back(br[pick].next);
    p.atoms.push_back(br[pick].atom);
  }
  return p;
}

namespace {

struct Projection {
  Eigen::VectorXd ybar, z;
  std::vector<Eigen::VectorXd> r;
};

// Conditional expectation of y_{i+1} and its projections on the Brownian step
// and on the compensated jump indicators.
Projection project_step(const ScenarioModel& sc, const std::vector<Eigen::VectorXd>& ynext, std::size_t i,
                        std::size_t s) {
  const auto nb = ynext.front().size();
  const double dt = sc.grid().dt(i);
  Projection p;
  p.ybar = Eigen::VectorXd::Zero(nb);
  p.z = Eigen::VectorXd::Zero(nb);
  p.r.assign(sc.atoms(), Eigen::VectorXd::Zero(nb));
  const auto br = sc.branches(i, s);
  for (const auto& b : br) p.ybar += b.prob * ynext[b.next];
  for (const auto& b : br) {
    const Eigen::VectorXd dev = ynext[b.next] - p.ybar;
    if (sc.brownian()) p.z += (b.prob * b.dw / dt) * dev;
    for (std::size_t j = 0; j < sc.atoms(); ++j) {
      const double wj = sc.atom_weight(j) * dt;
      const double ind = (b.atom == static_cast<int>(j) ? 1.0 : 0.0) - wj;
      p.r[j] += (b.prob * ind / wj) * dev;
    }
  }
  return p;
}

class StepSolver {
 public:
  StepSolver(const OperatorField& ops, const GelfandTriple& tri, const ScenarioModel& sc)
      : ops_(ops), tri_(tri), sc_(sc) {
    if (ops.frozen) {
      pair_ = ops.assemble(sc.grid().start(), sc.noise(0, 0));
      for (std::size_t i = 0; i < sc.grid().steps(); ++i) {
        const double dt = sc.grid().dt(i);
        if (!lu_.count(dt)) lu_.emplace(dt, factor(pair_, dt, i));
      }
    }
  }

  // y_i given the projection and the load (F, e).
  Eigen::VectorXd solve(std::size_t i, std::size_t s, const Projection& p, const Eigen::VectorXd& load) const {
    const double dt = sc_.grid().dt(i);
    if (ops_.frozen) return step(pair_, lu_.at(dt), dt, p, load);
    const OperatorPair pair = ops_.assemble(sc_.grid().node(i), sc_.noise(i, s));
    return step(pair, factor(pair, dt, i), dt, p, load);
  }

  OperatorPair pair(std::size_t i, std::size_t s) const {
    return ops_.frozen ? pair_ : ops_.assemble(sc_.grid().node(i), sc_.noise(i, s));
  }

 private:
  const OperatorField& ops_;
  const GelfandTriple& tri_;
  const ScenarioModel& sc_;
  OperatorPair pair_;
  std::map<double, Eigen::PartialPivLU<Eigen::MatrixXd>> lu_;

  Eigen::PartialPivLU<Eigen::MatrixXd> factor(const OperatorPair& pair, double dt, std::size_t i) const {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(tri_.mass + dt * pair.A);
    const double rc = lu.rcond();
    if (!(rc > 1e-14)) {
      std::ostringstream os;
      os << "BSEEJ step matrix at step " << i << " is singular (condition number ~ " << (rc > 0 ? 1.0 / rc : INFINITY)
         << ")";
      throw NumericError(os.str());
    }
    return lu;
  }

  Eigen::VectorXd step(const OperatorPair& pair, const Eigen::PartialPivLU<Eigen::MatrixXd>& lu, double dt,
                       const Projection& p, const Eigen::VectorXd& load) const {
    Eigen::VectorXd rhs = tri_.mass * p.ybar - dt * load;
    if (pair.split) rhs -= dt * (pair.B * p.z);
    return lu.solve(rhs);
  }
};

using LoadFn = std::function<Eigen::VectorXd(std::size_t i, std::size_t s)>;

BseejSolution sweep(const StepSolver& solver, const GelfandTriple& tri, const TerminalData& xi,
                    const ScenarioModel& sc, const LoadFn& load) {
  const std::size_t N = sc.grid().steps();
  BseejSolution sol;
  sol.grid = sc.grid();
  sol.scenarios = sc;
  sol.y.resize(N + 1);
  sol.z.resize(N);
  sol.r.resize(N);
  sol.y[N].resize(sc.states(N));
  for (std::size_t s = 0; s < sc.states(N); ++s) {
    sol.y[N][s] = xi(sc.noise(N, s));
    require(sol.y[N][s].size() == tri.size(), "BSEEJ: terminal coordinates have the wrong size");
  }
  for (std::size_t i = N; i-- > 0;) {
    const std::size_t S = sc.states(i);
    sol.y[i].resize(S);
    sol.z[i].resize(S);
    sol.r[i].resize(S);
    parallel_for(S, [&](std::size_t begin, std::size_t end) {
      for (std::size_t s = begin; s < end; ++s) {
        Projection p = project_step(sc, sol.y[i + 1], i, s);
        sol.y[i][s] = solver.solve(i, s, p, load(i, s));
        if (!sol.y[i][s].allFinite()) throw NumericError("BSEEJ: non-finite coordinates at step " + std::to_string(i));
        sol.z[i][s] = std::move(p.z);
        sol.r[i][s] = std::move(p.r);
      }
    });
  }
  return sol;
}

template <typename Fn>
double expect(const ScenarioModel& sc, std::size_t node, Fn&& fn) {
  const auto& pr = sc.probabilities(node);
  double acc = 0.0;
  for (std::size_t s = 0; s < pr.size(); ++s) acc += pr[s] * fn(s);
  return acc;
}

// sup_i E|dy_i|_H^2 + sum_{i<N} dt E|dy_i|_V^2 between two solutions on one tree.
double mixed_norm2(const BseejSolution& a, const BseejSolution* b, const GelfandTriple& tri) {
  const auto& sc = a.scenarios;
  const std::size_t N = sc.grid().steps();
  const Eigen::MatrixXd Vg = tri.v_gram();
  double sup = 0.0, integral = 0.0;
  for (std::size_t i = 0; i <= N; ++i) {
    auto diff = [&](std::size_t s) -> Eigen::VectorXd { return b ? Eigen::VectorXd(a.y[i][s] - b->y[i][s]) : a.y[i][s]; };
    sup = std::max(sup, expect(sc, i, [&](std::size_t s) { return tri.h_norm2(diff(s)); }));
    if (i < N) {
      integral += sc.grid().dt(i) * expect(sc, i, [&](std::size_t s) {
        const Eigen::VectorXd v = diff(s);
        return v.dot(Vg * v);
      });
    }
  }
  return sup + integral;
}

}  // namespace

BseejSolution solve_linear_bseej(const OperatorField& ops, const GelfandTriple& tri, const SourceField& f0,
                                 const TerminalData& xi, const ScenarioModel& sc) {
  const StepSolver solver(ops, tri, sc);
  BseejSolution sol = sweep(solver, tri, xi, sc, [&](std::size_t i, std::size_t s) -> Eigen::VectorXd {
    if (!f0) return Eigen::VectorXd::Zero(tri.size());
    return tri.load(f0(i, sc.grid().node(i), sc.noise(i, s)));
  });
  sol.iterations = 1;
  sol.converged = true;
  return sol;
}

BseejSolution zero_solution(const ScenarioModel& sc, int basis_size) {
  const std::size_t N = sc.grid().steps();
  BseejSolution sol;
  sol.grid = sc.grid();
  sol.scenarios = sc;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(basis_size);
  sol.y.resize(N + 1);
  sol.z.resize(N);
  sol.r.resize(N);
  for (std::size_t i = 0; i <= N; ++i) {
    sol.y[i].assign(sc.states(i), zero);
    if (i < N) {
      sol.z[i].assign(sc.states(i), zero);
      sol.r[i].assign(sc.states(i), std::vector<Eigen::VectorXd>(sc.atoms(), zero));
    }
  }
  return sol;
}

BseejSolution solve_nonlinear_bseej(const OperatorField& ops, const GelfandTriple& tri, const FieldMap& F,
                                    const TerminalData& xi, const ScenarioModel& sc, const PicardOptions& opts) {
  require(opts.max_iter >= 1, "Picard iteration: max_iter must be positive");
  const StepSolver solver(ops, tri, sc);
  const std::size_t N = sc.grid().steps();

  auto frozen_loads = [&](const BseejSolution& prev) {
    std::vector<std::vector<Eigen::VectorXd>> L(N);
    for (std::size_t i = 0; i < N; ++i) {
      L[i].resize(sc.states(i));
      parallel_for(sc.states(i), [&](std::size_t begin, std::size_t end) {
        for (std::size_t s = begin; s < end; ++s) {
          const Eigen::VectorXd v = F(i, sc.grid().node(i), sc.noise(i, s), prev.y[i][s], prev.z[i][s], prev.r[i][s]);
          if (!v.allFinite()) throw NumericError("Picard iteration: non-finite driver at step " + std::to_string(i));
          L[i][s] = tri.load(v);
        }
      });
    }
    return L;
  };

  BseejSolution prev = zero_solution(sc, tri.size());
  auto loads = frozen_loads(prev);
  std::vector<double> history, relative;
  int it = 0;
  bool converged = false;
  while (true) {
    BseejSolution next = sweep(solver, tri, xi, sc, [&](std::size_t i, std::size_t s) { return loads[i][s]; });
    ++it;
    const double dist = std::sqrt(mixed_norm2(next, &prev, tri));
    const double norm = std::sqrt(mixed_norm2(next, nullptr, tri));
    history.push_back(dist);
    relative.push_back(norm > 0.0 ? dist / norm : dist);
    prev = std::move(next);
    if (it > 1 && relative.back() < opts.tol) {
      converged = true;
      break;
    }
    auto next_loads = frozen_loads(prev);
    if (next_loads == loads) {
      // The next linear solve would reproduce the current iterate exactly.
      converged = true;
      break;
    }
    if (it >= opts.max_iter) break;
    loads = std::move(next_loads);
  }
  prev.history = std::move(history);
  prev.relative = std::move(relative);
  prev.iterations = it;
  prev.converged = converged;
  return prev;
}

DependenceReport continuous_dependence_check(const BseejSolution& a, const BseejSolution& b, const FieldMap& Fa,
                                             const FieldMap& Fb, const GelfandTriple& tri) {
  const auto& sc = b.scenarios;
  const std::size_t N = sc.grid().steps();
  require(a.grid.nodes() == b.grid.nodes() && a.y.size() == b.y.size(), "continuous dependence: solutions on different trees");
  DependenceReport rep;
  double zr = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double dt = sc.grid().dt(i);
    zr += dt * expect(sc, i, [&](std::size_t s) {
      double v = tri.h_norm2(a.z[i][s] - b.z[i][s]);
      for (std::size_t j = 0; j < sc.atoms(); ++j) v += sc.atom_weight(j) * tri.h_norm2(a.r[i][s][j] - b.r[i][s][j]);
      return v;
    });
    rep.driver_term += dt * expect(sc, i, [&](std::size_t s) {
      const double t = sc.grid().node(i);
      const NoiseState w = sc.noise(i, s);
      const Eigen::VectorXd fa = Fa ? Fa(i, t, w, b.y[i][s], b.z[i][s], b.r[i][s]) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(tri.quad_size()));
      const Eigen::VectorXd fb = Fb ? Fb(i, t, w, b.y[i][s], b.z[i][s], b.r[i][s]) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(tri.quad_size()));
      return tri.h_norm2_values(fa - fb);
    });
  }
  rep.lhs = mixed_norm2(a, &b, tri) + zr;
  rep.terminal_term = expect(sc, N, [&](std::size_t s) { return tri.h_norm2(a.y[N][s] - b.y[N][s]); });
  rep.rhs = rep.terminal_term + rep.driver_term;
  rep.ratio = rep.rhs > 0.0 ? rep.lhs / rep.rhs : (rep.lhs > 0.0 ? INFINITY : 0.0);
  return rep;
}

EnergyReport energy_identity(const BseejSolution& sol, const OperatorField& ops, const FieldMap& F,
                             const GelfandTriple& tri) {
  const auto& sc = sol.scenarios;
  const std::size_t N = sc.grid().steps();
  const StepSolver solver(ops, tri, sc);
  EnergyReport rep;
  rep.terminal = expect(sc, N, [&](std::size_t s) { return tri.h_norm2(sol.y[N][s]); });
  rep.initial = tri.h_norm2(sol.y[0][0]);
  for (std::size_t i = 0; i < N; ++i) {
    const double dt = sc.grid().dt(i);
    const double t = sc.grid().node(i);
    rep.drift += dt * expect(sc, i, [&](std::size_t s) {
      const OperatorPair pair = solver.pair(i, s);
      const Eigen::VectorXd& y = sol.y[i][s];
      Eigen::VectorXd gamma = pair.A * y;
      if (pair.split) gamma += pair.B * sol.z[i][s];
      if (F) gamma += tri.load(F(i, t, sc.noise(i, s), y, sol.z[i][s], sol.r[i][s]));
      return 2.0 * y.dot(gamma);
    });
    rep.brownian += dt * expect(sc, i, [&](std::size_t s) { return tri.h_norm2(sol.z[i][s]); });
    rep.jumps += dt * expect(sc, i, [&](std::size_t s) {
      double v = 0.0;
      for (std::size_t j = 0; j < sc.atoms(); ++j) v += sc.atom_weight(j) * tri.h_norm2(sol.r[i][s][j]);
      return v;
    });
  }
  rep.residual = rep.terminal - rep.initial - rep.drift - rep.brownian - rep.jumps;
  return rep;
}

double energy_identity_residual(const BseejSolution& sol, const OperatorField& ops, const FieldMap& F,
                                const GelfandTriple& tri) {
  return std::abs(energy_identity(sol, ops, F, tri).residual);
}

double jump_energy_term(const BseejSolution& sol, const GelfandTriple& tri, const ScenarioPath& path) {
  const auto& sc = sol.scenarios;
  const std::size_t N = sc.grid().steps();
  require(path.atoms.size() == N && path.states.size() == N + 1, "jump energy term: path length differs from the grid");
  double events = 0.0, compensator = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t s = path.states[i];
    const Eigen::VectorXd& y = sol.y[i][s];
    auto term = [&](std::size_t j) {
      const Eigen::VectorXd& r = sol.r[i][s][j];
      return tri.h_norm2(r) + 2.0 * y.dot(tri.mass * r);
    };
    if (path.atoms[i] >= 0) events += term(static_cast<std::size_t>(path.atoms[i]));
    for (std::size_t j = 0; j < sc.atoms(); ++j) compensator += sc.grid().dt(i) * sc.atom_weight(j) * term(j);
  }
  return events - compensator;
}

double weak_form_residual(const BseejSolution& sol, const OperatorField& ops, const FieldMap& F,
                          const GelfandTriple& tri) {
  const auto& sc = sol.scenarios;
  const std::size_t N = sc.grid().steps();
  const StepSolver solver(ops, tri, sc);
  double worst = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double dt = sc.grid().dt(i);
    for (std::size_t s = 0; s < sc.states(i); ++s) {
      const Projection p = project_step(sc, sol.y[i + 1], i, s);
      const OperatorPair pair = solver.pair(i, s);
      const Eigen::VectorXd& y = sol.y[i][s];
      Eigen::VectorXd res = (tri.mass + dt * pair.A) * y - tri.mass * p.ybar;
      if (pair.split) res += dt * (pair.B * p.z);
      if (F) res += dt * tri.load(F(i, sc.grid().node(i), sc.noise(i, s), y, p.z, p.r));
      worst = std::max(worst, res.lpNorm<Eigen::Infinity>());
    }
  }
  return worst;
}

}  // namespace shjb
