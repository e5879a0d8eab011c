#include "shjb/dpp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "shjb/errors.hpp"
#include "shjb/parallel.hpp"
#include "shjb/rng.hpp"

namespace shjb {

LatticeSpec LatticeSpec::refined(int factor) const {
  LatticeSpec r = *this;
  for (int& k : r.cells) k *= factor;
  return r;
}

FeedbackPolicy::FeedbackPolicy(TimeGrid grid, TensorGrid points, ControlSet controls,
                               std::vector<std::vector<int>> atom_index)
    : grid_(std::move(grid)), points_(std::move(points)), controls_(std::move(controls)),
      atom_(std::move(atom_index)) {
  require(atom_.size() == grid_.steps(), "feedback policy: one slice per step required");
  for (const auto& slice : atom_) {
    require(slice.size() == points_.size(), "feedback policy: slice does not cover the lattice");
    for (int a : slice) {
      require(a >= 0 && static_cast<std::size_t>(a) < controls_.size(), "feedback policy: atom index outside U_h");
    }
  }
}

std::size_t FeedbackPolicy::node_at(double t) const {
  const auto& nodes = grid_.nodes();
  const double tol = 1e-12 * (1.0 + std::abs(t));
  const auto it = std::upper_bound(nodes.begin(), nodes.end(), t + tol);
  const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - nodes.begin()) - 1));
  return std::min(i, grid_.steps() - 1);
}

int FeedbackPolicy::atom_at(std::size_t node, std::size_t point) const { return atom_.at(node).at(point); }

Vec FeedbackPolicy::operator()(double t, const Vec& x) const {
  return controls_.atoms[static_cast<std::size_t>(atom_at(node_at(t), points_.nearest(x)))];
}

ControlLaw FeedbackPolicy::law() const {
  return [p = *this](std::size_t, double t, const Vec& x, const NoiseState&) { return p(t, x); };
}

FeedbackPolicy random_feedback_policy(const TimeGrid& grid, const TensorGrid& points,
                                      const ControlSet& controls, std::uint64_t seed) {
  CounterEngine eng(child_seed(seed, 0));
  std::uniform_int_distribution<int> pick(0, static_cast<int>(controls.size()) - 1);
  std::vector<std::vector<int>> atoms(grid.steps(), std::vector<int>(points.size()));
  for (auto& slice : atoms) {
    for (int& a : slice) a = pick(eng);
  }
  return FeedbackPolicy(grid, points, controls, std::move(atoms));
}

double ValueTable::value_at(std::size_t node, const Vec& x) const {
  return centers.interpolate(values.at(node), x);
}

FeedbackPolicy ValueTable::policy() const { return FeedbackPolicy(grid, centers, controls, argmin); }

void gauss_hermite_normal(int nodes, std::vector<double>& x, std::vector<double>& w) {
  require(nodes >= 1, "Gauss-Hermite rule needs at least one node");
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(nodes, nodes);
  for (int k = 1; k < nodes; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  x.resize(static_cast<std::size_t>(nodes));
  w.resize(static_cast<std::size_t>(nodes));
  for (int k = 0; k < nodes; ++k) {
    x[static_cast<std::size_t>(k)] = es.eigenvalues()[k];
    const double v = es.eigenvectors()(0, k);
    w[static_cast<std::size_t>(k)] = v * v;
  }
  // The rule is symmetric; snap the center node for odd counts.
  if (nodes % 2 == 1) x[static_cast<std::size_t>(nodes / 2)] = 0.0;
}

namespace {

struct BrownianRule {
  std::vector<Vec> xi;  // standard normal nodes in R^d
  std::vector<double> weight;
};

BrownianRule tensor_rule(int d, int nodes) {
  std::vector<double> x, w;
  gauss_hermite_normal(nodes, x, w);
  BrownianRule r;
  std::size_t total = 1;
  for (int k = 0; k < d; ++k) total *= static_cast<std::size_t>(nodes);
  for (std::size_t idx = 0; idx < total; ++idx) {
    Vec v(d);
    double wt = 1.0;
    std::size_t rem = idx;
    for (int k = d - 1; k >= 0; --k) {
      const std::size_t q = rem % static_cast<std::size_t>(nodes);
      rem /= static_cast<std::size_t>(nodes);
      v[k] = x[q];
      wt *= w[q];
    }
    r.xi.push_back(v);
    r.weight.push_back(wt);
  }
  return r;
}

}  // namespace

ValueTable compute_value_table(const CoefficientSet& c, const LatticeSpec& lattice,
                               const TimeGrid& grid, const ControlSet& controls,
                               const QuadratureSpec& quad) {
  c.validate();
  require(c.deterministic(), "value table: coefficients must not read the noise");
  require(static_cast<int>(lattice.cells.size()) == c.n, "value table: lattice dimension differs from the state");
  require(controls.size() >= 1, "value table: empty control set");
  const BrownianRule rule = tensor_rule(c.d, quad.gauss_hermite_nodes);
  const std::size_t N = grid.steps();
  const std::size_t J = c.measure.size();

  ValueTable tab;
  tab.grid = grid;
  tab.centers = lattice.centers();
  tab.controls = controls;
  tab.values.resize(N + 1);
  tab.argmin.resize(N);
  const TensorGrid& G = tab.centers;
  const std::size_t P = G.size();

  Eigen::VectorXd terminal(static_cast<Eigen::Index>(P));
  for (std::size_t q = 0; q < P; ++q) {
    terminal[static_cast<Eigen::Index>(q)] = c.h(G.point(q), deterministic_noise(grid.end()));
  }
  tab.values[N] = terminal;

  std::vector<unsigned> clamped(P, 0);
  for (std::size_t ii = N; ii-- > 0;) {
    const double t = grid.node(ii);
    const double dt = grid.dt(ii);
    const double p0 = 1.0 - c.measure.total_mass() * dt;
    require(p0 >= 0.0, "value table: jump intensity times dt exceeds one");
    const double sq = std::sqrt(dt);
    const Eigen::VectorXd& next = tab.values[ii + 1];
    Eigen::VectorXd cur(static_cast<Eigen::Index>(P));
    std::vector<int> arg(P, 0);
    const NoiseState w = deterministic_noise(t);

    parallel_for(P, [&](std::size_t begin, std::size_t end) {
      std::vector<double> vj(J);
      for (std::size_t q = begin; q < end; ++q) {
        const Vec x = G.point(q);
        double best = std::numeric_limits<double>::infinity();
        int best_a = -1;
        for (std::size_t a = 0; a < controls.size(); ++a) {
          const Vec& u = controls.atoms[a];
          const Vec bv = c.b(t, x, u, w);
          const Mat S = c.sigma(t, x, u, w);
          std::vector<Vec> jumps(J);
          Vec comp = zeros(c.n);
          for (std::size_t j = 0; j < J; ++j) {
            const auto& atom = c.measure.atom(j);
            jumps[j] = c.g(t, atom.mark, x, u, w);
            comp += atom.weight * jumps[j];
          }
          const Vec mid = x + (bv - comp) * dt;
          double ybar = 0.0;
          Vec z = zeros(c.d);
          std::fill(vj.begin(), vj.end(), 0.0);
          for (std::size_t k = 0; k < rule.xi.size(); ++k) {
            const Vec dw = sq * rule.xi[k];
            const Vec base = mid + S * dw;
            bool cl = false;
            double v = G.interpolate(next, base, &cl);
            clamped[q] += cl ? 1u : 0u;
            double branch = p0 * v;
            for (std::size_t j = 0; j < J; ++j) {
              const double vjump = G.interpolate(next, base + jumps[j], &cl);
              clamped[q] += cl ? 1u : 0u;
              vj[j] += rule.weight[k] * vjump;
              branch += c.measure.atom(j).weight * dt * vjump;
            }
            ybar += rule.weight[k] * branch;
            z += (rule.weight[k] * branch / dt) * dw;
          }
          double kagg = 0.0;
          for (std::size_t j = 0; j < J; ++j) {
            const auto& atom = c.measure.atom(j);
            // Regression of V(t_{i+1}) on the compensated indicator of atom j.
            const double kj = vj[j] - ybar;
            kagg += kj * c.l(t, atom.mark) * atom.weight;
          }
          const double val = ybar + c.f(t, x, u, ybar, z, kagg, w) * dt;
          if (!std::isfinite(val)) {
            throw NumericError("value table: non-finite one-step value at node " + std::to_string(ii) +
                               ", cell " + std::to_string(q));
          }
          if (val < best) {
            best = val;
            best_a = static_cast<int>(a);
          }
        }
        cur[static_cast<Eigen::Index>(q)] = best;
        arg[q] = best_a;
      }
    });
    tab.values[ii] = cur;
    tab.argmin[ii] = std::move(arg);
  }
  for (unsigned k : clamped) tab.clamped += k;
  return tab;
}

Estimate evaluate_cost(const CoefficientSet& c, const ControlLaw& control, const TimeGrid& grid,
                       std::size_t t_node, const Vec& x, std::size_t samples, std::uint64_t seed,
                       const BsdeOptions& opts) {
  require(t_node < grid.steps(), "evaluate_cost: start node must precede the horizon");
  return backward_semigroup(c, control, grid, t_node, x, grid.steps() - t_node, c.h, samples, seed, opts);
}

DppResidual dpp_residual(const CoefficientSet& c, std::size_t t_node, const Vec& x,
                         std::size_t delta_nodes, const ValueTable& table, std::size_t samples,
                         std::uint64_t seed, const BsdeOptions& opts) {
  require(t_node + delta_nodes <= table.grid.steps(), "dpp_residual: t + delta beyond the table");
  const std::size_t target = t_node + delta_nodes;
  const TerminalField eta = [&table, target](const Vec& y, const NoiseState&) {
    return table.value_at(target, y);
  };
  DppResidual rep;
  rep.table_value = table.value_at(t_node, x);
  std::vector<ControlLaw> laws;
  for (const auto& a : table.controls.atoms) laws.push_back(constant_control(a));
  laws.push_back(table.policy().law());
  rep.best = std::numeric_limits<double>::infinity();
  for (const auto& law : laws) {
    const Estimate e = backward_semigroup(c, law, table.grid, t_node, x, delta_nodes, eta, samples, seed, opts);
    rep.candidates.push_back(e);
    if (e.value < rep.best) {
      rep.best = e.value;
      rep.best_ci = e.ci;
    }
  }
  rep.residual = std::abs(rep.table_value - rep.best);
  return rep;
}

EpsilonControl epsilon_optimal_control(const CoefficientSet& c, std::size_t t_node, const Vec& x,
                                       double eps, const SearchSpec& spec) {
  require(spec.max_levels >= 1, "epsilon control: need at least one level");
  require(static_cast<int>(spec.initial_points.size()) == c.m, "epsilon control: control grid dimension differs");
  const TimeGrid grid = TimeGrid::uniform(spec.horizon, spec.steps);
  require(t_node < grid.steps(), "epsilon control: start node must precede the horizon");

  EpsilonControl best;
  best.cost.value = std::numeric_limits<double>::infinity();
  best.grid = grid;
  std::size_t tried = 0;
  for (int level = 0; level < spec.max_levels; ++level) {
    std::vector<int> pts = spec.initial_points;
    for (int& p : pts) p = (p - 1) * (1 << level) + 1;
    const ControlSet U = ControlSet::grid(spec.u_lo, spec.u_hi, pts);
    const ValueTable tab = compute_value_table(c, spec.lattice.refined(1 << level), grid, U, spec.quadrature);
    const double v_est = tab.value_at(t_node, x);

    auto consider = [&](const ControlLaw& law, const char* desc, const Vec& atom) {
      ++tried;
      const Estimate e = evaluate_cost(c, law, grid, t_node, x, spec.samples, spec.seed, spec.bsde);
      const bool done = e.value <= v_est + eps;
      if (done || e.value < best.cost.value) {
        best.control = law;
        best.description = desc;
        best.constant = atom;
        best.cost = e;
        best.level = level;
        best.value_estimate = v_est;
      }
      best.candidates_tried = tried;
      best.converged = done;
      return done;
    };

    for (const auto& a : U.atoms) {
      if (consider(constant_control(a), "constant", a)) return best;
    }
    if (consider(tab.policy().law(), "feedback", Vec(0))) return best;
  }
  best.converged = false;
  return best;
}

}  // namespace shjb
