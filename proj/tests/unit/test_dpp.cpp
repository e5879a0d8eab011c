#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "shjb/dpp.hpp"
#include "shjb/errors.hpp"
#include "shjb/families.hpp"
#include "shjb/rng.hpp"
#include "test_support.hpp"

using namespace shjb;
using shjb::test::atoms;
using shjb::test::vec;

namespace {

// Probabilists' Gauss-Hermite rule with 5 nodes (tabulated).
constexpr std::array<double, 5> kGhX = {-2.8569700138728056, -1.3556261799742659, 0.0, 1.3556261799742659,
                                        2.8569700138728056};
constexpr std::array<double, 5> kGhW = {0.011257411327720691, 0.22207592200561266, 0.53333333333333333,
                                        0.22207592200561266, 0.011257411327720691};

// Piecewise-linear interpolation on equally spaced centers, constant outside.
double interp(const std::vector<double>& v, double lo, double h, double x) {
  const double s = (x - lo) / h;
  if (s <= 0.0) return v.front();
  if (s >= static_cast<double>(v.size() - 1)) return v.back();
  const auto k = static_cast<std::size_t>(s);
  return v[k] + (s - static_cast<double>(k)) * (v[k + 1] - v[k]);
}

// One step of the lattice recursion for a 1-d problem with fixed control u.
double one_step(const CoefficientSet& c, double t, double dt, double x, double u, const std::vector<double>& next,
                double lo, double h) {
  const NoiseState w = deterministic_noise(t);
  const Vec X = vec({x}), U = vec({u});
  const double b = c.b(t, X, U, w)[0], s = c.sigma(t, X, U, w)(0, 0);
  double comp = 0.0, nu = 0.0;
  std::vector<double> gj;
  for (const auto& a : c.measure.atoms()) {
    gj.push_back(c.g(t, a.mark, X, U, w)[0]);
    comp += a.weight * gj.back();
    nu += a.weight;
  }
  double ybar = 0.0, z = 0.0;
  std::vector<double> vj(gj.size(), 0.0);
  for (int k = 0; k < 5; ++k) {
    const double dw = std::sqrt(dt) * kGhX[k];
    const double base = x + (b - comp) * dt + s * dw;
    double branch = (1.0 - nu * dt) * interp(next, lo, h, base);
    for (std::size_t j = 0; j < gj.size(); ++j) {
      const double v = interp(next, lo, h, base + gj[j]);
      vj[j] += kGhW[k] * v;
      branch += c.measure.atom(j).weight * dt * v;
    }
    ybar += kGhW[k] * branch;
    z += kGhW[k] * branch * dw / dt;
  }
  double kagg = 0.0;
  for (std::size_t j = 0; j < gj.size(); ++j) {
    const auto& a = c.measure.atom(j);
    kagg += (vj[j] - ybar) * c.l(t, a.mark) * a.weight;
  }
  return ybar + c.f(t, X, U, ybar, vec({z}), kagg, w) * dt;
}

LatticeSpec lattice1d(double lo, double hi, int cells) { return LatticeSpec{vec({lo}), vec({hi}), {cells}}; }

ControlSet bang_bang() { return ControlSet::grid(vec({-1.0}), vec({1.0}), {2}); }

}  // namespace

TEST_CASE("gauss-hermite rule matches the tabulated nodes") {
  std::vector<double> x, w;
  gauss_hermite_normal(5, x, w);
  for (int k = 0; k < 5; ++k) {
    CHECK(x[static_cast<std::size_t>(k)] == doctest::Approx(kGhX[static_cast<std::size_t>(k)]).epsilon(1e-12));
    CHECK(w[static_cast<std::size_t>(k)] == doctest::Approx(kGhW[static_cast<std::size_t>(k)]).epsilon(1e-12));
  }
  // Exact for polynomial moments up to degree 9: E xi^4 = 3, E xi^8 = 105.
  double m4 = 0.0, m8 = 0.0;
  for (int k = 0; k < 5; ++k) {
    m4 += w[k] * std::pow(x[k], 4);
    m8 += w[k] * std::pow(x[k], 8);
  }
  CHECK(m4 == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(m8 == doctest::Approx(105.0).epsilon(1e-10));
}

TEST_CASE("tensor grid interpolation and differences") {
  const TensorGrid g = TensorGrid::cell_centers(vec({0.0, -1.0}), vec({1.0, 1.0}), {4, 8});
  CHECK(g.size() == 32);
  CHECK(g.point(0)[0] == doctest::Approx(0.125));
  CHECK(g.point(0)[1] == doctest::Approx(-0.875));
  Eigen::VectorXd v(32);
  for (std::size_t i = 0; i < 32; ++i) v[static_cast<Eigen::Index>(i)] = 2.0 * g.point(i)[0] - g.point(i)[1] + 0.5;
  bool cl = true;
  CHECK(g.interpolate(v, vec({0.4, 0.3}), &cl) == doctest::Approx(0.8 - 0.3 + 0.5));
  CHECK_FALSE(cl);
  g.interpolate(v, vec({2.0, 0.0}), &cl);
  CHECK(cl);
  const std::size_t inner = g.flat({1, 3, 0});
  const Vec grad = g.gradient_at(v, inner);
  CHECK(grad[0] == doctest::Approx(2.0));
  CHECK(grad[1] == doctest::Approx(-1.0));
  CHECK(g.hessian_at(v, inner).norm() < 1e-9);
  CHECK(g.upwind_at(v, inner, 0, 1.0) == doctest::Approx(2.0));
  CHECK(g.upwind_at(v, g.flat({0, 3, 0}), 0, -1.0) == 0.0);
  CHECK(g.upwind_at(v, g.flat({0, 3, 0}), 0, 1.0) == doctest::Approx(2.0));
  CHECK(g.nearest(vec({0.9, 0.9})) == g.flat({3, 7, 0}));
  CHECK(g.on_boundary(0));
  CHECK_FALSE(g.on_boundary(inner));
}

TEST_CASE("value table: one step equals the independent operator") {
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}, {-0.6, 0.5}}));
  const LatticeSpec lat = lattice1d(-3.0, 3.0, 30);
  const TimeGrid grid = TimeGrid::uniform(0.1, 1);
  const ValueTable tab = compute_value_table(c, lat, grid, bang_bang());
  const double h = 0.2, lo = -2.9;
  std::vector<double> term(30);
  for (int q = 0; q < 30; ++q) term[static_cast<std::size_t>(q)] = c.h(vec({lo + q * h}), deterministic_noise(0.1));
  for (int q = 0; q < 30; ++q) {
    const double x = lo + q * h;
    const double v0 = one_step(c, 0.0, 0.1, x, -1.0, term, lo, h);
    const double v1 = one_step(c, 0.0, 0.1, x, 1.0, term, lo, h);
    CHECK(tab.values[0][q] == doctest::Approx(std::min(v0, v1)).epsilon(1e-12));
    CHECK(tab.argmin[0][static_cast<std::size_t>(q)] == (v1 < v0 ? 1 : 0));
  }
}

TEST_CASE("value table equals brute-force policy enumeration") {
  const auto c = make_family("bounded-smooth", {{"s", 0.3}}, atoms({{0.4, 1.0}}));
  const int P = 6;
  const double lo = -2.5, h = 1.0;
  const LatticeSpec lat = lattice1d(-3.0, 3.0, P);
  const TimeGrid grid = TimeGrid::uniform(0.4, 2);
  const ValueTable tab = compute_value_table(c, lat, grid, bang_bang());

  std::vector<double> term(P);
  for (int q = 0; q < P; ++q) term[static_cast<std::size_t>(q)] = c.h(vec({lo + q * h}), deterministic_noise(0.4));
  std::vector<double> best(P, std::numeric_limits<double>::infinity());
  for (unsigned policy = 0; policy < (1u << (2 * P)); ++policy) {
    auto u = [policy](int step, int q) { return (policy >> (step * P + q)) & 1u ? 1.0 : -1.0; };
    std::vector<double> v1(P), v0(P);
    for (int q = 0; q < P; ++q) v1[static_cast<std::size_t>(q)] = one_step(c, 0.2, 0.2, lo + q * h, u(1, q), term, lo, h);
    for (int q = 0; q < P; ++q) v0[static_cast<std::size_t>(q)] = one_step(c, 0.0, 0.2, lo + q * h, u(0, q), v1, lo, h);
    for (int q = 0; q < P; ++q) best[static_cast<std::size_t>(q)] = std::min(best[static_cast<std::size_t>(q)], v0[static_cast<std::size_t>(q)]);
  }
  for (int q = 0; q < P; ++q) CHECK(tab.values[0][q] == doctest::Approx(best[static_cast<std::size_t>(q)]).epsilon(1e-12));
}

TEST_CASE("value table: terminal anchoring, determinism, control-grid monotonicity") {
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}}));
  const LatticeSpec lat = lattice1d(-4.0, 4.0, 40);
  const TimeGrid grid = TimeGrid::uniform(1.0, 20);
  const auto coarse = ControlSet::grid(vec({-1.0}), vec({1.0}), {3});
  const auto fine = ControlSet::grid(vec({-1.0}), vec({1.0}), {5});  // contains the coarse atoms
  const ValueTable a = compute_value_table(c, lat, grid, coarse);
  const ValueTable b = compute_value_table(c, lat, grid, fine);
  const ValueTable a2 = compute_value_table(c, lat, grid, coarse);
  for (std::size_t q = 0; q < a.centers.size(); ++q) {
    CHECK(a.values[20][static_cast<Eigen::Index>(q)] == c.h(a.centers.point(q), deterministic_noise(1.0)));
  }
  for (std::size_t i = 0; i <= 20; ++i) {
    CHECK(a.values[i] == a2.values[i]);
    CHECK((b.values[i].array() <= a.values[i].array() + 1e-15).all());
  }
  for (std::size_t i = 0; i < 20; ++i) CHECK(a.argmin[i] == a2.argmin[i]);
}

TEST_CASE("value table: control-independent problems ignore the control grid") {
  const auto c = make_family("bounded-smooth", {{"kb", 0.0}, {"cu", 0.0}}, atoms({{0.3, 1.0}}));
  const LatticeSpec lat = lattice1d(-4.0, 4.0, 40);
  const TimeGrid grid = TimeGrid::uniform(1.0, 10);
  const ValueTable one = compute_value_table(c, lat, grid, ControlSet::singleton(vec({0.0})));
  const ValueTable many = compute_value_table(c, lat, grid, ControlSet::grid(vec({-1.0}), vec({1.0}), {4}));
  for (std::size_t i = 0; i <= 10; ++i) CHECK(one.values[i] == many.values[i]);
  for (std::size_t i = 0; i < 10; ++i) {
    for (int a : many.argmin[i]) CHECK(a == 0);
  }
}

TEST_CASE("value table rejects noise-reading coefficients") {
  const auto c = make_family("affine-noise", {}, atoms({{1.0, 1.0}}));
  CHECK_THROWS_AS(compute_value_table(c, lattice1d(-1, 1, 4), TimeGrid::uniform(1.0, 2), bang_bang()),
                  InvalidArgument);
}

TEST_CASE("evaluate_cost oracles") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 10);
  const auto zc = make_family("zero", {{"terminal", 2.0}}, {});
  CHECK(evaluate_cost(zc, constant_control(vec({0.0})), grid, 0, vec({0.3}), 200, 1).value ==
        doctest::Approx(2.0).epsilon(1e-12));
  const auto run = make_family("zero", {{"terminal", 2.0}, {"running", 1.0}}, {});
  CHECK(evaluate_cost(run, constant_control(vec({0.0})), grid, 4, vec({0.3}), 200, 1).value ==
        doctest::Approx(2.6).epsilon(1e-12));

  // One step: E (x + u dt + s dW)^2 = (x + u dt)^2 + s^2 dt.
  const auto lin = make_family("linear", {{"beta", 1.0}, {"s0", 0.5}}, {});
  const TimeGrid one = TimeGrid::uniform(0.25, 1);
  for (double u : {-1.0, 1.0}) {
    const auto e = evaluate_cost(lin, constant_control(vec({u})), one, 0, vec({0.2}), 40000, 3);
    const double exact = std::pow(0.2 + 0.25 * u, 2) + 0.25 * 0.25;
    CHECK(std::abs(e.value - exact) <= e.ci);
  }
  // Same seed, same value.
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}}));
  CHECK(evaluate_cost(c, constant_control(vec({1.0})), grid, 0, vec({0.0}), 500, 9).value ==
        evaluate_cost(c, constant_control(vec({1.0})), grid, 0, vec({0.0}), 500, 9).value);
}

TEST_CASE("dpp residual: trivial and control-independent problems") {
  const auto z = make_family("zero", {{"terminal", 1.5}}, {});
  const LatticeSpec lat = lattice1d(-2.0, 2.0, 10);
  const TimeGrid grid = TimeGrid::uniform(1.0, 10);
  const ValueTable tz = compute_value_table(z, lat, grid, bang_bang());
  CHECK(dpp_residual(z, 0, vec({0.1}), 5, tz, 200, 1).residual < 1e-12);

  const auto c = make_family("bounded-smooth", {{"kb", 0.0}, {"cu", 0.0}}, atoms({{0.3, 1.0}}));
  const ValueTable tab = compute_value_table(c, lattice1d(-4.0, 4.0, 80), TimeGrid::uniform(1.0, 40),
                                             ControlSet::singleton(vec({0.0})));
  const auto r = dpp_residual(c, 0, vec({0.0}), 20, tab, 20000, 5);
  CHECK(r.candidates.size() == 2);
  CHECK(r.residual <= r.best_ci + 1e-2);
}

TEST_CASE("dpp over the whole horizon matches the table") {
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}}));
  const TimeGrid grid = TimeGrid::uniform(1.0, 40);
  const ValueTable tab = compute_value_table(c, lattice1d(-4.0, 4.0, 80), grid, bang_bang());
  const auto r = dpp_residual(c, 0, vec({0.0}), 40, tab, 20000, 6);
  // Lattice discretization plus Monte Carlo error.
  CHECK(r.residual <= r.best_ci + 3e-2);
}

TEST_CASE("epsilon-optimal control: trivial cases") {
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}}));
  SearchSpec spec;
  spec.lattice = lattice1d(-4.0, 4.0, 40);
  spec.horizon = 1.0;
  spec.steps = 20;
  spec.u_lo = vec({-1.0});
  spec.u_hi = vec({1.0});
  spec.initial_points = {2};
  spec.samples = 5000;
  spec.seed = 3;
  const auto first = epsilon_optimal_control(c, 0, vec({0.0}), std::numeric_limits<double>::infinity(), spec);
  CHECK(first.converged);
  CHECK(first.candidates_tried == 1);
  CHECK(first.description == "constant");
  CHECK(first.constant[0] == -1.0);

  spec.u_lo = spec.u_hi = vec({0.5});
  spec.initial_points = {1};
  spec.lattice = lattice1d(-4.0, 4.0, 160);
  spec.samples = 20000;
  const auto single = epsilon_optimal_control(c, 0, vec({0.0}), 2e-2, spec);
  CHECK(single.constant[0] == 0.5);
  CHECK(std::abs(single.cost.value - single.value_estimate) <= 2e-2 + single.cost.ci);
}

TEST_CASE("epsilon-optimal control on the bang-bang benchmark") {
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}}));
  SearchSpec spec;
  spec.lattice = lattice1d(-4.0, 4.0, 80);
  spec.horizon = 1.0;
  spec.steps = 20;
  spec.u_lo = vec({-1.0});
  spec.u_hi = vec({1.0});
  spec.initial_points = {2};
  spec.samples = 20000;
  spec.seed = 8;
  const auto eps = epsilon_optimal_control(c, 0, vec({0.5}), 1e-2, spec);

  // Brute force over constant and threshold policies u = sign-switch at x = theta.
  const TimeGrid grid = TimeGrid::uniform(1.0, 20);
  double brute = std::numeric_limits<double>::infinity();
  for (int k = -20; k <= 20; ++k) {
    const double theta = 0.2 * k;
    for (double below : {-1.0, 1.0}) {
      const ControlLaw law = [theta, below](std::size_t, double, const Vec& x, const NoiseState&) {
        return vec({x[0] < theta ? below : -below});
      };
      brute = std::min(brute, evaluate_cost(c, law, grid, 0, vec({0.5}), 20000, 8).value);
    }
  }
  CHECK(eps.cost.value <= brute + 1e-2 + eps.cost.ci);
}

TEST_CASE("feedback policy lookup") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 4);
  const TensorGrid pts = TensorGrid::cell_centers(vec({-1.0}), vec({1.0}), {4});
  const auto U = bang_bang();
  std::vector<std::vector<int>> idx(4, std::vector<int>(4, 0));
  idx[2][3] = 1;
  const FeedbackPolicy p(grid, pts, U, idx);
  CHECK(p.node_at(0.5) == 2);
  CHECK(p.node_at(0.49) == 1);
  CHECK(p.node_at(1.0) == 3);
  CHECK(p(0.6, vec({0.9}))[0] == 1.0);
  CHECK(p(0.6, vec({-0.9}))[0] == -1.0);
  const auto r1 = random_feedback_policy(grid, pts, U, 4), r2 = random_feedback_policy(grid, pts, U, 4);
  for (std::size_t n = 0; n < 4; ++n) {
    for (std::size_t q = 0; q < 4; ++q) CHECK(r1.atom_at(n, q) == r2.atom_at(n, q));
  }
}
