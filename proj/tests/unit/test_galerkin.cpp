#include <doctest.h>

#include <cmath>
#include <numbers>

#include "shjb/errors.hpp"
#include "shjb/families.hpp"
#include "shjb/galerkin.hpp"
#include "shjb/rng.hpp"
#include "shjb/stats.hpp"
#include "test_support.hpp"

using namespace shjb;
using shjb::test::atoms;
using shjb::test::blank;
using shjb::test::vec;

namespace {

CoefficientSet constant_sigma(double s) {
  CoefficientSet c = blank();
  c.sigma = [s](double, const Vec&, const Vec&, const NoiseState&) { return Mat(Mat::Constant(1, 1, s)); };
  return c;
}

// n = 1, d = 2, state-dependent sigma whose second column is driven by the
// observed Brownian component.
CoefficientSet split_sigma() {
  CoefficientSet c = blank(1, 2, 1);
  c.channels = {Channel::brownian(1)};
  c.sigma = [](double, const Vec& x, const Vec&, const NoiseState&) {
    Mat s(1, 2);
    s << 0.3 + 0.1 * std::sin(x[0]), 0.2 + 0.1 * std::cos(x[0]);
    return s;
  };
  return c;
}

OperatorPair zero_pair(int nb) {
  OperatorPair p;
  p.A = p.B = p.bstar_gram = p.sigma_hat_gram = Eigen::MatrixXd::Zero(nb, nb);
  return p;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

FieldMap source(const GelfandTriple& tri, std::function<double(const Vec&)> fn) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(tri.quad_size()));
  for (std::size_t q = 0; q < tri.quad_size(); ++q) v[static_cast<Eigen::Index>(q)] = fn(tri.points[q]);
  return [v](std::size_t, double, const NoiseState&, const Eigen::VectorXd&, const Eigen::VectorXd&,
             const std::vector<Eigen::VectorXd>&) { return v; };
}

}  // namespace

TEST_CASE("sine basis: mass, stiffness and exact quadrature") {
  const double L = 2.0;
  const auto tri = assemble_triple(L, 1, 6);
  CHECK(tri.size() == 6);
  CHECK(max_abs(tri.mass - Eigen::MatrixXd::Identity(6, 6)) < 1e-12);
  for (int k = 1; k <= 6; ++k) {
    const double w = k * std::numbers::pi / (2.0 * L);
    CHECK(tri.stiffness(k - 1, k - 1) == doctest::Approx(w * w).epsilon(1e-12));
    CHECK(tri.v_norm2(Eigen::VectorXd::Unit(6, k - 1)) == doctest::Approx(w * w + 1.0).epsilon(1e-12));
  }
  const auto fine = assemble_triple(L, 1, 6, 48);
  CHECK(max_abs(fine.mass - tri.mass) < 1e-10);
  CHECK(max_abs(fine.stiffness - tri.stiffness) < 1e-10);
  CHECK_THROWS_AS(assemble_triple(L, 1, 6, 6), InvalidArgument);

  const auto tri2 = assemble_triple(1.0, 2, 3);
  CHECK(tri2.size() == 9);
  CHECK(max_abs(tri2.mass - Eigen::MatrixXd::Identity(9, 9)) < 1e-12);
  for (int b = 0; b < 9; ++b) {
    const auto& m = tri2.mode_index[static_cast<std::size_t>(b)];
    const double expect = std::pow(m[0] * std::numbers::pi / 2.0, 2) + std::pow(m[1] * std::numbers::pi / 2.0, 2);
    CHECK(tri2.stiffness(b, b) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("sine basis: evaluation, projection and zero extension") {
  const auto tri = assemble_triple(2.0, 1, 8);
  const Eigen::VectorXd e3 = Eigen::VectorXd::Unit(8, 2);
  const double x = 0.37;
  CHECK(tri.evaluate(e3, vec({x})) == doctest::Approx(std::sin(3.0 * std::numbers::pi * (x + 2.0) / 4.0) / std::sqrt(2.0)));
  CHECK(tri.evaluate(e3, vec({2.5})) == 0.0);
  const Eigen::VectorXd p = tri.project([&](const Vec& y) { return tri.evaluate(e3, y); });
  CHECK((p - e3).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd G = tri.basis_gradient(vec({x}));
  const double h = 1e-6;
  CHECK(G(0, 2) == doctest::Approx((tri.evaluate(e3, vec({x + h})) - tri.evaluate(e3, vec({x - h}))) / (2.0 * h)).epsilon(1e-7));
}

TEST_CASE("operators: trivial sigma") {
  const auto tri = assemble_triple(2.0, 1, 6);
  const auto zero = assemble_operators(blank(), tri);
  CHECK(max_abs(zero.A) == 0.0);
  CHECK(max_abs(zero.B) == 0.0);
  CHECK_FALSE(zero.split);

  const double c = 0.7;
  const auto cs = assemble_operators(constant_sigma(c), tri);
  CHECK(max_abs(cs.A - 0.5 * c * c * tri.stiffness) < 1e-12);
  CHECK(max_abs(cs.B) == 0.0);

  CoefficientSet id = blank(2, 2, 1);
  id.sigma = [](double, const Vec&, const Vec&, const NoiseState&) { return Mat(Mat::Identity(2, 2)); };
  const auto tri2 = assemble_triple(1.0, 2, 3);
  CHECK(max_abs(assemble_operators(id, tri2).A - 0.5 * tri2.stiffness) < 1e-12);
}

TEST_CASE("operators: split diffusion identity") {
  const auto tri = assemble_triple(2.0, 1, 8);
  const auto op = assemble_operators(split_sigma(), tri);
  REQUIRE(op.split);
  CHECK(max_abs(2.0 * op.A - op.bstar_gram - op.sigma_hat_gram) < 1e-12);
  // <B z, phi> against composite Simpson on 20000 intervals of int sigma_d z phi'.
  double direct = 0.0;
  const int K = 20000;
  for (int k = 0; k <= K; ++k) {
    const double x = -2.0 + 4.0 * k / K;
    const double wk = (k == 0 || k == K) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    direct += wk * (0.2 + 0.1 * std::cos(x)) * tri.basis_row(vec({x}))[4] * tri.basis_gradient(vec({x}))(0, 1);
  }
  direct *= 4.0 / K / 3.0;
  CHECK(op.B(1, 4) == doctest::Approx(direct).epsilon(1e-12));

  // A constant sigma_d makes B antisymmetric (boundary terms vanish).
  auto an = make_family("affine-noise", {{"s", 0.4}}, {});
  const auto ap = assemble_operators(an, tri);
  CHECK(max_abs(ap.B + ap.B.transpose()) < 1e-12);
  CHECK(max_abs(ap.bstar_gram - 0.16 * tri.stiffness) < 1e-12);
  CHECK(max_abs(ap.sigma_hat_gram) == 0.0);
}

TEST_CASE("coercivity check") {
  const auto tri = assemble_triple(2.0, 1, 8);
  const double c = 0.6;
  const auto op = assemble_operators(constant_sigma(c), tri);
  // 2A = c^2 S, so the slack is (c^2 - alpha) |D phi|^2 + (lambda - alpha) |phi|^2.
  CHECK(check_coercivity(op, tri, c * c, c * c, 16, 1).pass);
  CHECK(check_coercivity(op, tri, 0.5 * c * c, 0.0, 16, 1).pass == false);
  CHECK(check_coercivity(op, tri, 0.5 * c * c, 0.5 * c * c, 16, 1).pass);
  const auto bad = check_coercivity(op, tri, c * c + 0.05, 1.0, 16, 1);
  CHECK_FALSE(bad.pass);
  CHECK(bad.worst == "e_8");
  CHECK(bad.min_slack == doctest::Approx(-0.05 * tri.stiffness(7, 7) + 1.0 - (c * c + 0.05)).epsilon(1e-10));

  // Fully observed noise leaves nothing for the coercive part.
  const auto ap = assemble_operators(make_family("affine-noise", {{"s", 0.4}}, {}), tri);
  CHECK(check_coercivity(ap, tri, 0.0, 0.0, 16, 2).pass);
  CHECK_FALSE(check_coercivity(ap, tri, 0.01, 0.01, 16, 2).pass);
}

TEST_CASE("operators are invariant under rotating the unobserved noise") {
  const auto tri = assemble_triple(1.0, 2, 3);
  CoefficientSet c = blank(2, 2, 1);
  c.sigma = [](double, const Vec& x, const Vec&, const NoiseState&) {
    Mat s(2, 2);
    s << 0.5 + 0.1 * x[0], 0.2, -0.1, 0.4 + 0.1 * x[1] * x[1];
    return s;
  };
  CoefficientSet r = c;
  const double th = 0.7;
  Mat Q(2, 2);
  Q << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  r.sigma = [c, Q](double t, const Vec& x, const Vec& u, const NoiseState& w) { return Mat(c.sigma(t, x, u, w) * Q); };
  CHECK(max_abs(assemble_operators(c, tri).A - assemble_operators(r, tri).A) < 1e-12);
}

TEST_CASE("scenario tree bookkeeping") {
  const ScenarioModel sc(TimeGrid::uniform(1.0, 6), true, {0.5, 1.0}, {Channel::brownian(0), Channel::jumps()});
  for (std::size_t i = 0; i <= 6; ++i) {
    CHECK(sc.states(i) == (i + 1) * (i + 1));
    double total = 0.0;
    for (double p : sc.probabilities(i)) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
  double mean_w = 0.0, mean_n = 0.0;
  for (std::size_t s = 0; s < sc.states(6); ++s) {
    mean_w += sc.probabilities(6)[s] * sc.noise(6, s).values[0];
    mean_n += sc.probabilities(6)[s] * sc.noise(6, s).values[1];
  }
  CHECK(std::abs(mean_w) < 1e-14);
  CHECK(mean_n == doctest::Approx(1.5).epsilon(1e-12));
  CHECK_THROWS_AS(ScenarioModel(TimeGrid::uniform(1.0, 2), false, {3.0}), InvalidArgument);

  const auto a = sample_scenario_path(sc, 9), b = sample_scenario_path(sc, 9);
  CHECK(a.states == b.states);
  CHECK(a.atoms == b.atoms);
  CHECK(a.states.size() == 7);
}

TEST_CASE("linear solver: trivial data") {
  const auto tri = assemble_triple(2.0, 1, 6);
  const ScenarioModel sc(TimeGrid::uniform(1.0, 10), false, {});
  const auto ops = OperatorField::constant(zero_pair(6));
  const Eigen::VectorXd xi = tri.project([](const Vec& x) { return std::cos(x[0]); });
  const auto zero = solve_linear_bseej(ops, tri, nullptr, [&](const NoiseState&) { return Eigen::VectorXd::Zero(6); }, sc);
  for (const auto& node : zero.y) CHECK(node[0].cwiseAbs().maxCoeff() == 0.0);

  // A = 0 and a constant source integrate linearly in time.
  const auto sol = solve_linear_bseej(
      ops, tri,
      [&](std::size_t, double, const NoiseState&) { return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(tri.quad_size()), 0.3); },
      [&](const NoiseState&) { return xi; }, sc);
  const Eigen::VectorXd load = tri.load(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(tri.quad_size()), 0.3));
  CHECK((sol.y[0][0] - (xi - load)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("linear solver: heat decay of a single mode") {
  const double c = 0.8, L = 2.0, T = 0.5;
  const std::size_t N = 50;
  const auto tri = assemble_triple(L, 1, 8);
  const ScenarioModel sc(TimeGrid::uniform(T, N), false, {});
  const auto ops = OperatorField::constant(assemble_operators(constant_sigma(c), tri));
  const Eigen::VectorXd e3 = Eigen::VectorXd::Unit(8, 2);
  const auto sol = solve_linear_bseej(ops, tri, nullptr, [&](const NoiseState&) { return e3; }, sc);
  const double lam = 0.5 * c * c * std::pow(3.0 * std::numbers::pi / (2.0 * L), 2);
  const double dt = T / static_cast<double>(N);
  CHECK(sol.y[0][0][2] == doctest::Approx(std::pow(1.0 + dt * lam, -static_cast<double>(N))).epsilon(1e-12));
  CHECK(std::abs(sol.y[0][0][2] - std::exp(-lam * T)) <= lam * lam * T * dt);
  Eigen::VectorXd rest = sol.y[0][0];
  rest[2] = 0.0;
  CHECK(rest.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("linear solver: martingale terminals give exact Z and R") {
  const auto tri = assemble_triple(2.0, 1, 4);
  const auto ops = OperatorField::constant(zero_pair(4));
  const Eigen::VectorXd phi = tri.project([](const Vec& x) { return std::exp(-x[0] * x[0]); });

  const ScenarioModel bw(TimeGrid::uniform(1.0, 8), true, {}, {Channel::brownian(0)});
  const auto sb = solve_linear_bseej(ops, tri, nullptr, [&](const NoiseState& w) { return Eigen::VectorXd(w.values[0] * phi); }, bw);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t s = 0; s < bw.states(i); ++s) {
      CHECK((sb.y[i][s] - bw.noise(i, s).values[0] * phi).cwiseAbs().maxCoeff() < 1e-13);
      CHECK((sb.z[i][s] - phi).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  // The Brownian tree carries no dt^2 remainder: the energy identity is exact.
  CHECK(energy_identity_residual(sb, ops, nullptr, tri) < 1e-13);

  const double w = 0.8;
  const ScenarioModel jp(TimeGrid::uniform(1.0, 8), false, {w}, {Channel::jumps()});
  const auto sj = solve_linear_bseej(ops, tri, nullptr, [&](const NoiseState& ns) { return Eigen::VectorXd(ns.values[0] * phi); }, jp);
  const double dt = 1.0 / 8.0;
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t s = 0; s < jp.states(i); ++s) {
      const double expect = static_cast<double>(jp.jump_count(i, s)) + w * (1.0 - jp.grid().node(i));
      CHECK((sj.y[i][s] - expect * phi).cwiseAbs().maxCoeff() < 1e-12);
      // At most one jump per step: the indicator variance is w dt (1 - w dt).
      CHECK((sj.r[i][s][0] - (1.0 - w * dt) * phi).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("Picard iteration") {
  const double L = 2.0, c = 0.8;
  const auto tri = assemble_triple(L, 1, 8);
  const ScenarioModel sc(TimeGrid::uniform(1.0, 40), false, {});
  const OperatorPair heat = assemble_operators(constant_sigma(c), tri);
  const auto ops = OperatorField::constant(heat);
  const Eigen::VectorXd xi = tri.project([](const Vec& x) { return std::exp(-x[0] * x[0]); });
  const TerminalData term = [&](const NoiseState&) { return xi; };

  const auto lin = solve_nonlinear_bseej(ops, tri, source(tri, [](const Vec&) { return 0.0; }), term, sc);
  CHECK(lin.iterations == 1);
  CHECK(lin.converged);

  const double kappa = 0.3;
  const FieldMap F = [&](std::size_t, double, const NoiseState&, const Eigen::VectorXd& y, const Eigen::VectorXd&,
                         const std::vector<Eigen::VectorXd>&) { return Eigen::VectorXd(kappa * (tri.E * y)); };
  PicardOptions opts;
  opts.tol = 1e-12;
  const auto pic = solve_nonlinear_bseej(ops, tri, F, term, sc, opts);
  CHECK(pic.converged);
  CHECK(pic.iterations <= 12);
  for (std::size_t k = 1; k < pic.history.size(); ++k) {
    if (pic.history[k - 1] > 1e-13) CHECK(pic.history[k] <= 0.5 * pic.history[k - 1]);
  }

  // F = kappa y at the fixed point is the linear problem with A + kappa M.
  OperatorPair shifted = heat;
  shifted.A += kappa * tri.mass;
  const auto direct = solve_linear_bseej(OperatorField::constant(shifted), tri, nullptr, term, sc);
  CHECK((pic.y[0][0] - direct.y[0][0]).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(weak_form_residual(pic, ops, F, tri) < 1e-10);

  PicardOptions one;
  one.max_iter = 1;
  const auto capped = solve_nonlinear_bseej(ops, tri, F, term, sc, one);
  CHECK_FALSE(capped.converged);
  CHECK(capped.iterations == 1);
}

TEST_CASE("continuous dependence on terminal value and driver") {
  // With 2A = c^2 S and c >= 1, Gronwall on the energy gives lhs <= (3e^T + 1) rhs for T = 1.
  const auto tri = assemble_triple(2.0, 1, 8);
  const ScenarioModel sc(TimeGrid::uniform(1.0, 40), true, {}, {Channel::brownian(0)});
  const auto ops = OperatorField::constant(assemble_operators(constant_sigma(1.2), tri));
  const FieldMap Fa = source(tri, [](const Vec& x) { return 0.5 * std::sin(x[0]); });
  const FieldMap Fb = source(tri, [](const Vec&) { return 0.0; });
  const TerminalData xa = [&](const NoiseState& w) { return tri.project([&](const Vec& x) { return std::cos(x[0]) + w.values[0]; }); };
  const TerminalData xb = [&](const NoiseState&) { return tri.project([](const Vec& x) { return std::cos(x[0]); }); };
  const auto a = solve_nonlinear_bseej(ops, tri, Fa, xa, sc);
  const auto b = solve_nonlinear_bseej(ops, tri, Fb, xb, sc);
  const auto rep = continuous_dependence_check(a, b, Fa, Fb, tri);
  CHECK(rep.rhs > 0.0);
  CHECK(rep.ratio <= 3.0 * std::exp(1.0) + 1.0);
  const auto same = continuous_dependence_check(b, b, Fb, Fb, tri);
  CHECK(same.lhs == 0.0);
  CHECK(same.ratio == 0.0);
}

TEST_CASE("energy identity") {
  const auto tri = assemble_triple(2.0, 1, 8);
  const FieldMap F = [&](std::size_t, double, const NoiseState&, const Eigen::VectorXd& y, const Eigen::VectorXd&,
                         const std::vector<Eigen::VectorXd>&) { return Eigen::VectorXd(0.2 * (tri.E * y).array().sin()); };
  const auto ops = OperatorField::constant(assemble_operators(make_family("affine-noise", {{"s", 0.4}}, {}), tri));
  double prev = INFINITY;
  for (std::size_t N : {10, 20, 40}) {
    const ScenarioModel sc(TimeGrid::uniform(0.5, N), true, {0.5}, {Channel::brownian(0), Channel::jumps()});
    const TerminalData xi = [&](const NoiseState& w) {
      return tri.project([&](const Vec& x) { return std::exp(-x[0] * x[0]) * (1.0 + 0.3 * w.values[0] + 0.2 * w.values[1]); });
    };
    const auto sol = solve_nonlinear_bseej(ops, tri, F, xi, sc);
    const auto rep = energy_identity(sol, ops, F, tri);
    CHECK(rep.terminal > 0.0);
    CHECK(std::abs(rep.residual) < prev);
    prev = std::abs(rep.residual);
  }
}

TEST_CASE("jump energy term is a martingale increment") {
  const auto tri = assemble_triple(2.0, 1, 4);
  const auto ops = OperatorField::constant(zero_pair(4));
  const ScenarioModel sc(TimeGrid::uniform(1.0, 10), false, {1.5}, {Channel::jumps()});
  const Eigen::VectorXd phi = tri.project([](const Vec& x) { return std::exp(-x[0] * x[0]); });
  const auto sol = solve_linear_bseej(ops, tri, nullptr, [&](const NoiseState& w) { return Eigen::VectorXd(std::sqrt(w.values[0] + 1.0) * phi); }, sc);

  ScenarioPath quiet;
  quiet.states.assign(11, 0);
  quiet.atoms.assign(10, -1);
  double comp = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& r = sol.r[i][0][0];
    comp += 0.1 * 1.5 * (tri.h_norm2(r) + 2.0 * sol.y[i][0].dot(tri.mass * r));
  }
  CHECK(jump_energy_term(sol, tri, quiet) == doctest::Approx(-comp).epsilon(1e-12));

  std::vector<double> samples;
  for (std::uint64_t s = 0; s < 20000; ++s) samples.push_back(jump_energy_term(sol, tri, sample_scenario_path(sc, child_seed(3, s))));
  CHECK(std::abs(mean(samples)) <= ci_halfwidth(samples));
}

TEST_CASE("weak HJB: constant data") {
  const auto tri = assemble_triple(2.0, 1, 8);
  const auto c = make_family("zero", {{"running", 0.4}, {"terminal", 1.5}}, {});
  const ScenarioModel sc = ScenarioModel::for_coefficients(c, TimeGrid::uniform(1.0, 10));
  const auto U = ControlSet::grid(vec({-1.0}), vec({1.0}), {3});
  const auto res = solve_hjb_weak(c, tri, U, sc, HjbWeakOptions{});
  const Eigen::VectorXd expect = tri.project([](const Vec&) { return 1.9; });
  CHECK((res.solution.y[0][0] - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(res.weak_residual < 1e-12);
  CHECK(res.triplet.nodes.size() == 11);
  CHECK(res.triplet.at(0).V.size() == static_cast<Eigen::Index>(tri.intervals + 1));
}

TEST_CASE("weak HJB: deterministic data on a branching tree has Z = R = 0") {
  const auto tri = assemble_triple(3.0, 1, 8);
  const auto c = make_family("affine-noise", {{"a", -0.2}, {"s", 0.4}, {"j0", 0.2}, {"r", 0.1}}, atoms({{1.0, 0.5}}));
  const ScenarioModel sc = ScenarioModel::for_coefficients(c, TimeGrid::uniform(0.5, 8));
  REQUIRE(sc.brownian());
  REQUIRE(sc.jumps());
  const auto res = solve_hjb_weak(c, tri, ControlSet::grid(vec({-0.5}), vec({0.5}), {2}), sc, HjbWeakOptions{});
  CHECK(res.solution.converged);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t s = 0; s < sc.states(i); ++s) {
      CHECK(res.solution.z[i][s].cwiseAbs().maxCoeff() < 1e-10);
      CHECK(res.solution.r[i][s][0].cwiseAbs().maxCoeff() < 1e-10);
      CHECK((res.solution.y[i][s] - res.solution.y[i][0]).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  HjbWeakOptions strict;
  strict.alpha = 0.05;
  strict.lambda = 0.05;
  CHECK_THROWS_AS(solve_hjb_weak(c, tri, ControlSet::singleton(vec({0.0})), sc, strict), InvalidArgument);
}

TEST_CASE("weak HJB with a single control agrees with the PIDE") {
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}}));
  const auto U = ControlSet::singleton(vec({0.5}));
  const TimeGrid T = TimeGrid::uniform(1.0, 200);
  const auto tri = assemble_triple(4.0, 1, 24);
  HjbWeakOptions opts;
  opts.output = TensorGrid(vec({-4.0}), vec({4.0}), {161});
  const auto weak = solve_hjb_weak(c, tri, U, ScenarioModel::for_coefficients(c, T), opts);
  const auto pide = solve_pide_deterministic(c, opts.output, T, U);
  CHECK(weak.solution.converged);
  CHECK(std::abs(weak.triplet.at(0).V[80] - pide.V[0][80]) <= 3e-2);
}
