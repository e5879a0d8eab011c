#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "shjb/bsde.hpp"
#include "shjb/errors.hpp"
#include "shjb/families.hpp"
#include "shjb/regression.hpp"
#include "shjb/rng.hpp"
#include "test_support.hpp"

using namespace shjb;
using shjb::test::atoms;
using shjb::test::vec;

namespace {

const ControlLaw kNoControl = constant_control(Vec(0));

// Jump-free explicit scheme with ordinary least squares on [1, x], written
// against the batch directly.
double ols_reference(const CoefficientSet& c, const ForwardBatch& B) {
  const std::size_t N = B.grid.steps();
  const auto M = static_cast<Eigen::Index>(B.samples);
  Eigen::VectorXd y(M);
  for (Eigen::Index s = 0; s < M; ++s) y[s] = c.h(vec({B.X[N](s, 0)}), deterministic_noise(1.0));
  for (std::size_t i = N; i-- > 0;) {
    const bool varies = (B.X[i].col(0).array() != B.X[i](0, 0)).any();
    Eigen::MatrixXd D(M, varies ? 2 : 1);
    D.col(0).setOnes();
    if (varies) D.col(1) = B.X[i].col(0);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(D);
    const Eigen::VectorXd yh = D * qr.solve(y);
    Eigen::VectorXd zt(M);
    for (Eigen::Index s = 0; s < M; ++s) {
      double dw;
      B.brownian_row(static_cast<std::size_t>(s), i, &dw);
      zt[s] = (y[s] - yh[s]) * dw;
    }
    const Eigen::VectorXd z = D * qr.solve(zt) / B.grid.dt(i);
    for (Eigen::Index s = 0; s < M; ++s) {
      const double fv = c.f(B.grid.node(i), vec({B.X[i](s, 0)}), Vec(0), yh[s], vec({z[s]}), 0.0,
                            deterministic_noise(B.grid.node(i)));
      y[s] = yh[s] + fv * B.grid.dt(i);
    }
  }
  return y.mean();
}

}  // namespace

TEST_CASE("constant terminal, zero driver") {
  const auto c = make_family("linear", {{"a", -0.2}, {"s0", 0.3}, {"j0", 0.5}, {"hq", 0}, {"h0", 2.5}, {"m", 0}},
                             atoms({{1.0, 0.8}}));
  BsdeOptions opts;
  opts.keep_samples = true;
  const auto batch = simulate_batch(c, kNoControl, vec({0.1}), TimeGrid::uniform(1.0, 20), 2000, 3);
  const auto sol = solve_bsde(c, batch, opts);
  for (const auto& Y : sol.Y) CHECK((Y.array() - 2.5).abs().maxCoeff() < 1e-10);
  for (const auto& Z : sol.Z) CHECK(Z.cwiseAbs().maxCoeff() < 1e-10);
  for (const auto& K : sol.K) CHECK(K.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("linear driver reproduces the exponential discount") {
  // Y is constant in space, so each explicit step multiplies by 1 - r dt.
  const auto c = make_family("linear", {{"r", 0.1}, {"hq", 0}, {"h0", 1}, {"m", 0}}, {});
  const auto batch = simulate_batch(c, kNoControl, vec({0.0}), TimeGrid::uniform(1.0, 1000), 500, 1);
  const double y0 = solve_bsde(c, batch).y0;
  CHECK(y0 == doctest::Approx(std::pow(1.0 - 1e-4, 1000)).epsilon(1e-12));
  CHECK(std::abs(y0 - std::exp(-0.1)) / std::exp(-0.1) <= 5e-3);
}

TEST_CASE("pure-jump martingale terminal has mean x0") {
  const auto c = make_family("linear", {{"j0", 1.0}, {"hq", 0}, {"hl", 1}, {"m", 0}}, atoms({{1.0, 1.0}, {-2.0, 0.5}}));
  const auto batch = simulate_batch(c, kNoControl, vec({0.7}), TimeGrid::uniform(1.0, 20), 20000, 5);
  const auto sol = solve_bsde(c, batch);
  CHECK(std::abs(sol.y0 - 0.7) <= sol.y0_ci);
}

TEST_CASE("terminal values are exact per sample") {
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}}));
  BsdeOptions opts;
  opts.keep_samples = true;
  const auto batch = simulate_batch(c, constant_control(vec({1.0})), vec({0.0}), TimeGrid::uniform(1.0, 10), 300, 2);
  const auto sol = solve_bsde(c, batch, opts);
  for (Eigen::Index s = 0; s < 300; ++s) {
    CHECK(sol.Y.back()[s] == c.h(vec({batch.X.back()(s, 0)}), deterministic_noise(1.0)));
  }
  CHECK(sol.y0 == doctest::Approx(sol.pathwise.mean()).epsilon(1e-12));
}

TEST_CASE("without jumps the solver matches an OLS reference") {
  const auto c = make_family("linear", {{"a", -0.5}, {"s0", 0.4}, {"r", 0.2}, {"qx", 0.1}, {"m", 0}}, {});
  const auto batch = simulate_batch(c, kNoControl, vec({0.5}), TimeGrid::uniform(1.0, 10), 5000, 8);
  BsdeOptions opts;
  opts.regression.degree = 1;
  opts.regression.ridge = 0.0;
  CHECK(std::abs(solve_bsde(c, batch, opts).y0 - ols_reference(c, batch)) < 1e-10);
}

TEST_CASE("backward semigroup special cases") {
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}}));
  const TimeGrid g = TimeGrid::uniform(1.0, 10);
  auto eta = [](const Vec& x, const NoiseState&) { return std::cos(x[0]); };
  CHECK(backward_semigroup(c, constant_control(vec({1.0})), g, 3, vec({0.4}), 0, eta, 100, 1).value == std::cos(0.4));

  const auto z = make_family("zero", {}, {});
  const auto e = backward_semigroup(z, constant_control(vec({0.0})), g, 2, vec({0.4}), 5, eta, 100, 1);
  CHECK(e.value == doctest::Approx(std::cos(0.4)).epsilon(1e-12));
  CHECK_THROWS_AS(backward_semigroup(z, constant_control(vec({0.0})), g, 8, vec({0.4}), 5, eta, 100, 1),
                  InvalidArgument);
}

TEST_CASE("backward semigroup composes") {
  // Inner semigroup tabulated on a grid and linearly interpolated serves as
  // the terminal field of the outer one.
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}}));
  const ControlLaw u = constant_control(vec({0.5}));
  const TimeGrid g = TimeGrid::uniform(0.5, 10);
  auto h = [&c](const Vec& x, const NoiseState& w) { return c.h(x, w); };
  const int P = 81;
  const double lo = -4.0, hi = 4.0, dx = (hi - lo) / (P - 1);
  std::vector<double> inner(P);
  double inner_ci = 0.0;
  for (int k = 0; k < P; ++k) {
    const auto e = backward_semigroup(c, u, g, 5, vec({lo + k * dx}), 5, h, 8000, child_seed(40, k));
    inner[static_cast<std::size_t>(k)] = e.value;
    inner_ci = std::max(inner_ci, e.ci);
  }
  auto mid = [&](const Vec& x, const NoiseState&) {
    const double s = std::clamp((x[0] - lo) / dx, 0.0, P - 1.000001);
    const auto k = static_cast<std::size_t>(s);
    return inner[k] + (s - static_cast<double>(k)) * (inner[k + 1] - inner[k]);
  };
  const auto nested = backward_semigroup(c, u, g, 0, vec({0.2}), 5, mid, 20000, 77);
  const auto direct = backward_semigroup(c, u, g, 0, vec({0.2}), 10, h, 20000, 77);
  CHECK(std::abs(nested.value - direct.value) <= 2.0 * (nested.ci + direct.ci + inner_ci));
}

TEST_CASE("comparison: identical and shifted terminals") {
  const auto c = make_family("linear", {{"a", -0.3}, {"s0", 0.5}, {"j0", 0.2}, {"m", 0}}, atoms({{1.0, 1.0}}));
  auto h1 = [](const Vec& x, const NoiseState&) { return x[0] * x[0]; };
  auto h2 = [](const Vec& x, const NoiseState&) { return x[0] * x[0] + 1.0; };
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto batch = simulate_batch(c, kNoControl, vec({0.3}), TimeGrid::uniform(1.0, 10), 1000, child_seed(6, s));
    const auto same = comparison_check(c, batch, h1, h1);
    CHECK(same.margin == 0.0);
    const auto shifted = comparison_check(c, batch, h1, h2);
    CHECK(shifted.strictly_ordered);
    CHECK(shifted.margin == doctest::Approx(1.0).epsilon(1e-9));
  }
  const auto batch = simulate_batch(c, kNoControl, vec({0.3}), TimeGrid::uniform(1.0, 10), 100, 1);
  CHECK_THROWS_AS(comparison_check(c, batch, h2, h1), InvalidArgument);
}

TEST_CASE("comparison with a monotone driver over seeds") {
  // f = y (r = -1) is Lipschitz and monotone in k trivially.
  const auto c = make_family("linear", {{"a", -0.3}, {"s0", 0.5}, {"j0", 0.2}, {"r", -1.0}, {"m", 0}},
                             atoms({{1.0, 1.0}}));
  auto h1 = [](const Vec& x, const NoiseState&) { return std::sin(x[0]); };
  auto h2 = [](const Vec& x, const NoiseState&) { return std::sin(x[0]) + 0.05 * x[0] * x[0]; };
  int ordered = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto batch = simulate_batch(c, kNoControl, vec({0.3}), TimeGrid::uniform(1.0, 10), 500, child_seed(9, s));
    if (comparison_check(c, batch, h1, h2).ordered) ++ordered;
  }
  CHECK(ordered == 100);
}

TEST_CASE("doubling the sample count moves Y(0) within the CI") {
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}}));
  const ControlLaw u = constant_control(vec({-1.0}));
  const TimeGrid g = TimeGrid::uniform(1.0, 20);
  const auto a = solve_bsde(c, simulate_batch(c, u, vec({0.0}), g, 20000, 4));
  const auto b = solve_bsde(c, simulate_batch(c, u, vec({0.0}), g, 40000, 4));
  CHECK(std::abs(a.y0 - b.y0) <= a.y0_ci);
}

TEST_CASE("regression basis and rank deficiency") {
  CHECK(monomial_exponents(2, 2).size() == 6);
  CHECK(monomial_exponents(3, 3).size() == 20);
  CHECK(monomial_exponents(1, 0).size() == 1);

  Eigen::MatrixXd X(200, 1);
  for (int i = 0; i < 200; ++i) X(i, 0) = std::sin(0.1 * i);
  const PolynomialRegression reg(X, RegressionOptions{3, 1e-8});
  CHECK(reg.basis_size() == 4);
  CHECK_FALSE(reg.ridge_fallback());
  // A cubic target is reproduced exactly.
  const Eigen::VectorXd target = X.col(0).array().cube() - 2.0 * X.col(0).array() + 0.5;
  CHECK((reg.fit(target) - target).cwiseAbs().maxCoeff() < 1e-6);

  Eigen::MatrixXd dup(200, 2);
  dup << X, 2.0 * X;
  CHECK(PolynomialRegression(dup, RegressionOptions{1, 1e-8}).ridge_fallback());

  Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(50, 1, 3.0);
  const PolynomialRegression only_intercept(constant, RegressionOptions{});
  CHECK(only_intercept.basis_size() == 1);
}
