#include <doctest.h>

#include <cmath>

#include "shjb/errors.hpp"
#include "shjb/families.hpp"
#include "shjb/model.hpp"
#include "shjb/rng.hpp"
#include "test_support.hpp"

using namespace shjb;
using shjb::test::atoms;
using shjb::test::blank;
using shjb::test::box_plan;
using shjb::test::vec;

namespace {

CoefficientSet linear_drift(double slope, double C) {
  CoefficientSet c = blank(1, 1, 0);
  c.b = [slope](double, const Vec& x, const Vec&, const NoiseState&) { return Vec(slope * x); };
  c.lipschitz_C = C;
  return c;
}

CoefficientSet jump_gain(double gain, double delta) {
  CoefficientSet c = blank(1, 1, 0, atoms({{1.0, 1.0}}));
  c.g = [gain](double, const Vec&, const Vec& x, const Vec&, const NoiseState&) { return Vec(gain * x); };
  c.delta = delta;
  return c;
}

}  // namespace

TEST_CASE("lipschitz validator on linear drifts") {
  const auto ok = validate_lipschitz(linear_drift(2.0, 2.0), box_plan(linear_drift(2.0, 2.0), 3.0, 500, 1));
  CHECK(ok.pass());
  CHECK(ok.at("b_sigma_lipschitz").observed == doctest::Approx(2.0).epsilon(1e-12));

  const auto c3 = linear_drift(3.0, 2.0);
  const auto bad = validate_lipschitz(c3, box_plan(c3, 3.0, 500, 1));
  CHECK_FALSE(bad.pass());
  CHECK_FALSE(bad.at("b_sigma_lipschitz").pass);
  CHECK_FALSE(bad.at("b_sigma_lipschitz").where.empty());
}

TEST_CASE("lipschitz validator on the jump amplitude") {
  CoefficientSet c = jump_gain(0.4, 1.0);
  c.rho = {0.5};
  const auto rep = validate_lipschitz(c, box_plan(c, 2.0, 500, 2));
  CHECK(rep.pass());
  CHECK(rep.at("g_lipschitz[0]").observed == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("lipschitz validator reports non-finite coefficients") {
  CoefficientSet c = blank(1, 1, 0);
  c.b = [](double, const Vec& x, const Vec&, const NoiseState&) { return Vec(x.array().log()); };
  CHECK_THROWS_AS(validate_lipschitz(c, box_plan(c, 1.0, 200, 3)), NumericError);
}

TEST_CASE("jump nondegeneracy validator") {
  SUBCASE("g = 0 gives det 1") {
    const auto c = jump_gain(0.0, 1.0);
    const auto rep = validate_jump_nondegeneracy(c, box_plan(c, 2.0, 200, 4));
    CHECK(rep.pass());
    CHECK(rep.at("jump_nondegeneracy").observed == doctest::Approx(1.0));
  }
  SUBCASE("g = -x is degenerate") {
    const auto c = jump_gain(-1.0, 0.1);
    CHECK_FALSE(validate_jump_nondegeneracy(c, box_plan(c, 2.0, 200, 4)).pass());
  }
  SUBCASE("g = x/2 gives det 3/2") {
    const auto c = jump_gain(0.5, 1.0);
    const auto rep = validate_jump_nondegeneracy(c, box_plan(c, 2.0, 200, 4));
    CHECK(rep.pass());
    CHECK(rep.at("jump_nondegeneracy").observed == doctest::Approx(1.5).epsilon(1e-8));
  }
}

TEST_CASE("driver monotonicity validator") {
  CoefficientSet c = blank(1, 1, 0, atoms({{1.0, 1.0}}));
  c.f = [](double, const Vec&, const Vec&, double y, const Vec&, double k, const NoiseState&) { return y + k; };
  auto rep = validate_driver_monotonicity(c, box_plan(c, 1.0, 500, 5));
  CHECK(rep.pass());
  CHECK(rep.at("l_growth").pass);
  CHECK(rep.at("l_nonnegative").pass);

  c.f = [](double, const Vec&, const Vec&, double, const Vec&, double k, const NoiseState&) { return -k; };
  rep = validate_driver_monotonicity(c, box_plan(c, 1.0, 500, 5));
  CHECK_FALSE(rep.pass());
  CHECK_FALSE(rep.at("f_monotone_in_k").pass);
}

TEST_CASE("validators are pure") {
  const auto c = make_family("smooth2d", {}, atoms({{1.0, 0.5}}));
  SamplingPlan p = box_plan(c, 2.0, 300, 17);
  const auto a = validate_lipschitz(c, p), b = validate_lipschitz(c, p);
  REQUIRE(a.checks.size() == b.checks.size());
  for (std::size_t i = 0; i < a.checks.size(); ++i) {
    CHECK(a.checks[i].observed == b.checks[i].observed);
    CHECK(a.checks[i].where == b.checks[i].where);
  }
}

TEST_CASE("validator verdicts are stable under doubling the sample count") {
  // bounded-smooth passes with its declared constants; the verdict at M and
  // 2M must agree on at least 99 of 100 seeds.
  const auto c = make_family("bounded-smooth", {}, atoms({{0.3, 1.0}}));
  int agree = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto verdict = [&](std::size_t M) {
      const SamplingPlan p = box_plan(c, 3.0, M, child_seed(31, s));
      return validate_lipschitz(c, p).pass() && validate_jump_nondegeneracy(c, p).pass() &&
             validate_driver_monotonicity(c, p).pass();
    };
    if (verdict(200) == verdict(400)) ++agree;
  }
  CHECK(agree >= 99);
}

TEST_CASE("coefficient set structural checks") {
  CoefficientSet c = blank(1, 2, 1);
  c.channels = {Channel::brownian(0)};
  CHECK_NOTHROW(c.validate());
  CHECK_FALSE(c.reads_last_brownian());
  CHECK_THROWS_AS(c.require_galerkin_compatible(), InvalidArgument);
  c.channels = {Channel::brownian(1), Channel::jumps()};
  CHECK(c.reads_last_brownian());
  CHECK_NOTHROW(c.require_galerkin_compatible());
  c.control_in_sigma = true;
  CHECK_THROWS_AS(c.require_galerkin_compatible(), InvalidArgument);
  c.channels = {Channel::brownian(2)};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);

  CoefficientSet r = blank(1, 1, 1, atoms({{1.0, 1.0}}));
  r.rho.clear();
  CHECK_THROWS_AS(r.validate(), InvalidArgument);
}

TEST_CASE("control grids") {
  const auto U = ControlSet::grid(vec({-1.0, 0.0}), vec({1.0, 2.0}), {2, 3});
  REQUIRE(U.size() == 6);
  CHECK(U.atoms[0] == vec({-1.0, 0.0}));
  CHECK(U.atoms[1] == vec({-1.0, 1.0}));
  CHECK(U.atoms[5] == vec({1.0, 2.0}));
  CHECK(ControlSet::grid(vec({0.0}), vec({2.0}), {1}).atoms[0][0] == 1.0);
  CHECK_THROWS_AS(ControlSet::from_atoms({vec({2.0})}, vec({-1.0}), vec({1.0})), InvalidArgument);
  CHECK_THROWS_AS(ControlSet::from_atoms({}, vec({-1.0}), vec({1.0})), InvalidArgument);
}

TEST_CASE("families resolve by name and reject unknown parameters") {
  for (const auto& name : family_names()) CHECK_NOTHROW(make_family(name, {}, atoms({{1.0, 1.0}})));
  CHECK_THROWS_AS(make_family("nope", {}, {}), InvalidArgument);
  CHECK_THROWS_AS(make_family("linear", {{"bogus", 1.0}}, {}), InvalidArgument);
  CHECK_THROWS_AS(make_family("linear", {{"kk", -1.0}}, {}), InvalidArgument);
  const auto c = make_family("affine-noise", {{"d", 2}}, atoms({{1.0, 1.0}}));
  CHECK(c.reads_last_brownian());
  CHECK(c.channels.size() == 2);
}

TEST_CASE("finite-difference jacobians of linear maps") {
  CoefficientSet c = blank(2, 2, 1);
  c.b = [](double, const Vec& x, const Vec&, const NoiseState&) {
    Vec o(2);
    o[0] = 2.0 * x[0] - x[1];
    o[1] = 0.5 * x[1];
    return o;
  };
  const Mat J = jacobian_b(c, 0.0, vec({0.3, -0.7}), vec({0.0}), deterministic_noise(0.0));
  CHECK(J(0, 0) == doctest::Approx(2.0));
  CHECK(J(0, 1) == doctest::Approx(-1.0));
  CHECK(J(1, 0) == doctest::Approx(0.0));
  CHECK(J(1, 1) == doctest::Approx(0.5));
}
