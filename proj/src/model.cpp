#include "shjb/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "shjb/errors.hpp"
#include "shjb/rng.hpp"

namespace shjb {

void CoefficientSet::validate() const {
  require(n >= 1 && n <= kMaxDim, "coefficients: state dimension out of range");
  require(d >= 1 && d <= kMaxDim, "coefficients: Brownian dimension out of range");
  require(m >= 0 && m <= kMaxDim, "coefficients: control dimension out of range");
  require(b && sigma && g && f && h && l, "coefficients: every callable must be set");
  require(lipschitz_C > 0.0, "coefficients: lipschitz_C must be positive");
  require(delta > 0.0 && delta <= 1.0, "coefficients: delta must lie in (0, 1]");
  require(rho.size() == measure.size(), "coefficients: rho needs one entry per atom");
  for (double r : rho) require(r >= 0.0, "coefficients: rho must be nonnegative");
  for (const auto& ch : channels) {
    if (ch.kind == ChannelKind::Brownian) {
      require(ch.index >= 0 && ch.index < d, "coefficients: Brownian channel index out of range");
    }
  }
}

bool CoefficientSet::reads_last_brownian() const {
  for (const auto& ch : channels) {
    if (ch.kind == ChannelKind::Brownian && ch.index == d - 1) return true;
  }
  return false;
}

void CoefficientSet::require_galerkin_compatible() const {
  validate();
  require(!control_in_sigma, "weak HJB: sigma must not depend on the control");
  for (const auto& ch : channels) {
    require(ch.kind == ChannelKind::JumpCount || ch.index == d - 1,
            "weak HJB: coefficients may only read the last Brownian component or the jumps");
  }
}

NoiseState deterministic_noise(double t) { return NoiseState{t, Vec(0)}; }

ControlSet ControlSet::grid(const Vec& lo, const Vec& hi, const std::vector<int>& points) {
  require(lo.size() == hi.size() && static_cast<std::size_t>(lo.size()) == points.size(),
          "control grid: dimension mismatch");
  std::size_t total = 1;
  for (int p : points) {
    require(p >= 1, "control grid: need at least one point per dimension");
    total *= static_cast<std::size_t>(p);
  }
  std::vector<Vec> atoms;
  atoms.reserve(total);
  const int m = static_cast<int>(lo.size());
  for (std::size_t idx = 0; idx < total; ++idx) {
    Vec u(m);
    std::size_t rest = idx;
    for (int k = m - 1; k >= 0; --k) {
      const auto p = static_cast<std::size_t>(points[k]);
      const std::size_t i = rest % p;
      rest /= p;
      u[k] = p == 1 ? 0.5 * (lo[k] + hi[k])
                    : lo[k] + (hi[k] - lo[k]) * static_cast<double>(i) / static_cast<double>(p - 1);
    }
    atoms.push_back(u);
  }
  return from_atoms(std::move(atoms), lo, hi);
}

ControlSet ControlSet::from_atoms(std::vector<Vec> atoms, const Vec& lo, const Vec& hi) {
  require(!atoms.empty(), "control set must be nonempty");
  require(lo.size() == hi.size(), "control set: box dimension mismatch");
  for (const auto& a : atoms) {
    require(a.size() == lo.size(), "control set: atom dimension mismatch");
    for (int k = 0; k < a.size(); ++k) {
      require(lo[k] <= hi[k], "control set: empty box");
      require(a[k] >= lo[k] && a[k] <= hi[k], "control set: atom outside the control box");
    }
  }
  return ControlSet{std::move(atoms), lo, hi};
}

ControlSet ControlSet::singleton(const Vec& u) { return from_atoms({u}, u, u); }

double fd_step(const Vec& x) { return 1e-5 * (1.0 + x.norm()); }

Mat jacobian_b(const CoefficientSet& c, double t, const Vec& x, const Vec& u, const NoiseState& w) {
  const double h = fd_step(x);
  Mat j(c.n, c.n);
  for (int i = 0; i < c.n; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    j.col(i) = (c.b(t, xp, u, w) - c.b(t, xm, u, w)) / (2.0 * h);
  }
  return j;
}

std::vector<Mat> jacobian_sigma(const CoefficientSet& c, double t, const Vec& x, const Vec& u,
                                const NoiseState& w) {
  const double h = fd_step(x);
  std::vector<Mat> out(static_cast<std::size_t>(c.d), Mat(c.n, c.n));
  for (int i = 0; i < c.n; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const Mat diff = (c.sigma(t, xp, u, w) - c.sigma(t, xm, u, w)) / (2.0 * h);
    for (int k = 0; k < c.d; ++k) out[static_cast<std::size_t>(k)].col(i) = diff.col(k);
  }
  return out;
}

Mat jacobian_g(const CoefficientSet& c, double t, const Vec& mark, const Vec& x, const Vec& u,
               const NoiseState& w) {
  const double h = fd_step(x);
  Mat j(c.n, c.n);
  for (int i = 0; i < c.n; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    j.col(i) = (c.g(t, mark, xp, u, w) - c.g(t, mark, xm, u, w)) / (2.0 * h);
  }
  return j;
}

bool ValidationReport::pass() const {
  for (const auto& c : checks) {
    if (!c.pass) return false;
  }
  return true;
}

const CheckResult& ValidationReport::at(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return c;
  }
  throw InvalidArgument("validation report has no check named " + name);
}

namespace {

struct Sampler {
  const CoefficientSet& c;
  const SamplingPlan& plan;
  CounterEngine eng;
  std::uniform_real_distribution<double> unit{0.0, 1.0};

  Sampler(const CoefficientSet& coeffs, const SamplingPlan& p) : c(coeffs), plan(p), eng(p.seed) {
    require(p.samples >= 1, "sampling plan: need at least one sample");
    require(p.x_lo.size() == c.n && p.x_hi.size() == c.n, "sampling plan: state box dimension");
    require(p.u_lo.size() == c.m && p.u_hi.size() == c.m, "sampling plan: control box dimension");
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(eng); }
  Vec box(const Vec& lo, const Vec& hi) {
    Vec v(lo.size());
    for (int k = 0; k < lo.size(); ++k) v[k] = uniform(lo[k], hi[k]);
    return v;
  }
  Vec x() { return box(plan.x_lo, plan.x_hi); }
  Vec u() { return box(plan.u_lo, plan.u_hi); }
  double t() { return uniform(plan.t_lo, plan.t_hi); }
  NoiseState noise(double t) {
    NoiseState w{t, Vec(static_cast<int>(c.channels.size()))};
    for (std::size_t k = 0; k < c.channels.size(); ++k) {
      const double r = plan.noise_range;
      w.values[static_cast<int>(k)] = c.channels[k].kind == ChannelKind::JumpCount
                                          ? std::floor(uniform(0.0, r + 1.0))
                                          : uniform(-r, r);
    }
    return w;
  }
  double yzk() { return uniform(-plan.yzk_range, plan.yzk_range); }
};

std::string describe(double t, const Vec& x, const Vec& u) {
  std::ostringstream os;
  os.precision(6);
  os << "t=" << t << " x=[" << x.transpose() << "] u=[" << u.transpose() << "]";
  return os.str();
}

void check_finite(double v, const std::string& what, const std::string& where) {
  if (!std::isfinite(v)) throw NumericError(what + " is not finite at " + where);
}

struct Tracker {
  CheckResult r;
  bool seen = false;
  Tracker(std::string name, double bound, bool upper) {
    r.name = std::move(name);
    r.bound = bound;
    r.upper = upper;
  }
  void offer(double v, const std::string& where) {
    if (!seen || (r.upper ? v > r.observed : v < r.observed)) {
      r.observed = v;
      r.where = where;
      seen = true;
    }
  }
  CheckResult finish() {
    constexpr double kRelTol = 1e-9;
    if (!seen) r.observed = r.upper ? 0.0 : r.bound;
    r.pass = r.upper ? r.observed <= r.bound * (1.0 + kRelTol) + 1e-300
                     : r.observed >= r.bound - kRelTol * std::abs(r.bound);
    return r;
  }
};

}  // namespace

ValidationReport validate_lipschitz(const CoefficientSet& c, const SamplingPlan& plan) {
  c.validate();
  Sampler s(c, plan);
  const std::size_t na = c.measure.size();
  Tracker lip("b_sigma_lipschitz", c.lipschitz_C, true);
  Tracker growth("b_sigma_growth", c.lipschitz_C, true);
  std::vector<Tracker> glip, ggrowth;
  for (std::size_t j = 0; j < na; ++j) {
    glip.emplace_back("g_lipschitz[" + std::to_string(j) + "]", c.rho[j], true);
    ggrowth.emplace_back("g_growth[" + std::to_string(j) + "]", c.rho[j], true);
  }
  for (std::size_t i = 0; i < plan.samples; ++i) {
    const double t = s.t();
    const NoiseState w = s.noise(t);
    const Vec x = s.x(), x2 = s.x(), u = s.u(), u2 = s.u();
    const std::string where = describe(t, x, u);
    const Vec b1 = c.b(t, x, u, w), b2 = c.b(t, x2, u2, w);
    const Mat s1 = c.sigma(t, x, u, w), s2 = c.sigma(t, x2, u2, w);
    check_finite(b1.norm() + b2.norm(), "b", where);
    check_finite(s1.norm() + s2.norm(), "sigma", where);
    const double dist = (x - x2).norm() + (u - u2).norm();
    const double scale = 1.0 + x.norm() + u.norm();
    if (dist > 0.0) lip.offer(((b1 - b2).norm() + (s1 - s2).norm()) / dist, where);
    growth.offer((b1.norm() + s1.norm()) / scale, where);
    for (std::size_t j = 0; j < na; ++j) {
      const Vec& e = c.measure.atom(j).mark;
      const Vec g1 = c.g(t, e, x, u, w), g2 = c.g(t, e, x2, u2, w);
      check_finite(g1.norm() + g2.norm(), "g", where);
      if (dist > 0.0) glip[j].offer((g1 - g2).norm() / dist, where);
      ggrowth[j].offer(g1.norm() / scale, where);
    }
  }
  ValidationReport rep;
  rep.checks.push_back(lip.finish());
  for (auto& tr : glip) rep.checks.push_back(tr.finish());
  rep.checks.push_back(growth.finish());
  for (auto& tr : ggrowth) rep.checks.push_back(tr.finish());
  return rep;
}

ValidationReport validate_jump_nondegeneracy(const CoefficientSet& c, const SamplingPlan& plan) {
  c.validate();
  Sampler s(c, plan);
  Tracker det("jump_nondegeneracy", c.delta, false);
  for (std::size_t i = 0; i < plan.samples; ++i) {
    const double t = s.t();
    const NoiseState w = s.noise(t);
    const Vec x = s.x(), u = s.u();
    const std::string where = describe(t, x, u);
    for (std::size_t j = 0; j < c.measure.size(); ++j) {
      const Mat jg = jacobian_g(c, t, c.measure.atom(j).mark, x, u, w);
      const double v = std::abs((Mat::Identity(c.n, c.n) + jg).determinant());
      check_finite(v, "det(I + D_x g)", where);
      det.offer(v, where + " atom=" + std::to_string(j));
    }
  }
  ValidationReport rep;
  rep.checks.push_back(det.finish());
  return rep;
}

ValidationReport validate_driver_monotonicity(const CoefficientSet& c, const SamplingPlan& plan) {
  c.validate();
  Sampler s(c, plan);
  const double C = c.lipschitz_C;
  Tracker mono("f_monotone_in_k", 0.0, false);
  Tracker yzk("f_lipschitz_yzk", C, true);
  Tracker growth("f_h_growth", C, true);
  Tracker lneg("l_nonnegative", 0.0, false);
  Tracker lgrowth("l_growth", C, true);
  for (std::size_t i = 0; i < plan.samples; ++i) {
    const double t = s.t();
    const NoiseState w = s.noise(t);
    const Vec x = s.x(), u = s.u();
    const std::string where = describe(t, x, u);
    const double y = s.yzk(), y2 = s.yzk();
    Vec z(c.d), z2(c.d);
    for (int k = 0; k < c.d; ++k) {
      z[k] = s.yzk();
      z2[k] = s.yzk();
    }
    double k1 = s.yzk(), k2 = s.yzk();
    if (k2 < k1) std::swap(k1, k2);
    const double fa = c.f(t, x, u, y, z, k1, w);
    const double fb = c.f(t, x, u, y, z, k2, w);
    const double fc = c.f(t, x, u, y2, z2, k2, w);
    const double hx = c.h(x, w);
    check_finite(fa + fb + fc, "f", where);
    check_finite(hx, "h", where);
    if (k2 > k1) mono.offer((fb - fa) / (k2 - k1), where);
    const double dist = std::abs(y - y2) + (z - z2).norm() + std::abs(k1 - k2);
    if (dist > 0.0) yzk.offer(std::abs(fa - fc) / dist, where);
    const double scale = 1.0 + x.squaredNorm() + u.squaredNorm() + std::abs(y) + z.norm() + std::abs(k1);
    growth.offer((std::abs(fa) + std::abs(hx)) / scale, where);
    for (std::size_t j = 0; j < c.measure.size(); ++j) {
      const Vec& e = c.measure.atom(j).mark;
      const double lv = c.l(t, e);
      check_finite(lv, "l", where);
      lneg.offer(lv, "t=" + std::to_string(t) + " atom=" + std::to_string(j));
      lgrowth.offer(lv / (1.0 + e.norm()), "t=" + std::to_string(t) + " atom=" + std::to_string(j));
    }
  }
  ValidationReport rep;
  rep.checks.push_back(mono.finish());
  rep.checks.push_back(lneg.finish());
  rep.checks.push_back(lgrowth.finish());
  rep.checks.push_back(yzk.finish());
  rep.checks.push_back(growth.finish());
  return rep;
}

}  // namespace shjb
