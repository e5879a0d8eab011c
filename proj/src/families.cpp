#include "shjb/families.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "shjb/errors.hpp"

namespace shjb {

namespace {

class Reader {
 public:
  Reader(const std::string& family, const FamilyParams& p, std::set<std::string> allowed)
      : family_(family), p_(p) {
    allowed.insert({"n", "d", "m"});
    for (const auto& [k, v] : p_) {
      require(allowed.count(k) > 0, "family " + family_ + ": unknown parameter '" + k + "'");
      require(std::isfinite(v), "family " + family_ + ": parameter '" + k + "' is not finite");
    }
  }
  double get(const std::string& k, double def) const {
    auto it = p_.find(k);
    return it == p_.end() ? def : it->second;
  }
  int dim(const std::string& k, int def) const {
    const double v = get(k, def);
    require(v == std::floor(v) && v >= 0 && v <= kMaxDim,
            "family " + family_ + ": parameter '" + k + "' must be an integer in [0, 8]");
    return static_cast<int>(v);
  }

 private:
  std::string family_;
  const FamilyParams& p_;
};

double first_mark(const Vec& e) { return e.size() > 0 ? e[0] : 0.0; }

std::vector<double> mark_norms(const MarkMeasure& mu, double scale) {
  std::vector<double> r;
  for (const auto& a : mu.atoms()) r.push_back(scale * a.mark.norm());
  return r;
}

CoefficientSet make_zero(const FamilyParams& p, const MarkMeasure& mu) {
  Reader r("zero", p, {"running", "terminal"});
  CoefficientSet c;
  c.n = r.dim("n", 1);
  c.d = r.dim("d", 1);
  c.m = r.dim("m", 1);
  c.measure = mu;
  const double running = r.get("running", 0.0), terminal = r.get("terminal", 0.0);
  const int n = c.n, d = c.d;
  c.b = [n](double, const Vec&, const Vec&, const NoiseState&) { return Vec(Vec::Zero(n)); };
  c.sigma = [n, d](double, const Vec&, const Vec&, const NoiseState&) { return Mat(Mat::Zero(n, d)); };
  c.g = [n](double, const Vec&, const Vec&, const Vec&, const NoiseState&) { return Vec(Vec::Zero(n)); };
  c.f = [running](double, const Vec&, const Vec&, double, const Vec&, double, const NoiseState&) {
    return running;
  };
  c.h = [terminal](const Vec&, const NoiseState&) { return terminal; };
  c.l = [](double, const Vec&) { return 1.0; };
  c.lipschitz_C = std::max({1.0, std::abs(running) + std::abs(terminal)});
  c.rho.assign(mu.size(), 0.0);
  return c;
}

CoefficientSet make_linear(const FamilyParams& p, const MarkMeasure& mu) {
  Reader r("linear", p,
           {"a", "beta", "s0", "s1", "j0", "j1", "r", "qx", "qu", "kk", "hq", "hl", "h0"});
  CoefficientSet c;
  c.n = r.dim("n", 1);
  c.d = c.n;
  c.m = r.dim("m", 1);
  c.measure = mu;
  const double a = r.get("a", 0.0), beta = r.get("beta", 0.0), s0 = r.get("s0", 0.0),
               s1 = r.get("s1", 0.0), j0 = r.get("j0", 0.0), j1 = r.get("j1", 0.0),
               rr = r.get("r", 0.0), qx = r.get("qx", 0.0), qu = r.get("qu", 0.0),
               kk = r.get("kk", 0.0), hq = r.get("hq", 1.0), hl = r.get("hl", 0.0),
               h0 = r.get("h0", 0.0);
  require(kk >= 0.0, "family linear: kk must be nonnegative (f non-decreasing in k)");
  const int n = c.n, m = c.m;
  c.b = [a, beta, n, m](double, const Vec& x, const Vec& u, const NoiseState&) {
    Vec out = a * x;
    for (int i = 0; i < n && m > 0; ++i) out[i] += beta * u[i % m];
    return out;
  };
  c.sigma = [s0, s1, n](double, const Vec& x, const Vec&, const NoiseState&) {
    Mat s = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) s(i, i) = s0 + s1 * x[i];
    return s;
  };
  c.g = [j0, j1](double, const Vec& e, const Vec& x, const Vec&, const NoiseState&) {
    return Vec(j1 * x + Vec::Constant(x.size(), j0 * first_mark(e)));
  };
  c.f = [rr, qx, qu, kk](double, const Vec& x, const Vec& u, double y, const Vec&, double k,
                         const NoiseState&) {
    return -rr * y + qx * x.squaredNorm() + qu * u.squaredNorm() + kk * k;
  };
  c.h = [hq, hl, h0](const Vec& x, const NoiseState&) { return hq * x.squaredNorm() + hl * x.sum() + h0; };
  c.l = [](double, const Vec&) { return 1.0; };
  const double sn = std::sqrt(static_cast<double>(n));
  const double coef = std::abs(a) + std::abs(beta) * sn + (std::abs(s0) + std::abs(s1)) * sn;
  const double cost = std::abs(rr) + std::abs(qx) + std::abs(qu) + kk + std::abs(hq) + std::abs(hl) * sn +
                      std::abs(h0);
  c.lipschitz_C = std::max({1.0, coef, cost});
  c.rho.clear();
  for (const auto& at : mu.atoms()) c.rho.push_back(std::abs(j1) + std::abs(j0) * std::abs(first_mark(at.mark)) * sn);
  c.delta = n == 1 ? std::min(1.0, std::abs(1.0 + j1)) : std::min(1.0, std::pow(std::abs(1.0 + j1), n));
  if (c.delta <= 0.0) c.delta = 1e-12;
  return c;
}

CoefficientSet make_affine_noise(const FamilyParams& p, const MarkMeasure& mu) {
  Reader r("affine-noise", p, {"a", "beta", "s", "j0", "r", "gamma", "eta"});
  CoefficientSet c;
  c.n = 1;
  c.d = r.dim("d", 1);
  require(c.d >= 1, "family affine-noise: d must be at least 1");
  c.m = 1;
  c.measure = mu;
  const double a = r.get("a", 0.0), beta = r.get("beta", 0.0), s = r.get("s", 0.2),
               j0 = r.get("j0", 0.0), rr = r.get("r", 0.0), gamma = r.get("gamma", 0.0),
               eta = r.get("eta", 0.0);
  const int d = c.d;
  c.channels = {Channel::brownian(d - 1), Channel::jumps()};
  c.b = [a, beta](double, const Vec& x, const Vec& u, const NoiseState& w) {
    Vec out(1);
    out[0] = a * x[0] + beta * w.values[0] + u[0];
    return out;
  };
  c.sigma = [s, d](double, const Vec&, const Vec&, const NoiseState&) {
    Mat m = Mat::Zero(1, d);
    m(0, d - 1) = s;
    return m;
  };
  c.g = [j0](double, const Vec& e, const Vec&, const Vec&, const NoiseState&) {
    Vec out(1);
    out[0] = j0 * first_mark(e);
    return out;
  };
  c.f = [rr, gamma](double, const Vec&, const Vec&, double y, const Vec&, double, const NoiseState& w) {
    return -rr * y + gamma * w.values[1];
  };
  c.h = [eta](const Vec& x, const NoiseState& w) { return x[0] + eta * w.values[0]; };
  c.l = [](double, const Vec&) { return 1.0; };
  c.lipschitz_C = std::max({1.0, std::abs(a) + 1.0, std::abs(rr) + 1.0});
  c.rho = mark_norms(mu, std::abs(j0));
  return c;
}

CoefficientSet make_bounded_smooth(const FamilyParams& p, const MarkMeasure& mu) {
  Reader r("bounded-smooth", p, {"kb", "kt", "s", "cu", "r", "kk", "amp", "w"});
  CoefficientSet c;
  c.n = 1;
  c.d = 1;
  c.m = 1;
  c.measure = mu;
  const double kb = r.get("kb", 0.5), kt = r.get("kt", 0.2), s = r.get("s", 0.4),
               cu = r.get("cu", 0.1), rr = r.get("r", 0.1), kk = r.get("kk", 0.1),
               amp = r.get("amp", 1.0), w = r.get("w", 0.7);
  require(kk >= 0.0, "family bounded-smooth: kk must be nonnegative (f non-decreasing in k)");
  require(w > 0.0, "family bounded-smooth: w must be positive");
  c.b = [kb, kt](double, const Vec& x, const Vec& u, const NoiseState&) {
    Vec out(1);
    out[0] = kb * u[0] - kt * std::tanh(x[0]);
    return out;
  };
  c.sigma = [s](double, const Vec&, const Vec&, const NoiseState&) {
    Mat m(1, 1);
    m(0, 0) = s;
    return m;
  };
  c.g = [](double, const Vec& e, const Vec&, const Vec&, const NoiseState&) {
    Vec out(1);
    out[0] = first_mark(e);
    return out;
  };
  c.f = [cu, rr, kk](double, const Vec&, const Vec& u, double y, const Vec&, double k, const NoiseState&) {
    return cu * u[0] - rr * y + kk * k;
  };
  c.h = [amp, w](const Vec& x, const NoiseState&) { return -amp * std::exp(-x[0] * x[0] / (2.0 * w * w)); };
  c.l = [](double, const Vec&) { return 1.0; };
  c.lipschitz_C = std::max({1.0, std::abs(kb) + std::abs(kt) + std::abs(s),
                            std::abs(cu) + std::abs(rr) + kk + std::abs(amp) / w});
  c.rho = mark_norms(mu, 1.0);
  return c;
}

CoefficientSet make_smooth2d(const FamilyParams& p, const MarkMeasure& mu) {
  Reader r("smooth2d", p, {"eps"});
  CoefficientSet c;
  c.n = 2;
  c.d = 2;
  c.m = 1;
  c.measure = mu;
  const double eps = r.get("eps", 1.0);
  c.b = [eps](double, const Vec& x, const Vec& u, const NoiseState&) {
    Vec out(2);
    out[0] = -x[0] + eps * 0.5 * std::sin(x[1]) + u[0];
    out[1] = -0.5 * x[1] + eps * 0.3 * std::cos(x[0]);
    return out;
  };
  c.sigma = [eps](double, const Vec& x, const Vec&, const NoiseState&) {
    Mat m(2, 2);
    m(0, 0) = 0.3 + eps * 0.1 * std::sin(x[0]);
    m(0, 1) = 0.1;
    m(1, 0) = eps * 0.05 * std::cos(x[1]);
    m(1, 1) = 0.2 + eps * 0.05 * std::sin(x[0] + x[1]);
    return m;
  };
  c.g = [eps](double, const Vec& e, const Vec& x, const Vec&, const NoiseState&) {
    Vec out(2);
    out[0] = first_mark(e) * (0.2 + eps * 0.1 * std::sin(x[0]));
    out[1] = first_mark(e) * eps * 0.1 * std::tanh(x[1]);
    return out;
  };
  c.f = [](double, const Vec& x, const Vec& u, double, const Vec&, double, const NoiseState&) {
    return 0.5 * u.squaredNorm() + 0.1 * x.squaredNorm();
  };
  c.h = [](const Vec& x, const NoiseState&) { return x.squaredNorm(); };
  c.l = [](double, const Vec&) { return 1.0; };
  c.lipschitz_C = 3.0;
  c.rho = mark_norms(mu, 0.5);
  c.delta = 0.5;
  return c;
}

}  // namespace

std::vector<std::string> family_names() {
  return {"zero", "linear", "affine-noise", "bounded-smooth", "smooth2d"};
}

CoefficientSet make_family(const std::string& name, const FamilyParams& params,
                           const MarkMeasure& measure) {
  CoefficientSet c;
  if (name == "zero") {
    c = make_zero(params, measure);
  } else if (name == "linear") {
    c = make_linear(params, measure);
  } else if (name == "affine-noise") {
    c = make_affine_noise(params, measure);
  } else if (name == "bounded-smooth") {
    c = make_bounded_smooth(params, measure);
  } else if (name == "smooth2d") {
    c = make_smooth2d(params, measure);
  } else {
    throw InvalidArgument("unknown coefficient family '" + name + "'");
  }
  c.validate();
  return c;
}

}  // namespace shjb
