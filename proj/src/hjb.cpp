#include "shjb/hjb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "shjb/errors.hpp"
#include "shjb/parallel.hpp"
#include "shjb/rng.hpp"

namespace shjb {

double hamiltonian(const CoefficientSet& c, double t, const Vec& x, const Vec& u, const Vec& p,
                   const Mat& q, const Mat& A, double k, const NoiseState& w, double y, const Vec& phi) {
  const Vec bv = c.b(t, x, u, w);
  const Mat S = c.sigma(t, x, u, w);
  Vec z = S.transpose() * p;
  if (phi.size() > 0) z += phi;
  const double frob = q.size() > 0 ? (q.array() * S.array()).sum() : 0.0;
  const double tr = 0.5 * (A * S * S.transpose()).trace();
  return c.f(t, x, u, y, z, k, w) + p.dot(bv) + frob + tr;
}

Vec field_gradient(const TensorGrid& grid, const Eigen::VectorXd& values, const Vec& x) {
  Vec g(grid.dim());
  for (int k = 0; k < grid.dim(); ++k) {
    const double h = grid.spacing(k);
    Vec xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    const bool up = xp[k] <= grid.hi(k) + 1e-12 * h;
    const bool dn = xm[k] >= grid.lo(k) - 1e-12 * h;
    if (up && dn) {
      g[k] = (grid.interpolate(values, xp) - grid.interpolate(values, xm)) / (2.0 * h);
    } else if (up) {
      g[k] = (grid.interpolate(values, xp) - grid.interpolate(values, x)) / h;
    } else {
      g[k] = (grid.interpolate(values, x) - grid.interpolate(values, xm)) / h;
    }
  }
  return g;
}

NonlocalResult nonlocal_apply(const TensorGrid& grid, const Eigen::VectorXd& V, const CoefficientSet& c,
                              double t, const Vec& x, const Vec& u, const NoiseState& w,
                              const std::vector<Eigen::VectorXd>* psi) {
  const std::size_t J = c.measure.size();
  require(!psi || psi->size() == J, "nonlocal_apply: one Psi field per atom required");
  NonlocalResult r;
  r.I.resize(J);
  if (psi) r.I_psi.resize(J);
  const double v0 = grid.interpolate(V, x);
  const Vec dv = J > 0 ? field_gradient(grid, V, x) : Vec(0);
  for (std::size_t j = 0; j < J; ++j) {
    const auto& atom = c.measure.atom(j);
    const Vec gj = c.g(t, atom.mark, x, u, w);
    const Vec xs = x + gj;
    bool cl = false;
    r.I[j] = grid.interpolate(V, xs, &cl) - v0;
    r.clamped += cl ? 1 : 0;
    double psi_shift = 0.0;
    if (psi) {
      psi_shift = grid.interpolate((*psi)[j], xs);
      r.I_psi[j] = psi_shift - grid.interpolate((*psi)[j], x);
      r.psi_integral += r.I_psi[j] * atom.weight;
    }
    r.integral += r.I[j] * atom.weight;
    r.compensated += (r.I[j] - gj.dot(dv)) * atom.weight;
    r.l_aggregate += (r.I[j] + psi_shift) * c.l(t, atom.mark) * atom.weight;
  }
  return r;
}

RandomFieldTriplet PideSolution::triplet(int d, std::size_t atoms) const {
  RandomFieldTriplet tr;
  tr.grid = grid;
  tr.time = time;
  tr.d = d;
  tr.atoms = atoms;
  tr.nodes.resize(V.size());
  for (std::size_t i = 0; i < V.size(); ++i) tr.nodes[i].push_back(FieldSlice{V[i], {}, {}});
  return tr;
}

namespace {

Vec compensated_drift(const CoefficientSet& c, double t, const Vec& x, const Vec& u, const NoiseState& w) {
  Vec bt = c.b(t, x, u, w);
  for (const auto& atom : c.measure.atoms()) bt -= atom.weight * c.g(t, atom.mark, x, u, w);
  return bt;
}

}  // namespace

double pide_stable_dt(const CoefficientSet& c, const TensorGrid& grid, const TimeGrid& time,
                      const ControlSet& controls) {
  double rate = c.measure.total_mass();
  for (std::size_t i = 0; i < time.steps(); ++i) {
    const double t = time.node(i);
    const NoiseState w = deterministic_noise(t);
    double lw = 0.0;
    for (const auto& atom : c.measure.atoms()) lw += std::abs(c.l(t, atom.mark)) * atom.weight;
    for (std::size_t q = 0; q < grid.size(); ++q) {
      const Vec x = grid.point(q);
      for (const auto& u : controls.atoms) {
        const Mat S = c.sigma(t, x, u, w);
        const Mat a = S * S.transpose();
        const Vec bt = compensated_drift(c, t, x, u, w);
        // The driver is explicit in y and k; its Lipschitz bound enters the rate.
        double r = c.measure.total_mass() + c.lipschitz_C * (1.0 + lw);
        for (int k = 0; k < grid.dim(); ++k) {
          const double h = grid.spacing(k);
          r += a(k, k) / (h * h) + std::abs(bt[k]) / h;
        }
        rate = std::max(rate, r);
      }
    }
  }
  return rate > 0.0 ? 1.0 / rate : std::numeric_limits<double>::infinity();
}

PideSolution solve_pide_deterministic(const CoefficientSet& c, const TensorGrid& grid,
                                      const TimeGrid& time, const ControlSet& controls) {
  c.validate();
  require(c.deterministic(), "PIDE solver: coefficients must not read the noise");
  require(grid.dim() == c.n, "PIDE solver: grid dimension differs from the state");
  require(controls.size() >= 1, "PIDE solver: empty control set");
  PideSolution sol;
  sol.grid = grid;
  sol.time = time;
  sol.controls = controls;
  sol.stable_dt = pide_stable_dt(c, grid, time, controls);
  for (std::size_t i = 0; i < time.steps(); ++i) {
    if (time.dt(i) > sol.stable_dt * (1.0 + 1e-12)) {
      std::ostringstream os;
      os << "PIDE step " << i << " has dt " << time.dt(i) << " above the stable bound " << sol.stable_dt;
      throw CflViolation(os.str(), 0.9 * sol.stable_dt);
    }
  }

  const std::size_t N = time.steps();
  const std::size_t P = grid.size();
  const std::size_t J = c.measure.size();
  sol.V.resize(N + 1);
  sol.argmin.resize(N);
  Eigen::VectorXd terminal(static_cast<Eigen::Index>(P));
  for (std::size_t q = 0; q < P; ++q) terminal[static_cast<Eigen::Index>(q)] = c.h(grid.point(q), deterministic_noise(time.end()));
  sol.V[N] = terminal;

  std::vector<unsigned> clamped(P, 0);
  for (std::size_t ii = N; ii-- > 0;) {
    const double t = time.node(ii);
    const double dt = time.dt(ii);
    const NoiseState w = deterministic_noise(t);
    const Eigen::VectorXd& next = sol.V[ii + 1];
    Eigen::VectorXd cur(static_cast<Eigen::Index>(P));
    std::vector<int> arg(P, 0);
    parallel_for(P, [&](std::size_t begin, std::size_t end) {
      for (std::size_t q = begin; q < end; ++q) {
        const Vec x = grid.point(q);
        const double v = next[static_cast<Eigen::Index>(q)];
        const Vec p = grid.gradient_at(next, q);
        const Mat D2 = grid.hessian_at(next, q);
        double best = std::numeric_limits<double>::infinity();
        int best_a = -1;
        for (std::size_t a = 0; a < controls.size(); ++a) {
          const Vec& u = controls.atoms[a];
          const Mat S = c.sigma(t, x, u, w);
          Vec bt = c.b(t, x, u, w);
          double nonlocal = 0.0, kagg = 0.0;
          for (std::size_t j = 0; j < J; ++j) {
            const auto& atom = c.measure.atom(j);
            const Vec gj = c.g(t, atom.mark, x, u, w);
            bt -= atom.weight * gj;
            bool cl = false;
            const double Ij = grid.interpolate(next, x + gj, &cl) - v;
            clamped[q] += cl ? 1u : 0u;
            nonlocal += Ij * atom.weight;
            kagg += Ij * c.l(t, atom.mark) * atom.weight;
          }
          double adv = 0.0;
          for (int k = 0; k < grid.dim(); ++k) adv += bt[k] * grid.upwind_at(next, q, k, bt[k]);
          const double diff = 0.5 * (D2 * S * S.transpose()).trace();
          const Vec z = S.transpose() * p;
          const double L = c.f(t, x, u, v, z, kagg, w) + adv + diff + nonlocal;
          if (!std::isfinite(L)) {
            throw NumericError("PIDE: non-finite generator at node " + std::to_string(ii) + ", point " + std::to_string(q));
          }
          if (L < best) {
            best = L;
            best_a = static_cast<int>(a);
          }
        }
        cur[static_cast<Eigen::Index>(q)] = v + dt * best;
        arg[q] = best_a;
      }
    });
    sol.V[ii] = cur;
    sol.argmin[ii] = std::move(arg);
  }
  for (unsigned k : clamped) sol.clamped += k;
  return sol;
}

double hjb_bracket(const CoefficientSet& c, const TensorGrid& grid, const FieldSlice& slice, double t,
                   std::size_t idx, const Vec& u, const NoiseState& w, int* clamped) {
  const Vec x = grid.point(idx);
  const Vec p = grid.gradient_at(slice.V, idx);
  const Mat A = grid.hessian_at(slice.V, idx);
  Vec phi = zeros(c.d);
  Mat q = Mat::Zero(c.n, c.d);
  if (slice.Phi.size() > 0) {
    phi[c.d - 1] = slice.Phi[static_cast<Eigen::Index>(idx)];
    q.col(c.d - 1) = grid.gradient_at(slice.Phi, idx);
  }
  const NonlocalResult nl =
      nonlocal_apply(grid, slice.V, c, t, x, u, w, slice.Psi.empty() ? nullptr : &slice.Psi);
  if (clamped) *clamped += nl.clamped;
  return hamiltonian(c, t, x, u, p, q, A, nl.l_aggregate, w, slice.V[static_cast<Eigen::Index>(idx)], phi) +
         nl.compensated + nl.psi_integral;
}

std::vector<std::vector<Eigen::VectorXd>> drift_consistency_residual(
    const RandomFieldTriplet& tr, const std::vector<std::vector<Eigen::VectorXd>>& gamma,
    const CoefficientSet& c, const ControlSet& controls, const std::vector<std::vector<NoiseState>>* noise) {
  const std::size_t N = tr.time.steps();
  require(gamma.size() == N, "drift residual: one Gamma slice per step required");
  std::vector<std::vector<Eigen::VectorXd>> res(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double t = tr.time.node(i);
    require(gamma[i].size() == tr.nodes[i].size(), "drift residual: scenario count mismatch");
    res[i].resize(gamma[i].size());
    for (std::size_t s = 0; s < gamma[i].size(); ++s) {
      const NoiseState w = noise ? (*noise).at(i).at(s) : deterministic_noise(t);
      const FieldSlice& slice = tr.at(i, s);
      Eigen::VectorXd r(static_cast<Eigen::Index>(tr.grid.size()));
      parallel_for(tr.grid.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t q = begin; q < end; ++q) {
          double best = std::numeric_limits<double>::infinity();
          for (const auto& u : controls.atoms) best = std::min(best, hjb_bracket(c, tr.grid, slice, t, q, u, w));
          r[static_cast<Eigen::Index>(q)] = gamma[i][s][static_cast<Eigen::Index>(q)] - best;
        }
      });
      res[i][s] = r;
    }
  }
  return res;
}

std::vector<std::vector<Eigen::VectorXd>> deterministic_drift(const RandomFieldTriplet& tr) {
  const std::size_t N = tr.time.steps();
  std::vector<std::vector<Eigen::VectorXd>> g(N);
  for (std::size_t i = 0; i < N; ++i) {
    require(tr.nodes[i].size() == 1 && tr.nodes[i + 1].size() == 1, "deterministic drift: single scenario required");
    g[i].push_back((tr.at(i).V - tr.at(i + 1).V) / tr.time.dt(i));
  }
  return g;
}

FeedbackPolicy extract_feedback(const RandomFieldTriplet& tr, const CoefficientSet& c, const ControlSet& controls) {
  const std::size_t N = tr.time.steps();
  std::vector<std::vector<int>> atoms(N, std::vector<int>(tr.grid.size(), 0));
  for (std::size_t i = 0; i < N; ++i) {
    require(tr.nodes[i].size() == 1, "feedback extraction: single scenario required");
    const double t = tr.time.node(i);
    const NoiseState w = deterministic_noise(t);
    parallel_for(tr.grid.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t q = begin; q < end; ++q) {
        double best = std::numeric_limits<double>::infinity();
        int best_a = -1;
        for (std::size_t a = 0; a < controls.size(); ++a) {
          const double v = hjb_bracket(c, tr.grid, tr.at(i), t, q, controls.atoms[a], w);
          if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "feedback extraction: non-finite Delta at node " << i << ", grid point " << q << " (x = "
               << tr.grid.point(q).transpose() << "), control atom " << a;
            throw NumericError(os.str());
          }
          if (v < best) {
            best = v;
            best_a = static_cast<int>(a);
          }
        }
        atoms[i][q] = best_a;
      }
    });
  }
  return FeedbackPolicy(tr.time, tr.grid, controls, std::move(atoms));
}

VerificationReport verification_run(const RandomFieldTriplet& tr, const CoefficientSet& c,
                                    const ControlSet& controls, const Vec& x0, const VerificationOptions& opts) {
  const FeedbackPolicy policy = extract_feedback(tr, c, controls);
  const TimeGrid grid = opts.sim_grid.nodes().empty() ? tr.time : opts.sim_grid;
  require(std::abs(grid.end() - tr.time.end()) < 1e-12 && std::abs(grid.start() - tr.time.start()) < 1e-12,
          "verification: simulation grid must span the triplet's horizon");
  VerificationReport rep;
  bool cl = false;
  rep.V0 = tr.grid.interpolate(tr.at(0).V, x0, &cl);
  rep.clamped = cl ? 1 : 0;
  const Estimate J = evaluate_cost(c, policy.law(), grid, 0, x0, opts.samples, opts.seed, opts.bsde);
  rep.J = J.value;
  rep.J_ci = J.ci;
  rep.gap = J.value - rep.V0;
  rep.alternatives_min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < opts.alternatives; ++k) {
    const FeedbackPolicy alt = random_feedback_policy(tr.time, tr.grid, controls, child_seed(opts.seed, 1000 + k));
    const Estimate e = evaluate_cost(c, alt.law(), grid, 0, x0, opts.samples, opts.seed, opts.bsde);
    rep.alternatives.push_back(e);
    const double margin = e.value - (rep.V0 - e.ci);
    rep.alternatives_min_margin = std::min(rep.alternatives_min_margin, margin);
    rep.sandwich = rep.sandwich && margin >= 0.0;
  }
  if (opts.alternatives == 0) rep.alternatives_min_margin = 0.0;
  return rep;
}

}  // namespace shjb
