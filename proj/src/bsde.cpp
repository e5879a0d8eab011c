#include "shjb/bsde.hpp"

#include <cmath>

#include "shjb/errors.hpp"
#include "shjb/parallel.hpp"
#include "shjb/stats.hpp"

namespace shjb {

namespace {

Vec row_vec(const Eigen::MatrixXd& m, Eigen::Index r) {
  Vec v(m.cols());
  for (Eigen::Index k = 0; k < m.cols(); ++k) v[k] = m(r, k);
  return v;
}

NoiseState row_noise(const ForwardBatch& B, std::size_t node, Eigen::Index r) {
  NoiseState w{B.grid.node(node), Vec(B.channels)};
  if (B.channels > 0) w.values = row_vec(B.noise[node], r);
  return w;
}

Eigen::MatrixXd regressors(const ForwardBatch& B, std::size_t node) {
  if (B.channels == 0) return B.X[node];
  Eigen::MatrixXd v(B.X[node].rows(), B.n + B.channels);
  v << B.X[node], B.noise[node];
  return v;
}

}  // namespace

BsdeSolution solve_bsde(const CoefficientSet& c, const ForwardBatch& B, const BsdeOptions& opts,
                        const TerminalField& terminal) {
  require(B.n == c.n && B.d == c.d && B.m == c.m, "solve_bsde: batch dimensions differ from coefficients");
  const TerminalField& h = terminal ? terminal : c.h;
  const std::size_t N = B.grid.steps();
  const auto M = static_cast<Eigen::Index>(B.samples);
  const auto J = static_cast<Eigen::Index>(c.measure.size());
  const int d = c.d;

  BsdeSolution sol;
  sol.grid = B.grid;
  sol.nodes.resize(N + 1);
  if (opts.keep_samples) {
    sol.Y.resize(N + 1);
    sol.Z.resize(N);
    sol.K.resize(N);
  }

  Eigen::VectorXd y(M);
  for (Eigen::Index s = 0; s < M; ++s) {
    y[s] = h(row_vec(B.X[N], s), row_noise(B, N, s));
    if (!std::isfinite(y[s])) throw NumericError("terminal value is not finite for sample " + std::to_string(s));
  }
  sol.pathwise = y;
  sol.nodes[N].y_mean = y.mean();
  sol.nodes[N].z_mean = Eigen::VectorXd::Zero(d);
  sol.nodes[N].k_mean = Eigen::VectorXd::Zero(J);
  if (opts.keep_samples) sol.Y[N] = y;

  // Z and K regress the martingale increment (Y_{i+1} - E[Y_{i+1} | X_i]) times
  // the driver increments, which removes the conditional-mean term whose
  // contribution vanishes in expectation.
  Eigen::MatrixXd targets(M, d + J);
  Eigen::MatrixXd dn(M, J);
  Eigen::VectorXd yi(M);
  for (std::size_t ii = N; ii-- > 0;) {
    const double t = B.grid.node(ii), dt = B.grid.dt(ii);
    dn.setZero();
    for (const auto& [s, j] : B.events_by_step[ii]) dn(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) += 1.0;
    const PolynomialRegression reg(regressors(B, ii), opts.regression);
    const Eigen::VectorXd y_hat = reg.fit(y).col(0);
    const Eigen::VectorXd innov = y - y_hat;
    parallel_for(B.samples, [&](std::size_t b, std::size_t e) {
      Eigen::VectorXd dw(d);
      for (std::size_t s = b; s < e; ++s) {
        const auto r = static_cast<Eigen::Index>(s);
        B.brownian_row(s, ii, dw.data());
        for (int k = 0; k < d; ++k) targets(r, k) = innov[r] * dw[k];
        for (Eigen::Index j = 0; j < J; ++j) {
          targets(r, d + j) = innov[r] * (dn(r, j) - c.measure.atom(static_cast<std::size_t>(j)).weight * dt);
        }
      }
    });
    const Eigen::MatrixXd fitted = reg.fit(targets);

    auto& diag = sol.nodes[ii];
    diag.basis_size = reg.basis_size();
    diag.ridge_fallback = reg.ridge_fallback();
    sol.ridge_fallback = sol.ridge_fallback || reg.ridge_fallback();
    diag.residual_rms = std::sqrt(innov.squaredNorm() / static_cast<double>(M));

    Eigen::MatrixXd z = fitted.leftCols(d) / dt;
    Eigen::MatrixXd kk(M, J);
    std::vector<double> lw(static_cast<std::size_t>(J));
    for (Eigen::Index j = 0; j < J; ++j) {
      const auto& a = c.measure.atom(static_cast<std::size_t>(j));
      kk.col(j) = fitted.col(d + j) / (a.weight * dt);
      lw[static_cast<std::size_t>(j)] = c.l(t, a.mark) * a.weight;
    }
    parallel_for(B.samples, [&](std::size_t b, std::size_t e) {
      for (std::size_t s = b; s < e; ++s) {
        const auto r = static_cast<Eigen::Index>(s);
        double agg = 0.0;
        for (Eigen::Index j = 0; j < J; ++j) agg += kk(r, j) * lw[static_cast<std::size_t>(j)];
        const Vec u = c.m > 0 ? row_vec(B.U[ii], r) : Vec(0);
        const double fv = c.f(t, row_vec(B.X[ii], r), u, y_hat[r], row_vec(z, r), agg, row_noise(B, ii, r));
        yi[r] = y_hat[r] + fv * dt;
        sol.pathwise[r] += fv * dt;
      }
    });
    if (!yi.allFinite()) throw NumericError("BSDE value became non-finite at node " + std::to_string(ii));
    y = yi;
    diag.y_mean = y.mean();
    diag.z_mean = z.colwise().mean().transpose();
    diag.k_mean = kk.colwise().mean().transpose();
    if (opts.keep_samples) {
      sol.Y[ii] = y;
      sol.Z[ii] = z;
      sol.K[ii] = kk;
    }
  }
  sol.y0 = sol.nodes[0].y_mean;
  sol.z0 = sol.nodes[0].z_mean;
  sol.k0 = sol.nodes[0].k_mean;
  sol.y0_ci = ci_halfwidth(std::span<const double>(sol.pathwise.data(), static_cast<std::size_t>(M)));
  return sol;
}

Estimate backward_semigroup(const CoefficientSet& c, const ControlLaw& control, const TimeGrid& grid,
                            std::size_t t_node, const Vec& x, std::size_t delta_nodes,
                            const TerminalField& eta, std::size_t samples, std::uint64_t seed,
                            const BsdeOptions& opts, const Vec& w0) {
  require(t_node + delta_nodes <= grid.steps(), "backward semigroup: t + delta beyond the grid");
  if (delta_nodes == 0) {
    NoiseState w{grid.node(t_node), w0.size() ? w0 : Vec(Vec::Zero(static_cast<int>(c.channels.size())))};
    return {eta(x, w), 0.0};
  }
  const TimeGrid sub = grid.slice(t_node, t_node + delta_nodes);
  const ControlLaw shifted = [&control, t_node](std::size_t k, double t, const Vec& xx, const NoiseState& w) {
    return control(k + t_node, t, xx, w);
  };
  const ForwardBatch batch = simulate_batch(c, shifted, x, sub, samples, seed, w0);
  return solve_bsde(c, batch, opts, eta).value();
}

ComparisonReport comparison_check(const CoefficientSet& c, const ForwardBatch& batch,
                                  const TerminalField& h1, const TerminalField& h2,
                                  const BsdeOptions& opts) {
  const std::size_t N = batch.grid.steps();
  for (std::size_t s = 0; s < batch.samples; ++s) {
    const auto r = static_cast<Eigen::Index>(s);
    const Vec x = row_vec(batch.X[N], r);
    const NoiseState w = row_noise(batch, N, r);
    require(h1(x, w) <= h2(x, w), "comparison check: h1 exceeds h2 at sample " + std::to_string(s));
  }
  const BsdeSolution s1 = solve_bsde(c, batch, opts, h1);
  const BsdeSolution s2 = solve_bsde(c, batch, opts, h2);
  ComparisonReport rep;
  rep.y1 = s1.y0;
  rep.y2 = s2.y0;
  rep.margin = s2.y0 - s1.y0;
  const Eigen::VectorXd diff = s2.pathwise - s1.pathwise;
  rep.tolerance = ci_halfwidth(std::span<const double>(diff.data(), static_cast<std::size_t>(diff.size())));
  rep.ordered = rep.margin >= -rep.tolerance;
  rep.strictly_ordered = rep.margin >= 0.0;
  return rep;
}

}  // namespace shjb
