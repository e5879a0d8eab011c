#include <cmath>
#include <limits>

#include "shjb/errors.hpp"
#include "shjb/galerkin.hpp"

namespace shjb {

FieldMap hjb_weak_driver(const CoefficientSet& c, const GelfandTriple& tri, const ControlSet& controls,
                         const ScenarioModel& sc, std::atomic<std::size_t>* outside) {
  require(controls.size() >= 1, "weak HJB: empty control set");
  const bool split = c.reads_last_brownian();
  const bool carry_phi = sc.brownian();
  const std::size_t J = c.measure.size();
  const bool carry_psi = sc.jumps();
  require(!carry_psi || sc.atoms() == J, "weak HJB: scenario atoms differ from the mark measure");

  return [&c, &tri, &controls, split, carry_phi, carry_psi, J, outside](
             std::size_t, double t, const NoiseState& w, const Eigen::VectorXd& y, const Eigen::VectorXd& z,
             const std::vector<Eigen::VectorXd>& r) -> Eigen::VectorXd {
    const auto Q = static_cast<Eigen::Index>(tri.quad_size());
    const int n = tri.n, d = c.d;
    const Eigen::VectorXd wv = tri.E * y;
    std::vector<Eigen::VectorXd> dw(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) dw[static_cast<std::size_t>(k)] = tri.DE[static_cast<std::size_t>(k)] * y;
    const Eigen::VectorXd phi = carry_phi ? Eigen::VectorXd(tri.E * z) : Eigen::VectorXd::Zero(Q);
    std::vector<Eigen::VectorXd> psi;
    if (carry_psi) {
      for (std::size_t j = 0; j < J; ++j) psi.push_back(tri.E * r[j]);
    }
    const Vec u0 = zeros(c.m);
    Eigen::VectorXd out(Q);
    std::size_t shifted_out = 0;
    for (Eigen::Index q = 0; q < Q; ++q) {
      const Vec& x = tri.points[static_cast<std::size_t>(q)];
      Vec Dw(n);
      for (int k = 0; k < n; ++k) Dw[k] = dw[static_cast<std::size_t>(k)][q];
      // Divergences of sigma sigma^T (row-wise) and of sigma_d by central differences.
      Vec div_a = zeros(n);
      double div_sd = 0.0;
      const double h = fd_step(x);
      for (int k = 0; k < n; ++k) {
        Vec xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        const Mat Sp = c.sigma(t, xp, u0, w), Sm = c.sigma(t, xm, u0, w);
        const Mat da = (Sp * Sp.transpose() - Sm * Sm.transpose()) / (2.0 * h);
        div_a += da.row(k).transpose();
        if (split) div_sd += (Sp(k, d - 1) - Sm(k, d - 1)) / (2.0 * h);
      }
      const double j1 = -0.5 * div_a.dot(Dw) - (split ? phi[q] * div_sd : 0.0);
      const Mat S = c.sigma(t, x, u0, w);
      Vec zarg = S.transpose() * Dw;
      if (carry_phi) zarg[d - 1] += phi[q];

      double best = std::numeric_limits<double>::infinity();
      for (const auto& u : controls.atoms) {
        const Vec bv = c.b(t, x, u, w);
        double val = bv.dot(Dw);
        double kagg = 0.0;
        for (std::size_t j = 0; j < J; ++j) {
          const auto& atom = c.measure.atom(j);
          const Vec gj = c.g(t, atom.mark, x, u, w);
          const Vec xs = x + gj;
          const Eigen::RowVectorXd row = tri.basis_row(xs);
          bool in = true;
          for (int k = 0; k < n; ++k) in = in && std::abs(xs[k]) <= tri.L;
          shifted_out += in ? 0 : 1;
          const double Iw = row.dot(y) - wv[q];
          double psi_shift = 0.0;
          if (carry_psi) {
            psi_shift = row.dot(r[j]);
            val += atom.weight * (psi_shift - psi[j][q]);
          }
          val += atom.weight * (Iw - gj.dot(Dw));
          kagg += (Iw + psi_shift) * c.l(t, atom.mark) * atom.weight;
        }
        val += c.f(t, x, u, wv[q], zarg, kagg, w);
        best = std::min(best, val);
      }
      out[q] = -(j1 + best);
    }
    if (outside) *outside += shifted_out;
    return out;
  };
}

HjbWeakResult solve_hjb_weak(const CoefficientSet& c, const GelfandTriple& tri, const ControlSet& controls,
                             const ScenarioModel& sc, const HjbWeakOptions& opts) {
  c.validate();
  c.require_galerkin_compatible();
  require(tri.n == c.n, "weak HJB: basis dimension differs from the state");
  const OperatorField ops = OperatorField::from_coefficients(c, tri, sc.grid());
  HjbWeakResult res;
  const OperatorPair p0 = ops.assemble(sc.grid().start(), sc.noise(0, 0));
  res.coercivity = check_coercivity(p0, tri, opts.alpha, opts.lambda, opts.coercivity_trials, opts.seed);
  if (!res.coercivity.pass) {
    throw InvalidArgument("weak HJB: coercivity check failed (min slack " + std::to_string(res.coercivity.min_slack) +
                          " at " + res.coercivity.worst + ")");
  }
  std::atomic<std::size_t> outside{0};
  const FieldMap F = hjb_weak_driver(c, tri, controls, sc, &outside);
  const TerminalData xi = [&c, &tri](const NoiseState& w) {
    return tri.project([&](const Vec& x) { return c.h(x, w); });
  };
  res.solution = solve_nonlinear_bseej(ops, tri, F, xi, sc, opts.picard);
  res.weak_residual = weak_form_residual(res.solution, ops, F, tri);
  res.outside = outside.load();

  TensorGrid out = opts.output;
  if (out.size() == 0) {
    out = TensorGrid(Vec::Constant(tri.n, -tri.L), Vec::Constant(tri.n, tri.L), std::vector<int>(static_cast<std::size_t>(tri.n), tri.intervals + 1));
  }
  require(out.dim() == tri.n, "weak HJB: output grid dimension differs");
  Eigen::MatrixXd Eout(static_cast<Eigen::Index>(out.size()), tri.size());
  for (std::size_t q = 0; q < out.size(); ++q) Eout.row(static_cast<Eigen::Index>(q)) = tri.basis_row(out.point(q));

  const std::size_t N = sc.grid().steps();
  RandomFieldTriplet& tr = res.triplet;
  tr.grid = out;
  tr.time = sc.grid();
  tr.d = c.d;
  tr.atoms = c.measure.size();
  tr.nodes.resize(N + 1);
  const auto& sol = res.solution;
  for (std::size_t i = 0; i <= N; ++i) {
    tr.nodes[i].resize(sc.states(i));
    for (std::size_t s = 0; s < sc.states(i); ++s) {
      FieldSlice& sl = tr.nodes[i][s];
      sl.V = Eout * sol.y[i][s];
      if (sc.brownian()) sl.Phi = i < N ? Eigen::VectorXd(Eout * sol.z[i][s]) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out.size()));
      if (sc.jumps()) {
        for (std::size_t j = 0; j < sc.atoms(); ++j) {
          sl.Psi.push_back(i < N ? Eigen::VectorXd(Eout * sol.r[i][s][j]) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out.size())));
        }
      }
    }
  }
  return res;
}

}  // namespace shjb
