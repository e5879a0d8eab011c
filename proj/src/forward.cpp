#include "shjb/forward.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "shjb/errors.hpp"
#include "shjb/parallel.hpp"
#include "shjb/rng.hpp"
#include "shjb/stats.hpp"

namespace shjb {

namespace {

constexpr double kBlowUp = 1e8;

void guard(const Vec& x, std::size_t step) {
  if (!x.allFinite() || x.norm() > kBlowUp) {
    throw DivergenceError("state left the finite range", step);
  }
}

// Running channel values while a path is traversed node by node.
class NoiseTracker {
 public:
  NoiseTracker(const CoefficientSet& c, const Vec& w0) : c_(c), values_(w0) {
    const auto k = static_cast<int>(c.channels.size());
    if (values_.size() == 0) values_ = Vec::Zero(k);
    require(values_.size() == k, "initial noise must have one value per channel");
  }

  NoiseState at(double t) const { return NoiseState{t, values_}; }

  void advance(const double* dw, std::size_t jumps) {
    for (std::size_t k = 0; k < c_.channels.size(); ++k) {
      const auto& ch = c_.channels[k];
      values_[static_cast<int>(k)] += ch.kind == ChannelKind::Brownian ? dw[ch.index]
                                                                        : static_cast<double>(jumps);
    }
  }

 private:
  const CoefficientSet& c_;
  Vec values_;
};

Vec compensator(const CoefficientSet& c, double t, const Vec& x, const Vec& u, const NoiseState& w) {
  Vec s = Vec::Zero(c.n);
  for (const auto& a : c.measure.atoms()) s += a.weight * c.g(t, a.mark, x, u, w);
  return s;
}

// One Euler step from node state x. Jumps inside the step are applied in time
// order and reported through `on_jump`; coefficients of the continuous part
// are frozen at the left node.
template <class OnJump>
Vec euler_step(const CoefficientSet& c, double t, double dt, const Vec& x, const Vec& u,
               const NoiseState& w, const double* dw, const JumpEvent* ev, std::size_t nev,
               OnJump&& on_jump) {
  Vec y = x;
  for (std::size_t k = 0; k < nev; ++k) {
    const Vec pre = y;
    y += c.g(ev[k].time, c.measure.atom(ev[k].atom).mark, pre, u, w);
    on_jump(ev[k], pre, y);
  }
  const Mat s = c.sigma(t, x, u, w);
  Eigen::Map<const Eigen::VectorXd> dW(dw, c.d);
  y += c.b(t, x, u, w) * dt + s * dW - compensator(c, t, x, u, w) * dt;
  return y;
}

// Events grouped by step: first index into path.jumps for each step.
std::vector<std::size_t> event_offsets(const DriverPath& path) {
  std::vector<std::size_t> off(path.grid.steps() + 1, 0);
  for (const auto& e : path.jumps) ++off[e.step + 1];
  for (std::size_t i = 1; i < off.size(); ++i) off[i] += off[i - 1];
  return off;
}

}  // namespace

ControlLaw constant_control(const Vec& u) {
  return [u](std::size_t, double, const Vec&, const NoiseState&) { return u; };
}

ControlLaw open_loop_control(std::vector<Vec> per_step) {
  return [v = std::move(per_step)](std::size_t step, double, const Vec&, const NoiseState&) {
    require(step < v.size(), "open-loop control has no value for step " + std::to_string(step));
    return v[step];
  };
}

NoiseState noise_at_node(const CoefficientSet& c, const DriverPath& path, std::size_t i) {
  NoiseTracker tr(c, Vec(0));
  const auto off = event_offsets(path);
  for (std::size_t k = 0; k < i; ++k) tr.advance(path.brownian.row(static_cast<Eigen::Index>(k)).eval().data(), off[k + 1] - off[k]);
  return tr.at(path.grid.node(i));
}

StateTrajectory simulate(const CoefficientSet& c, const ControlLaw& control, const Vec& x0,
                         const DriverPath& path, std::size_t start_node) {
  require(x0.size() == c.n && x0.allFinite(), "simulate: x0 must be finite with n entries");
  require(path.brownian.cols() == c.d, "simulate: path Brownian dimension differs from d");
  require(start_node <= path.grid.steps(), "simulate: start node out of range");
  const auto off = event_offsets(path);
  NoiseTracker tr(c, Vec(0));
  Eigen::VectorXd dw(c.d);
  for (std::size_t k = 0; k < start_node; ++k) {
    dw = path.brownian.row(static_cast<Eigen::Index>(k)).transpose();
    tr.advance(dw.data(), off[k + 1] - off[k]);
  }
  StateTrajectory out;
  out.start_node = start_node;
  out.times.push_back(path.grid.node(start_node));
  out.states.push_back(x0);
  out.event.push_back(false);
  out.node_rows.push_back(0);
  Vec x = x0;
  for (std::size_t i = start_node; i < path.grid.steps(); ++i) {
    const double t = path.grid.node(i);
    const NoiseState w = tr.at(t);
    const Vec u = control(i, t, x, w);
    require(u.size() == c.m, "control law returned a vector of the wrong size");
    out.controls.push_back(u);
    dw = path.brownian.row(static_cast<Eigen::Index>(i)).transpose();
    const std::size_t nev = off[i + 1] - off[i];
    x = euler_step(c, t, path.grid.dt(i), x, u, w, dw.data(), path.jumps.data() + off[i], nev,
                   [&](const JumpEvent& e, const Vec&, const Vec& post) {
                     guard(post, i);
                     out.times.push_back(e.time);
                     out.states.push_back(post);
                     out.event.push_back(true);
                   });
    guard(x, i);
    tr.advance(dw.data(), nev);
    out.node_rows.push_back(out.states.size());
    out.times.push_back(path.grid.node(i + 1));
    out.states.push_back(x);
    out.event.push_back(false);
  }
  return out;
}

std::vector<Mat> simulate_flow_gradient(const CoefficientSet& c, const ControlLaw& control,
                                        const Vec& x0, const DriverPath& path) {
  const StateTrajectory traj = simulate(c, control, x0, path);
  const auto off = event_offsets(path);
  NoiseTracker tr(c, Vec(0));
  std::vector<Mat> grad;
  grad.reserve(path.grid.steps() + 1);
  grad.push_back(Mat::Identity(c.n, c.n));
  Eigen::VectorXd dw(c.d);
  const Mat eye = Mat::Identity(c.n, c.n);
  for (std::size_t i = 0; i < path.grid.steps(); ++i) {
    const double t = path.grid.node(i), dt = path.grid.dt(i);
    const NoiseState w = tr.at(t);
    const Vec& xi = traj.at_node(i);
    const Vec& u = traj.controls[i];
    dw = path.brownian.row(static_cast<Eigen::Index>(i)).transpose();
    // Product of jump Jacobians at the pre-jump states.
    Mat jump = eye;
    Vec y = xi;
    for (std::size_t k = off[i]; k < off[i + 1]; ++k) {
      const auto& e = path.jumps[k];
      const Vec& mark = c.measure.atom(e.atom).mark;
      jump = (eye + jacobian_g(c, e.time, mark, y, u, w)) * jump;
      y += c.g(e.time, mark, y, u, w);
    }
    Mat cont = jacobian_b(c, t, xi, u, w) * dt;
    const auto ds = jacobian_sigma(c, t, xi, u, w);
    for (int k = 0; k < c.d; ++k) cont += ds[static_cast<std::size_t>(k)] * dw[k];
    for (const auto& a : c.measure.atoms()) cont -= jacobian_g(c, t, a.mark, xi, u, w) * (a.weight * dt);
    grad.push_back((jump + cont) * grad.back());
    if (!grad.back().allFinite()) throw DivergenceError("flow gradient left the finite range", i);
    tr.advance(dw.data(), off[i + 1] - off[i]);
  }
  return grad;
}

double flow_property_residual(const CoefficientSet& c, const ControlLaw& control, const Vec& x,
                              std::size_t t_node, std::size_t tau_node, std::size_t gamma_node,
                              const DriverPath& path) {
  require(t_node <= tau_node && tau_node <= gamma_node && gamma_node <= path.grid.steps(),
          "flow residual: need t <= tau <= gamma within the grid");
  const StateTrajectory full = simulate(c, control, x, path, t_node);
  const StateTrajectory restart = simulate(c, control, full.at_node(tau_node), path, tau_node);
  return (full.at_node(gamma_node) - restart.at_node(gamma_node)).norm();
}

MomentReport moment_check(const CoefficientSet& c, const ControlLaw& control,
                          const std::vector<Vec>& x0s, int p, std::size_t samples,
                          const TimeGrid& grid, std::uint64_t seed) {
  require(p >= 2 && p % 2 == 0, "moment check: p must be an even integer >= 2");
  require(samples >= 2, "moment check: need at least two samples");
  MomentReport rep;
  rep.p = p;
  for (const auto& x0 : x0s) {
    std::vector<double> sup(samples), term(samples);
    parallel_for(samples, [&](std::size_t b, std::size_t e) {
      for (std::size_t s = b; s < e; ++s) {
        const DriverPath path = sample_path(grid, c.d, c.measure, child_seed(seed, s));
        const StateTrajectory tr = simulate(c, control, x0, path);
        double mx = 0.0;
        for (const auto& st : tr.states) mx = std::max(mx, std::pow(st.norm(), p));
        sup[s] = mx;
        term[s] = std::pow(tr.states.back().norm(), p);
      }
    });
    MomentRow row;
    row.x0_norm = x0.norm();
    row.sup_moment = mean(sup);
    row.sup_ci = ci_halfwidth(sup);
    row.terminal_moment = mean(term);
    row.terminal_ci = ci_halfwidth(term);
    rep.rows.push_back(row);
    rep.fitted_cp = std::max(rep.fitted_cp, row.sup_moment / (1.0 + std::pow(row.x0_norm, p)));
  }
  std::vector<MomentRow> sorted = rep.rows;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const MomentRow& a, const MomentRow& b) { return a.x0_norm < b.x0_norm; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].sup_moment < sorted[i - 1].sup_moment) rep.monotone = false;
  }
  return rep;
}

void ForwardBatch::brownian_row(std::size_t sample, std::size_t step, double* out) const {
  brownian_increment(grid, step, d, brownian_seed(path_seeds[sample]), out);
}

ForwardBatch simulate_batch(const CoefficientSet& c, const ControlLaw& control, const Vec& x0,
                            const TimeGrid& grid, std::size_t samples, std::uint64_t seed,
                            const Vec& w0) {
  c.validate();
  require(samples >= 1, "forward batch: need at least one sample");
  require(x0.size() == c.n && x0.allFinite(), "forward batch: x0 must be finite with n entries");
  const std::size_t N = grid.steps();
  const auto M = static_cast<Eigen::Index>(samples);
  ForwardBatch B;
  B.grid = grid;
  B.n = c.n;
  B.d = c.d;
  B.m = c.m;
  B.channels = static_cast<int>(c.channels.size());
  B.samples = samples;
  B.path_seeds.resize(samples);
  for (std::size_t s = 0; s < samples; ++s) B.path_seeds[s] = child_seed(seed, s);
  B.X.assign(N + 1, Eigen::MatrixXd(M, c.n));
  if (c.m > 0) B.U.assign(N, Eigen::MatrixXd(M, c.m));
  if (B.channels > 0) B.noise.assign(N + 1, Eigen::MatrixXd(M, B.channels));

  std::vector<std::vector<JumpEvent>> jumps(samples);
  std::size_t failed_step = N;
  std::size_t failed_sample = samples;
  std::mutex fail_mutex;
  parallel_for(samples, [&](std::size_t b, std::size_t e) {
    Eigen::VectorXd dw(c.d);
    for (std::size_t s = b; s < e; ++s) {
      const auto row = static_cast<Eigen::Index>(s);
      jumps[s] = sample_jumps(grid, c.measure, child_seed(B.path_seeds[s], 1));
      const auto& ev = jumps[s];
      std::size_t next = 0;
      NoiseTracker tr(c, w0);
      Vec x = x0;
      B.X[0].row(row) = x.transpose();
      try {
        for (std::size_t i = 0; i < N; ++i) {
          const double t = grid.node(i);
          const NoiseState w = tr.at(t);
          if (B.channels > 0) B.noise[i].row(row) = w.values.transpose();
          const Vec u = control(i, t, x, w);
          if (c.m > 0) B.U[i].row(row) = u.transpose();
          B.brownian_row(s, i, dw.data());
          std::size_t first = next;
          while (next < ev.size() && ev[next].step == i) ++next;
          x = euler_step(c, t, grid.dt(i), x, u, w, dw.data(), ev.data() + first, next - first,
                         [&](const JumpEvent&, const Vec&, const Vec& post) { guard(post, i); });
          guard(x, i);
          tr.advance(dw.data(), next - first);
          B.X[i + 1].row(row) = x.transpose();
        }
        if (B.channels > 0) B.noise[N].row(row) = tr.at(grid.end()).values.transpose();
      } catch (const DivergenceError& err) {
        std::lock_guard<std::mutex> lock(fail_mutex);
        if (err.step() < failed_step || (err.step() == failed_step && s < failed_sample)) {
          failed_step = err.step();
          failed_sample = s;
        }
      }
    }
  });
  if (failed_sample < samples) {
    throw DivergenceError("forward batch: sample " + std::to_string(failed_sample) + " diverged",
                          failed_step);
  }
  B.events_by_step.assign(N, {});
  for (std::size_t s = 0; s < samples; ++s) {
    for (const auto& e : jumps[s]) B.events_by_step[e.step].emplace_back(s, e.atom);
  }
  return B;
}

StrongErrorStudy strong_error_study(const CoefficientSet& c, const ControlLaw& control,
                                    const Vec& x0, const TimeGrid& coarse, int halvings,
                                    std::size_t samples, std::uint64_t seed) {
  require(halvings >= 1, "strong error study: need at least one halving");
  require(coarse.is_uniform(), "strong error study: coarse grid must be uniform");
  const std::size_t finest = coarse.steps() << halvings;
  const TimeGrid ref_grid = TimeGrid::uniform(coarse.end() - coarse.start(), finest * 4, coarse.start());
  const auto levels = static_cast<std::size_t>(halvings) + 1;
  std::vector<std::vector<double>> err(levels, std::vector<double>(samples));
  parallel_for(samples, [&](std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s) {
      const DriverPath ref = sample_path(ref_grid, c.d, c.measure, child_seed(seed, s));
      const Vec xr = simulate(c, control, x0, ref).states.back();
      for (std::size_t l = 0; l < levels; ++l) {
        const std::size_t factor = std::size_t{4} << (static_cast<std::size_t>(halvings) - l);
        const DriverPath p = coarsen(ref, factor);
        err[l][s] = (simulate(c, control, x0, p).states.back() - xr).norm();
      }
    }
  });
  StrongErrorStudy st;
  for (std::size_t l = 0; l < levels; ++l) {
    st.dt.push_back(coarse.dt(0) / static_cast<double>(std::size_t{1} << l));
    st.error.push_back(mean(err[l]));
  }
  st.slope = loglog_slope(st.dt, st.error);
  return st;
}

}  // namespace shjb
