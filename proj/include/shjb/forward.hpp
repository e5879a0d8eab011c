#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "shjb/drivers.hpp"
#include "shjb/model.hpp"

namespace shjb {

// Step-constant control evaluated at the left endpoint of each step.
using ControlLaw = std::function<Vec(std::size_t step, double t, const Vec& x, const NoiseState& w)>;

ControlLaw constant_control(const Vec& u);
// per_step[i] is used on step i (absolute step index of the grid).
ControlLaw open_loop_control(std::vector<Vec> per_step);

struct StateTrajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<bool> event;             // row is a post-jump state inside a step
  std::vector<std::size_t> node_rows;  // row of each grid node from the start node on
  std::vector<Vec> controls;           // one per simulated step
  std::size_t start_node = 0;

  const Vec& at_node(std::size_t i) const { return states[node_rows.at(i - start_node)]; }
};

// Value of the channels at grid node i of the path (predictable: jumps up to t_i).
NoiseState noise_at_node(const CoefficientSet& c, const DriverPath& path, std::size_t i);

// Euler scheme with exact jump times; compensator folded into the drift.
StateTrajectory simulate(const CoefficientSet& c, const ControlLaw& control, const Vec& x0,
                         const DriverPath& path, std::size_t start_node = 0);

// First variation of the discrete flow with the base path's controls held fixed.
std::vector<Mat> simulate_flow_gradient(const CoefficientSet& c, const ControlLaw& control,
                                        const Vec& x0, const DriverPath& path);

// |X^{t,x}(gamma) - X^{tau, X^{t,x}(tau)}(gamma)| on a shared path; all times are node indices.
double flow_property_residual(const CoefficientSet& c, const ControlLaw& control, const Vec& x,
                              std::size_t t_node, std::size_t tau_node, std::size_t gamma_node,
                              const DriverPath& path);

struct MomentRow {
  double x0_norm = 0.0;
  double sup_moment = 0.0;  // E sup_nodes |X|^p over grid and event rows
  double sup_ci = 0.0;
  double terminal_moment = 0.0;  // E |X(T)|^p
  double terminal_ci = 0.0;
};

struct MomentReport {
  int p = 2;
  std::vector<MomentRow> rows;
  double fitted_cp = 0.0;  // max over rows of sup_moment / (1 + |x0|^p)
  bool monotone = true;    // sup_moment nondecreasing in |x0|
};

MomentReport moment_check(const CoefficientSet& c, const ControlLaw& control,
                          const std::vector<Vec>& x0s, int p, std::size_t samples,
                          const TimeGrid& grid, std::uint64_t seed);

// M simulated paths from a common start, kept in node-major storage for the
// backward regression. Brownian increments are not stored; they are
// regenerated from the per-sample seeds.
struct ForwardBatch {
  TimeGrid grid;
  int n = 1, d = 1, m = 0, channels = 0;
  std::size_t samples = 0;
  std::vector<std::uint64_t> path_seeds;
  std::vector<Eigen::MatrixXd> X;      // per node: samples x n
  std::vector<Eigen::MatrixXd> U;      // per step: samples x m
  std::vector<Eigen::MatrixXd> noise;  // per node: samples x channels
  // Per step: (sample, atom) for each jump inside the step, ordered by sample.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> events_by_step;

  void brownian_row(std::size_t sample, std::size_t step, double* out) const;
};

// Paths on `grid` starting at x0 with channel values `w0` at grid.start().
ForwardBatch simulate_batch(const CoefficientSet& c, const ControlLaw& control, const Vec& x0,
                            const TimeGrid& grid, std::size_t samples, std::uint64_t seed,
                            const Vec& w0 = Vec(0));

struct StrongErrorStudy {
  std::vector<double> dt;
  std::vector<double> error;  // E|X_level(T) - X_ref(T)|
  double slope = 0.0;
};

// Levels halve the step of `coarse` `halvings` times; the reference is a
// further 4x refinement driven by the same increments.
StrongErrorStudy strong_error_study(const CoefficientSet& c, const ControlLaw& control,
                                    const Vec& x0, const TimeGrid& coarse, int halvings,
                                    std::size_t samples, std::uint64_t seed);

}  // namespace shjb
