#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shjb/bsde.hpp"
#include "shjb/grid.hpp"

namespace shjb {

// State box [lo, hi] split into equal cells per dimension.
struct LatticeSpec {
  Vec lo, hi;
  std::vector<int> cells;

  TensorGrid centers() const { return TensorGrid::cell_centers(lo, hi, cells); }
  LatticeSpec refined(int factor) const;
};

// Piecewise-constant Markov feedback: atom index per (time node, grid point).
// Lookup uses the last node at or before t and the nearest grid point.
class FeedbackPolicy {
 public:
  FeedbackPolicy() = default;
  FeedbackPolicy(TimeGrid grid, TensorGrid points, ControlSet controls,
                 std::vector<std::vector<int>> atom_index);

  std::size_t node_at(double t) const;
  int atom_at(std::size_t node, std::size_t point) const;
  Vec operator()(double t, const Vec& x) const;
  ControlLaw law() const;

  const TimeGrid& grid() const { return grid_; }
  const TensorGrid& points() const { return points_; }
  const ControlSet& controls() const { return controls_; }

 private:
  TimeGrid grid_;
  TensorGrid points_;
  ControlSet controls_;
  std::vector<std::vector<int>> atom_;  // [node][point], nodes 0..N-1
};

FeedbackPolicy random_feedback_policy(const TimeGrid& grid, const TensorGrid& points,
                                      const ControlSet& controls, std::uint64_t seed);

struct ValueTable {
  TimeGrid grid;
  TensorGrid centers;
  ControlSet controls;
  std::vector<Eigen::VectorXd> values;  // per node 0..N
  std::vector<std::vector<int>> argmin;  // per step 0..N-1
  std::size_t clamped = 0;               // lattice evaluations outside the box

  double value_at(std::size_t node, const Vec& x) const;
  FeedbackPolicy policy() const;
};

struct QuadratureSpec {
  int gauss_hermite_nodes = 5;  // per Brownian dimension
};

// Nodes and weights of the Gauss-Hermite rule for the standard normal law.
void gauss_hermite_normal(int nodes, std::vector<double>& x, std::vector<double>& w);

// Backward recursion on cell centers: V_i(x) = min over U_h of the one-step
// functional E[V_{i+1}] + f dt, with Brownian quadrature and at most one jump.
ValueTable compute_value_table(const CoefficientSet& c, const LatticeSpec& lattice,
                               const TimeGrid& grid, const ControlSet& controls,
                               const QuadratureSpec& quad = {});

// J(t, x; u) = Y(t) of the cost BSDE, by simulation from t_node to the end of the grid.
Estimate evaluate_cost(const CoefficientSet& c, const ControlLaw& control, const TimeGrid& grid,
                       std::size_t t_node, const Vec& x, std::size_t samples, std::uint64_t seed,
                       const BsdeOptions& opts = {});

struct DppResidual {
  double residual = 0.0;  // |V(t, x) - min over candidates of G[V(t + delta)]|
  double table_value = 0.0;
  double best = 0.0;
  double best_ci = 0.0;
  std::vector<Estimate> candidates;  // constant atoms of U_h, then the table feedback
};

// Candidates share one seed so their comparison uses common random numbers.
DppResidual dpp_residual(const CoefficientSet& c, std::size_t t_node, const Vec& x,
                         std::size_t delta_nodes, const ValueTable& table, std::size_t samples,
                         std::uint64_t seed, const BsdeOptions& opts = {});

struct SearchSpec {
  LatticeSpec lattice;
  double horizon = 1.0;
  std::size_t steps = 16;
  Vec u_lo, u_hi;
  std::vector<int> initial_points;  // control grid points per dimension at level 0
  int max_levels = 3;               // each level doubles lattice and control resolution
  std::size_t samples = 20000;
  std::uint64_t seed = 0;
  BsdeOptions bsde;
  QuadratureSpec quadrature;
};

struct EpsilonControl {
  ControlLaw control;
  std::string description;  // "constant" or "feedback"
  Vec constant;             // the atom for constant candidates
  Estimate cost;
  double value_estimate = 0.0;
  int level = 0;
  std::size_t candidates_tried = 0;
  bool converged = false;
  TimeGrid grid;
};

// Tries constant atoms then the lattice feedback, level by level, until
// J <= V_est + eps; otherwise returns the best candidate found, not converged.
EpsilonControl epsilon_optimal_control(const CoefficientSet& c, std::size_t t_node, const Vec& x,
                                       double eps, const SearchSpec& spec);

}  // namespace shjb
