#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "shjb/types.hpp"

namespace shjb {

struct MarkAtom {
  Vec mark;
  double weight = 0.0;
};

// Finite jump-mark measure: a weighted list of atoms.
class MarkMeasure {
 public:
  MarkMeasure() = default;
  explicit MarkMeasure(std::vector<MarkAtom> atoms);

  const std::vector<MarkAtom>& atoms() const { return atoms_; }
  const MarkAtom& atom(std::size_t j) const { return atoms_.at(j); }
  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }
  double total_mass() const { return total_mass_; }

 private:
  std::vector<MarkAtom> atoms_;
  double total_mass_ = 0.0;
};

// Strictly increasing time nodes t_0 < ... < t_N. Sub-grids used by the
// backward semigroup keep absolute times, so t_0 may be positive.
class TimeGrid {
 public:
  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> nodes);
  static TimeGrid uniform(double horizon, std::size_t steps, double start = 0.0);

  std::size_t steps() const { return nodes_.size() - 1; }
  double node(std::size_t i) const { return nodes_[i]; }
  double dt(std::size_t i) const { return nodes_[i + 1] - nodes_[i]; }
  double start() const { return nodes_.front(); }
  double end() const { return nodes_.back(); }
  const std::vector<double>& nodes() const { return nodes_; }
  bool is_uniform(double rel_tol = 1e-9) const;
  // Index of the step containing time t in (t_i, t_{i+1}].
  std::size_t step_of(double t) const;
  TimeGrid slice(std::size_t first, std::size_t last) const;

 private:
  std::vector<double> nodes_;
};

struct JumpEvent {
  double time = 0.0;
  std::size_t atom = 0;
  std::size_t step = 0;  // t_step < time <= t_{step+1}
};

struct DriverPath {
  TimeGrid grid;
  Eigen::MatrixXd brownian;  // N x d, row i is W(t_{i+1}) - W(t_i)
  std::vector<JumpEvent> jumps;
};

// Row `step` of the increment matrix produced by sample_brownian(grid, d, seed).
void brownian_increment(const TimeGrid& grid, std::size_t step, int d, std::uint64_t seed,
                        double* out);
Eigen::MatrixXd sample_brownian(const TimeGrid& grid, int d, std::uint64_t seed);
std::vector<JumpEvent> sample_jumps(const TimeGrid& grid, const MarkMeasure& measure,
                                    std::uint64_t seed);

// Brownian part from child stream 0, jump part from child stream 1.
DriverPath sample_path(const TimeGrid& grid, int d, const MarkMeasure& measure,
                       std::uint64_t seed);
std::uint64_t brownian_seed(std::uint64_t path_seed);

// Merges groups of `factor` consecutive steps; jump events are kept as is.
DriverPath coarsen(const DriverPath& path, std::size_t factor);

using MarkIntegrand = std::function<double(double t, const Vec& mark)>;

// Sum of the integrand over events minus its left-point compensator on the grid.
double compensated_integral(const DriverPath& path, const MarkMeasure& measure,
                            const MarkIntegrand& phi);

}  // namespace shjb
