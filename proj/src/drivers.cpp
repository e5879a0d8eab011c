#include "shjb/drivers.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "shjb/errors.hpp"
#include "shjb/rng.hpp"

namespace shjb {

MarkMeasure::MarkMeasure(std::vector<MarkAtom> atoms) : atoms_(std::move(atoms)) {
  for (std::size_t j = 0; j < atoms_.size(); ++j) {
    const auto& a = atoms_[j];
    require(std::isfinite(a.weight) && a.weight > 0.0,
            "mark measure: atom " + std::to_string(j) + " needs a positive weight");
    require(a.mark.allFinite(), "mark measure: atom " + std::to_string(j) + " has a non-finite mark");
    require(j == 0 || a.mark.size() == atoms_[0].mark.size(),
            "mark measure: atoms must share the mark dimension");
    total_mass_ += a.weight;
  }
}

TimeGrid::TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {
  require(nodes_.size() >= 2, "time grid needs at least one step");
  require(nodes_.front() >= 0.0, "time grid must start at a nonnegative time");
  for (std::size_t i = 0; i + 1 < nodes_.size(); ++i) {
    require(std::isfinite(nodes_[i + 1]) && nodes_[i + 1] > nodes_[i],
            "time grid nodes must be strictly increasing");
  }
}

TimeGrid TimeGrid::uniform(double horizon, std::size_t steps, double start) {
  require(steps >= 1, "time grid needs at least one step");
  require(horizon > 0.0, "time horizon must be positive");
  std::vector<double> nodes(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) {
    nodes[i] = start + horizon * static_cast<double>(i) / static_cast<double>(steps);
  }
  return TimeGrid(std::move(nodes));
}

bool TimeGrid::is_uniform(double rel_tol) const {
  const double h = dt(0);
  for (std::size_t i = 1; i < steps(); ++i) {
    if (std::abs(dt(i) - h) > rel_tol * h) return false;
  }
  return true;
}

std::size_t TimeGrid::step_of(double t) const {
  auto it = std::lower_bound(nodes_.begin() + 1, nodes_.end(), t);
  if (it == nodes_.end()) return steps() - 1;
  return static_cast<std::size_t>(it - nodes_.begin()) - 1;
}

TimeGrid TimeGrid::slice(std::size_t first, std::size_t last) const {
  require(first < last && last < nodes_.size(), "time grid slice out of range");
  return TimeGrid(std::vector<double>(nodes_.begin() + static_cast<std::ptrdiff_t>(first),
                                      nodes_.begin() + static_cast<std::ptrdiff_t>(last) + 1));
}

void brownian_increment(const TimeGrid& grid, std::size_t step, int d, std::uint64_t seed,
                        double* out) {
  CounterEngine eng(child_seed(seed, step));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double s = std::sqrt(grid.dt(step));
  for (int k = 0; k < d; ++k) out[k] = s * normal(eng);
}

Eigen::MatrixXd sample_brownian(const TimeGrid& grid, int d, std::uint64_t seed) {
  require(d >= 1, "Brownian dimension must be at least 1");
  const std::size_t n = grid.steps();
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w(n, d);
  for (std::size_t i = 0; i < n; ++i) brownian_increment(grid, i, d, seed, w.row(i).data());
  return w;
}

std::vector<JumpEvent> sample_jumps(const TimeGrid& grid, const MarkMeasure& measure,
                                    std::uint64_t seed) {
  std::vector<JumpEvent> events;
  if (measure.empty()) return events;
  CounterEngine eng(seed);
  std::exponential_distribution<double> wait(measure.total_mass());
  std::vector<double> weights;
  weights.reserve(measure.size());
  for (const auto& a : measure.atoms()) weights.push_back(a.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  double t = grid.start();
  while (true) {
    const double gap = wait(eng);
    if (!(gap > 0.0)) continue;
    t += gap;
    if (t > grid.end()) break;
    events.push_back({t, pick(eng), grid.step_of(t)});
  }
  return events;
}

std::uint64_t brownian_seed(std::uint64_t path_seed) { return child_seed(path_seed, 0); }

DriverPath sample_path(const TimeGrid& grid, int d, const MarkMeasure& measure,
                       std::uint64_t seed) {
  DriverPath p;
  p.grid = grid;
  p.brownian = sample_brownian(grid, d, brownian_seed(seed));
  p.jumps = sample_jumps(grid, measure, child_seed(seed, 1));
  return p;
}

DriverPath coarsen(const DriverPath& path, std::size_t factor) {
  require(factor >= 1 && path.grid.steps() % factor == 0,
          "coarsening factor must divide the step count");
  const std::size_t n = path.grid.steps() / factor;
  std::vector<double> nodes(n + 1);
  for (std::size_t i = 0; i <= n; ++i) nodes[i] = path.grid.node(i * factor);
  DriverPath c;
  c.grid = TimeGrid(std::move(nodes));
  c.brownian = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), path.brownian.cols());
  for (std::size_t i = 0; i < path.grid.steps(); ++i) {
    c.brownian.row(static_cast<Eigen::Index>(i / factor)) += path.brownian.row(static_cast<Eigen::Index>(i));
  }
  c.jumps = path.jumps;
  for (auto& e : c.jumps) e.step = c.grid.step_of(e.time);
  return c;
}

double compensated_integral(const DriverPath& path, const MarkMeasure& measure,
                            const MarkIntegrand& phi) {
  auto checked = [](double v, double t) {
    if (!std::isfinite(v)) {
      throw NumericError("compensated integral: non-finite integrand at t=" + std::to_string(t));
    }
    return v;
  };
  double jumps = 0.0;
  for (const auto& e : path.jumps) jumps += checked(phi(e.time, measure.atom(e.atom).mark), e.time);
  double comp = 0.0;
  for (std::size_t i = 0; i < path.grid.steps(); ++i) {
    const double t = path.grid.node(i);
    double s = 0.0;
    for (const auto& a : measure.atoms()) s += checked(phi(t, a.mark), t) * a.weight;
    comp += s * path.grid.dt(i);
  }
  return jumps - comp;
}

}  // namespace shjb
