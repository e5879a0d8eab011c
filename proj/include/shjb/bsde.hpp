#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "shjb/forward.hpp"
#include "shjb/regression.hpp"

namespace shjb {

struct Estimate {
  double value = 0.0;
  double ci = 0.0;  // 99% half-width
};

struct BsdeOptions {
  RegressionOptions regression;
  bool keep_samples = false;  // store Y, Z, K per sample and node
};

struct BsdeNodeDiagnostics {
  int basis_size = 0;
  bool ridge_fallback = false;
  double residual_rms = 0.0;  // of the Y regression
  double y_mean = 0.0;
  Eigen::VectorXd z_mean;
  Eigen::VectorXd k_mean;  // per atom
};

struct BsdeSolution {
  TimeGrid grid;
  double y0 = 0.0;
  Eigen::VectorXd z0;
  Eigen::VectorXd k0;
  // h(X_N) + sum_i f_i dt per sample; its mean equals y0 and its spread gives the CI.
  Eigen::VectorXd pathwise;
  double y0_ci = 0.0;
  std::vector<BsdeNodeDiagnostics> nodes;  // nodes 0..N
  bool ridge_fallback = false;

  std::vector<Eigen::VectorXd> Y;  // per node, when kept
  std::vector<Eigen::MatrixXd> Z;  // per step: samples x d
  std::vector<Eigen::MatrixXd> K;  // per step: samples x atoms

  Estimate value() const { return {y0, y0_ci}; }
};

using TerminalField = std::function<double(const Vec& x, const NoiseState& w)>;

// Backward regression scheme: Y_N = terminal(X_N); Z, K from regressions of
// Y_{i+1} times the Brownian and compensated per-atom jump increments; the
// driver is evaluated explicitly at the projection of Y_{i+1}.
BsdeSolution solve_bsde(const CoefficientSet& c, const ForwardBatch& batch,
                        const BsdeOptions& opts = {}, const TerminalField& terminal = nullptr);

// G_{t, t+delta}[eta] at (t_node, x): forward batch over the delta_nodes steps
// after t_node, then the BSDE with terminal eta. Control steps are indexed on
// the full grid.
Estimate backward_semigroup(const CoefficientSet& c, const ControlLaw& control, const TimeGrid& grid,
                            std::size_t t_node, const Vec& x, std::size_t delta_nodes,
                            const TerminalField& eta, std::size_t samples, std::uint64_t seed,
                            const BsdeOptions& opts = {}, const Vec& w0 = Vec(0));

struct ComparisonReport {
  double y1 = 0.0, y2 = 0.0;
  double margin = 0.0;     // y2 - y1
  double tolerance = 0.0;  // CI half-width of the pathwise difference
  bool ordered = false;    // margin >= -tolerance
  bool strictly_ordered = false;  // margin >= 0
};

// Solves with terminals h1 <= h2 on the same batch and compares Y(0).
ComparisonReport comparison_check(const CoefficientSet& c, const ForwardBatch& batch,
                                  const TerminalField& h1, const TerminalField& h2,
                                  const BsdeOptions& opts = {});

}  // namespace shjb
