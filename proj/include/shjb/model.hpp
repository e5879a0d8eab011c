#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "shjb/drivers.hpp"
#include "shjb/types.hpp"

namespace shjb {

enum class ChannelKind { Brownian, JumpCount };

// A driver functional the coefficients may read: the current value of one
// Brownian component, or the running number of jumps.
struct Channel {
  ChannelKind kind = ChannelKind::Brownian;
  int index = 0;  // Brownian component; unused for JumpCount

  static Channel brownian(int k) { return {ChannelKind::Brownian, k}; }
  static Channel jumps() { return {ChannelKind::JumpCount, 0}; }
};

struct NoiseState {
  double t = 0.0;
  Vec values;  // aligned with CoefficientSet::channels
};

using DriftFn = std::function<Vec(double t, const Vec& x, const Vec& u, const NoiseState& w)>;
using DiffusionFn = std::function<Mat(double t, const Vec& x, const Vec& u, const NoiseState& w)>;
using JumpFn =
    std::function<Vec(double t, const Vec& mark, const Vec& x, const Vec& u, const NoiseState& w)>;
using DriverFn = std::function<double(double t, const Vec& x, const Vec& u, double y, const Vec& z,
                                      double k, const NoiseState& w)>;
using TerminalFn = std::function<double(const Vec& x, const NoiseState& w)>;
using JumpWeightFn = std::function<double(double t, const Vec& mark)>;

// Coefficients (b, sigma, g, f, h, l) of the controlled system and its cost,
// with declared regularity constants. Callables must be pure and re-entrant.
struct CoefficientSet {
  int n = 1;  // state
  int d = 1;  // Brownian
  int m = 1;  // control
  MarkMeasure measure;

  DriftFn b;
  DiffusionFn sigma;
  JumpFn g;
  DriverFn f;
  TerminalFn h;
  JumpWeightFn l;

  double lipschitz_C = 1.0;
  std::vector<double> rho;  // one per atom of `measure`
  double delta = 1.0;
  bool control_in_sigma = false;
  std::vector<Channel> channels;

  bool deterministic() const { return channels.empty(); }
  // Structural checks: dimensions, constants, channel indices.
  void validate() const;
  // The weak HJB pipeline additionally needs sigma free of the control and
  // randomness read only from the last Brownian component or the jumps.
  void require_galerkin_compatible() const;
  // True when the last Brownian component is among the channels.
  bool reads_last_brownian() const;
};

NoiseState deterministic_noise(double t);

// Finite grid U_h inside the box [lo, hi].
struct ControlSet {
  std::vector<Vec> atoms;
  Vec lo;
  Vec hi;

  std::size_t size() const { return atoms.size(); }
  int dim() const { return static_cast<int>(lo.size()); }
  // Tensor grid with points[k] nodes in dimension k, last dimension fastest.
  static ControlSet grid(const Vec& lo, const Vec& hi, const std::vector<int>& points);
  static ControlSet from_atoms(std::vector<Vec> atoms, const Vec& lo, const Vec& hi);
  static ControlSet singleton(const Vec& u);
};

// Central-difference Jacobians with step 1e-5 (1 + |x|).
double fd_step(const Vec& x);
Mat jacobian_b(const CoefficientSet& c, double t, const Vec& x, const Vec& u, const NoiseState& w);
// Entry k is the Jacobian of column k of sigma.
std::vector<Mat> jacobian_sigma(const CoefficientSet& c, double t, const Vec& x, const Vec& u,
                                const NoiseState& w);
Mat jacobian_g(const CoefficientSet& c, double t, const Vec& mark, const Vec& x, const Vec& u,
               const NoiseState& w);

struct SamplingPlan {
  std::size_t samples = 1000;
  Vec x_lo, x_hi;
  Vec u_lo, u_hi;
  double t_lo = 0.0, t_hi = 1.0;
  double noise_range = 1.0;  // channel values drawn from [-r, r]
  double yzk_range = 1.0;    // y, z, k drawn from [-r, r]
  std::uint64_t seed = 0;
};

struct CheckResult {
  std::string name;
  double observed = 0.0;
  double bound = 0.0;
  bool upper = true;  // observed must not exceed bound, else must not fall below
  bool pass = true;
  std::string where;  // sample realizing `observed`
};

struct ValidationReport {
  std::vector<CheckResult> checks;
  bool pass() const;
  const CheckResult& at(const std::string& name) const;
};

ValidationReport validate_lipschitz(const CoefficientSet& c, const SamplingPlan& plan);
ValidationReport validate_jump_nondegeneracy(const CoefficientSet& c, const SamplingPlan& plan);
ValidationReport validate_driver_monotonicity(const CoefficientSet& c, const SamplingPlan& plan);

}  // namespace shjb
