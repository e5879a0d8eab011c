#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "shjb/dpp.hpp"
#include "shjb/grid.hpp"

namespace shjb {

// H = f(t, x, u, y, sigma^T p + phi, k) + <p, b> + <q, sigma> + 1/2 Tr[A sigma sigma^T].
// q is n x d (the gradient of Phi, one column per Brownian component), <q, sigma>
// is the Frobenius product, and phi (length d, zero when empty) is the value of Phi.
double hamiltonian(const CoefficientSet& c, double t, const Vec& x, const Vec& u, const Vec& p,
                   const Mat& q, const Mat& A, double k, const NoiseState& w, double y = 0.0,
                   const Vec& phi = Vec(0));

// Gradient of the multilinear interpolant: central differences with the grid
// spacing, one-sided where a neighbor would leave the box.
Vec field_gradient(const TensorGrid& grid, const Eigen::VectorXd& values, const Vec& x);

struct NonlocalResult {
  std::vector<double> I;        // V(x + g_j) - V(x) per atom
  std::vector<double> I_psi;    // Psi_j(x + g_j) - Psi_j(x) per atom, when Psi is given
  double integral = 0.0;        // sum_j I_j w_j
  double compensated = 0.0;     // sum_j (I_j - <g_j, DV>) w_j
  double l_aggregate = 0.0;     // sum_j (I_j + Psi_j(x + g_j)) l(t, e_j) w_j
  double psi_integral = 0.0;    // sum_j I_psi_j w_j
  int clamped = 0;              // shifted points outside the grid
};

// psi, when non-null, holds one field per atom on the same grid.
NonlocalResult nonlocal_apply(const TensorGrid& grid, const Eigen::VectorXd& V,
                              const CoefficientSet& c, double t, const Vec& x, const Vec& u,
                              const NoiseState& w, const std::vector<Eigen::VectorXd>* psi = nullptr);

struct FieldSlice {
  Eigen::VectorXd V;
  Eigen::VectorXd Phi;               // component along the last Brownian motion; empty if not carried
  std::vector<Eigen::VectorXd> Psi;  // per atom; empty if not carried
};

// (V, Phi, Psi) on a spatial grid, per time node and scenario. Deterministic
// problems have a single scenario per node.
struct RandomFieldTriplet {
  TensorGrid grid;
  TimeGrid time;
  int d = 1;
  std::size_t atoms = 0;
  std::vector<std::vector<FieldSlice>> nodes;  // [node][scenario]

  const FieldSlice& at(std::size_t node, std::size_t scenario = 0) const {
    return nodes.at(node).at(scenario);
  }
};

struct PideSolution {
  TensorGrid grid;
  TimeGrid time;
  ControlSet controls;
  std::vector<Eigen::VectorXd> V;        // per node 0..N
  std::vector<std::vector<int>> argmin;  // per step 0..N-1
  std::size_t clamped = 0;
  double stable_dt = 0.0;  // largest step passing the monotonicity bound

  RandomFieldTriplet triplet(int d, std::size_t atoms) const;
  FeedbackPolicy policy() const { return FeedbackPolicy(time, grid, controls, argmin); }
};

// Largest dt with 1 - dt (sum_k a_kk / h_k^2 + sum_k |b~_k| / h_k + nu(E) + C (1 + sum_j |l_j| w_j)) >= 0
// over grid points, controls and the given time nodes; C is the declared Lipschitz constant.
double pide_stable_dt(const CoefficientSet& c, const TensorGrid& grid, const TimeGrid& time,
                      const ControlSet& controls);

// Explicit backward scheme for the deterministic degenerate HJB: upwind in the
// compensated drift b - sum_j g_j w_j, central second differences, linear
// interpolation at x + g_j. Throws CflViolation (with a suggested dt) when a
// step exceeds pide_stable_dt.
PideSolution solve_pide_deterministic(const CoefficientSet& c, const TensorGrid& grid,
                                      const TimeGrid& time, const ControlSet& controls);

// Delta(t, x, u): the bracket minimized in the stochastic HJB, evaluated with
// the fields of `slice` at grid point `idx`.
double hjb_bracket(const CoefficientSet& c, const TensorGrid& grid, const FieldSlice& slice,
                   double t, std::size_t idx, const Vec& u, const NoiseState& w, int* clamped = nullptr);

// Gamma_i - inf_u Delta(t_i, x, u) per node i < N, scenario and grid point.
// Gamma has the same [node][scenario] layout as the triplet, without the last node.
std::vector<std::vector<Eigen::VectorXd>> drift_consistency_residual(
    const RandomFieldTriplet& triplet, const std::vector<std::vector<Eigen::VectorXd>>& gamma,
    const CoefficientSet& c, const ControlSet& controls,
    const std::vector<std::vector<NoiseState>>* noise = nullptr);

// Gamma_i = (V_i - V_{i+1}) / dt_i for a single-scenario triplet.
std::vector<std::vector<Eigen::VectorXd>> deterministic_drift(const RandomFieldTriplet& triplet);

// Feedback u(t_i, x) = argmin_u Delta with lowest-index ties; single-scenario triplets.
FeedbackPolicy extract_feedback(const RandomFieldTriplet& triplet, const CoefficientSet& c,
                                const ControlSet& controls);

struct VerificationReport {
  double J = 0.0;
  double J_ci = 0.0;
  double V0 = 0.0;
  double gap = 0.0;
  std::size_t clamped = 0;
  std::vector<Estimate> alternatives;
  double alternatives_min_margin = 0.0;  // min over alternatives of J_alt - (V0 - CI_alt)
  bool sandwich = true;                  // every alternative J >= V0 - CI
};

struct VerificationOptions {
  std::size_t samples = 20000;
  std::uint64_t seed = 0;
  TimeGrid sim_grid;         // simulation grid; the triplet's time grid when empty
  std::size_t alternatives = 0;  // random feedback policies to compare against
  BsdeOptions bsde;
};

VerificationReport verification_run(const RandomFieldTriplet& triplet, const CoefficientSet& c,
                                    const ControlSet& controls, const Vec& x0,
                                    const VerificationOptions& opts);

}  // namespace shjb
