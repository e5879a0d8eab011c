#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shjb/hjb.hpp"

namespace shjb {

// Tensor sine basis on [-L, L]^n, orthonormal in L^2 and vanishing on the
// boundary, with a tensor trapezoid rule that integrates value-value and
// gradient-gradient products of basis functions exactly.
struct GelfandTriple {
  double L = 1.0;
  int n = 1;
  int modes = 1;      // per dimension; the basis has modes^n elements
  int intervals = 4;  // trapezoid intervals per dimension
  std::vector<std::array<int, 3>> mode_index;
  std::vector<Vec> points;
  Eigen::VectorXd weights;
  Eigen::MatrixXd E;                // points x basis
  std::vector<Eigen::MatrixXd> DE;  // per dimension: points x basis
  Eigen::MatrixXd mass;             // (e_i, e_j)_H
  Eigen::MatrixXd stiffness;        // (De_i, De_j)_H

  int size() const { return static_cast<int>(mode_index.size()); }
  std::size_t quad_size() const { return points.size(); }
  Eigen::MatrixXd v_gram() const { return mass + stiffness; }

  // Basis values and gradients at an arbitrary point; zero outside the domain.
  Eigen::RowVectorXd basis_row(const Vec& x) const;
  Eigen::MatrixXd basis_gradient(const Vec& x) const;  // n x basis
  double evaluate(const Eigen::VectorXd& coords, const Vec& x) const;

  // (v, e_i)_H from values at the quadrature points.
  Eigen::VectorXd load(const Eigen::VectorXd& point_values) const;
  // Coordinates of the H-projection of a function.
  Eigen::VectorXd project(const std::function<double(const Vec&)>& fn) const;
  double h_norm2(const Eigen::VectorXd& coords) const { return coords.dot(mass * coords); }
  double v_norm2(const Eigen::VectorXd& coords) const { return coords.dot(v_gram() * coords); }
  double h_norm2_values(const Eigen::VectorXd& point_values) const;
};

// intervals_per_dim = 0 picks 4 * modes, which keeps the rule exact.
GelfandTriple assemble_triple(double L, int n, int modes, int intervals_per_dim = 0);

// <A w, phi> = 1/2 int <sigma^T Dw, sigma^T Dphi>, <B z, phi> = int <sigma_d z, Dphi>.
// sigma_d is the column of the last Brownian component when the coefficients
// read it; otherwise B = 0 and the whole of sigma enters A. B uses composite
// Gauss-Legendre panels; everything else uses the trapezoid rule.
struct OperatorPair {
  Eigen::MatrixXd A, B;
  Eigen::MatrixXd bstar_gram;      // (B* e_i, B* e_j)_H = int (sigma_d . De_i)(sigma_d . De_j)
  Eigen::MatrixXd sigma_hat_gram;  // int <sigma_hat^T De_i, sigma_hat^T De_j>
  double alpha = 0.0, lambda = 0.0;
  bool split = false;  // sigma_d separated from sigma_hat
};

OperatorPair assemble_operators(const CoefficientSet& c, const GelfandTriple& tri, double t = 0.0,
                                const NoiseState& w = NoiseState{});

// Operators along the scenario tree. `frozen` pairs are reused at every step.
struct OperatorField {
  std::function<OperatorPair(double t, const NoiseState& w)> assemble;
  bool frozen = true;

  static OperatorField constant(OperatorPair pair);
  // Frozen when sigma agrees at all probe times and channel values.
  static OperatorField from_coefficients(const CoefficientSet& c, const GelfandTriple& tri,
                                         const TimeGrid& grid);
};

struct CoercivityReport {
  double min_slack = 0.0;  // over H-normalized trial vectors
  bool pass = false;
  std::string worst;
};

// 2<A phi, phi> + lambda |phi|_H^2 - alpha |phi|_V^2 - |B* phi|_H^2 on basis
// vectors and random combinations; pass iff the minimum is >= -1e-10.
CoercivityReport check_coercivity(const OperatorPair& pair, const GelfandTriple& tri, double alpha,
                                  double lambda, int trials, std::uint64_t seed = 0);

// Recombining tree for the randomness the coefficients read: the last Brownian
// component as +-sqrt(dt) steps, and at most one jump per step.
class ScenarioModel {
 public:
  struct Branch {
    std::size_t next = 0;
    double prob = 0.0;
    double dw = 0.0;
    int atom = -1;  // -1: no jump
  };

  ScenarioModel() = default;
  ScenarioModel(TimeGrid grid, bool brownian, std::vector<double> atom_weights,
                std::vector<Channel> channels = {});
  static ScenarioModel for_coefficients(const CoefficientSet& c, const TimeGrid& grid);

  const TimeGrid& grid() const { return grid_; }
  bool brownian() const { return brownian_; }
  bool jumps() const { return !weights_.empty(); }
  std::size_t atoms() const { return weights_.size(); }
  double atom_weight(std::size_t j) const { return weights_[j]; }
  std::size_t states(std::size_t node) const;
  std::vector<Branch> branches(std::size_t node, std::size_t state) const;
  double brownian_value(std::size_t node, std::size_t state) const;
  std::size_t jump_count(std::size_t node, std::size_t state) const;
  NoiseState noise(std::size_t node, std::size_t state) const;
  const std::vector<double>& probabilities(std::size_t node) const { return prob_.at(node); }
  std::string label(std::size_t node, std::size_t state) const;

 private:
  TimeGrid grid_;
  bool brownian_ = false;
  std::vector<double> weights_;
  std::vector<Channel> channels_;
  std::vector<std::vector<double>> prob_;
};

// One trajectory through the tree: the state per node and the jump atom per step.
struct ScenarioPath {
  std::vector<std::size_t> states;
  std::vector<int> atoms;
};

ScenarioPath sample_scenario_path(const ScenarioModel& sc, std::uint64_t seed);

struct BseejSolution {
  TimeGrid grid;
  ScenarioModel scenarios;
  std::vector<std::vector<Eigen::VectorXd>> y;               // [node][state]
  std::vector<std::vector<Eigen::VectorXd>> z;               // [step][state]
  std::vector<std::vector<std::vector<Eigen::VectorXd>>> r;  // [step][state][atom]
  std::vector<double> history;   // mixed-norm distance between successive iterates
  std::vector<double> relative;  // the same divided by the norm of the newer iterate
  int iterations = 0;
  bool converged = true;
};

// Values of F at the quadrature points given the coordinates of (Y, Z, R).
using FieldMap = std::function<Eigen::VectorXd(std::size_t step, double t, const NoiseState& w,
                                               const Eigen::VectorXd& y, const Eigen::VectorXd& z,
                                               const std::vector<Eigen::VectorXd>& r)>;
// Values of F0 at the quadrature points.
using SourceField = std::function<Eigen::VectorXd(std::size_t step, double t, const NoiseState& w)>;
// Coordinates of the terminal value.
using TerminalData = std::function<Eigen::VectorXd(const NoiseState& w)>;

// (M + dt A) y_i = M E[y_{i+1}] - dt (B z_i + (F0, e)), with z_i and r_i the
// tree projections of y_{i+1} on the Brownian step and the jump indicators.
BseejSolution solve_linear_bseej(const OperatorField& ops, const GelfandTriple& tri,
                                 const SourceField& f0, const TerminalData& xi,
                                 const ScenarioModel& sc);

struct PicardOptions {
  double tol = 1e-8;
  int max_iter = 50;
};

// Picard iteration: F frozen at the previous iterate at the same node.
BseejSolution solve_nonlinear_bseej(const OperatorField& ops, const GelfandTriple& tri,
                                    const FieldMap& F, const TerminalData& xi,
                                    const ScenarioModel& sc, const PicardOptions& opts = {});

// All-zero solution on the same tree (the reference for a-priori bounds).
BseejSolution zero_solution(const ScenarioModel& sc, int basis_size);

struct DependenceReport {
  double lhs = 0.0;  // sup E|dY|_H^2 + int E|dY|_V^2 + int E|dZ|_H^2 + int sum_j w_j E|dR_j|_H^2
  double rhs = 0.0;  // E|xi - xi'|_H^2 + int E|F(Y', Z', R') - F'(Y', Z', R')|_H^2
  double ratio = 0.0;
  double terminal_term = 0.0;
  double driver_term = 0.0;
};

// Differences of a against b; driver terms evaluated along b.
DependenceReport continuous_dependence_check(const BseejSolution& a, const BseejSolution& b,
                                             const FieldMap& Fa, const FieldMap& Fb,
                                             const GelfandTriple& tri);

struct EnergyReport {
  double residual = 0.0;  // E|xi|^2 - |y_0|^2 - sum dt E[2<Gamma, Y> + |Z|^2 + sum_j w_j |R_j|^2]
  double terminal = 0.0;
  double initial = 0.0;
  double drift = 0.0;
  double brownian = 0.0;
  double jumps = 0.0;
};

// Gamma_i = A y_i + B z_i + (F(y_i, z_i, r_i), e).
EnergyReport energy_identity(const BseejSolution& sol, const OperatorField& ops, const FieldMap& F,
                             const GelfandTriple& tri);
double energy_identity_residual(const BseejSolution& sol, const OperatorField& ops, const FieldMap& F,
                                const GelfandTriple& tri);

// sum over path events of (|R|^2 + 2 (Y, R)) minus its compensator sum dt w_j (...),
// with Y and R at the state before each step.
double jump_energy_term(const BseejSolution& sol, const GelfandTriple& tri, const ScenarioPath& path);

// max over steps and states of |(M + dt A) y_i - M E[y_{i+1}] + dt (B z_i + (F, e))|_inf.
double weak_form_residual(const BseejSolution& sol, const OperatorField& ops, const FieldMap& F,
                          const GelfandTriple& tri);

struct HjbWeakOptions {
  PicardOptions picard;
  double alpha = 0.0;  // declared coercivity constants
  double lambda = 0.0;
  int coercivity_trials = 32;
  std::uint64_t seed = 0;
  TensorGrid output;  // grid for the reconstructed fields
};

struct HjbWeakResult {
  RandomFieldTriplet triplet;
  BseejSolution solution;
  CoercivityReport coercivity;
  double weak_residual = 0.0;
  std::size_t outside = 0;  // shifted evaluations that left the domain (zero extension)
};

// F = -(J1 + min over U_h of the divergence-form bracket), see README.
FieldMap hjb_weak_driver(const CoefficientSet& c, const GelfandTriple& tri, const ControlSet& controls,
                         const ScenarioModel& sc, std::atomic<std::size_t>* outside = nullptr);

HjbWeakResult solve_hjb_weak(const CoefficientSet& c, const GelfandTriple& tri, const ControlSet& controls,
                             const ScenarioModel& sc, const HjbWeakOptions& opts);

}  // namespace shjb
