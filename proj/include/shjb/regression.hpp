#pragma once

#include <vector>

#include <Eigen/Dense>

namespace shjb {

struct RegressionOptions {
  int degree = 3;
  double ridge = 1e-8;
};

// Least-squares projection onto polynomials of total degree <= `degree` in
// standardized regressors. Regressors that are constant across samples are
// dropped. The intercept is not penalized, so fitted values keep the sample
// mean of each target.
class PolynomialRegression {
 public:
  PolynomialRegression(const Eigen::MatrixXd& regressors, const RegressionOptions& opts);

  // Fitted values for each target column (samples x targets).
  Eigen::MatrixXd fit(const Eigen::MatrixXd& targets) const;

  int basis_size() const { return static_cast<int>(design_.cols()); }
  // Set when the Gram matrix is numerically singular and only the ridge term
  // keeps the system solvable.
  bool ridge_fallback() const { return ridge_fallback_; }
  const Eigen::MatrixXd& design() const { return design_; }

 private:
  Eigen::MatrixXd design_;
  Eigen::LDLT<Eigen::MatrixXd> solver_;
  bool ridge_fallback_ = false;
};

// Exponent vectors of all monomials of total degree <= degree in k variables,
// starting with the constant monomial.
std::vector<std::vector<int>> monomial_exponents(int k, int degree);

}  // namespace shjb
