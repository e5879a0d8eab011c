#include "shjb/regression.hpp"

#include <cmath>
#include <functional>

#include "shjb/errors.hpp"

namespace shjb {

std::vector<std::vector<int>> monomial_exponents(int k, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(k), 0);
  for (int total = 0; total <= degree; ++total) {
    // Enumerate exponents summing to `total` in lexicographic order.
    std::function<void(int, int)> rec = [&](int pos, int left) {
      if (pos == k - 1) {
        cur[static_cast<std::size_t>(pos)] = left;
        out.push_back(cur);
        return;
      }
      for (int e = left; e >= 0; --e) {
        cur[static_cast<std::size_t>(pos)] = e;
        rec(pos + 1, left - e);
      }
    };
    if (k == 0) {
      if (total == 0) out.emplace_back();
      continue;
    }
    rec(0, total);
  }
  return out;
}

PolynomialRegression::PolynomialRegression(const Eigen::MatrixXd& regressors,
                                           const RegressionOptions& opts) {
  require(opts.degree >= 0, "regression degree must be nonnegative");
  require(opts.ridge >= 0.0, "ridge parameter must be nonnegative");
  const Eigen::Index M = regressors.rows();
  require(M >= 1, "regression needs at least one sample");

  std::vector<Eigen::VectorXd> active;
  for (Eigen::Index j = 0; j < regressors.cols(); ++j) {
    const Eigen::VectorXd col = regressors.col(j);
    const double mu = col.mean();
    const double sd = std::sqrt((col.array() - mu).square().mean());
    if (sd > 1e-12 * (1.0 + std::abs(mu))) active.push_back((col.array() - mu) / sd);
  }
  const auto exps = monomial_exponents(static_cast<int>(active.size()), opts.degree);
  design_.resize(M, static_cast<Eigen::Index>(exps.size()));
  for (std::size_t b = 0; b < exps.size(); ++b) {
    Eigen::ArrayXd v = Eigen::ArrayXd::Ones(M);
    for (std::size_t j = 0; j < active.size(); ++j) {
      for (int p = 0; p < exps[b][j]; ++p) v *= active[j].array();
    }
    design_.col(static_cast<Eigen::Index>(b)) = v.matrix();
  }
  Eigen::MatrixXd gram = design_.transpose() * design_ / static_cast<double>(M);
  if (gram.rows() > 1) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
    ridge_fallback_ = !(lo > 1e-10 * hi);
  }
  for (Eigen::Index b = 1; b < gram.rows(); ++b) gram(b, b) += opts.ridge;
  solver_.compute(gram);
  if (solver_.info() != Eigen::Success) throw NumericError("regression Gram matrix factorization failed");
}

Eigen::MatrixXd PolynomialRegression::fit(const Eigen::MatrixXd& targets) const {
  require(targets.rows() == design_.rows(), "regression targets have the wrong sample count");
  const Eigen::MatrixXd rhs = design_.transpose() * targets / static_cast<double>(design_.rows());
  const Eigen::MatrixXd beta = solver_.solve(rhs);
  return design_ * beta;
}

}  // namespace shjb
