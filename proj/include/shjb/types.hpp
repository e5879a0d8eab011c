#pragma once

#include <Eigen/Dense>

namespace shjb {

// Upper bound on state, Brownian, control and mark dimensions. Small vectors
// live on the stack so per-step coefficient calls do not allocate.
inline constexpr int kMaxDim = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

inline Vec zeros(int n) { return Vec::Zero(n); }

}  // namespace shjb
