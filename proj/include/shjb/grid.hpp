#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "shjb/types.hpp"

namespace shjb {

// Tensor-product grid of points on a box, dimension 1..3.
class TensorGrid {
 public:
  TensorGrid() = default;
  TensorGrid(Vec lo, Vec hi, std::vector<int> counts);
  // Centers of `cells[k]` equal cells per dimension of [lo, hi].
  static TensorGrid cell_centers(const Vec& lo, const Vec& hi, const std::vector<int>& cells);

  int dim() const { return static_cast<int>(counts_.size()); }
  std::size_t size() const { return size_; }
  int count(int k) const { return counts_[static_cast<std::size_t>(k)]; }
  double lo(int k) const { return lo_[k]; }
  double hi(int k) const { return hi_[k]; }
  double spacing(int k) const { return h_[k]; }

  Vec point(std::size_t idx) const;
  std::size_t flat(const std::array<int, 3>& multi) const;
  std::array<int, 3> multi(std::size_t idx) const;
  bool on_boundary(std::size_t idx) const;
  std::size_t nearest(const Vec& x) const;

  struct Stencil {
    std::array<std::size_t, 8> idx{};
    std::array<double, 8> w{};
    int size = 0;
    bool clamped = false;
  };
  // Multilinear interpolation stencil; points outside the box are clamped to it.
  Stencil stencil(const Vec& x) const;
  double interpolate(const Eigen::VectorXd& values, const Vec& x, bool* clamped = nullptr) const;

  // Finite differences at a grid point: central inside, one-sided on the boundary.
  Vec gradient_at(const Eigen::VectorXd& values, std::size_t idx) const;
  // Second differences; rows/cols of boundary directions are zero (linear ghost values).
  Mat hessian_at(const Eigen::VectorXd& values, std::size_t idx) const;
  // Upwind first difference along k at idx in the direction of `velocity`; zero for
  // outflow at the boundary (constant extension).
  double upwind_at(const Eigen::VectorXd& values, std::size_t idx, int k, double velocity) const;

 private:
  Vec lo_, hi_, h_;
  std::vector<int> counts_;
  std::array<std::size_t, 3> stride_{};
  std::size_t size_ = 0;

  std::size_t neighbor(std::size_t idx, int k, int step) const;
};

}  // namespace shjb
