#include "shjb/grid.hpp"

#include <algorithm>
#include <cmath>

#include "shjb/errors.hpp"

namespace shjb {

TensorGrid::TensorGrid(Vec lo, Vec hi, std::vector<int> counts)
    : lo_(std::move(lo)), hi_(std::move(hi)), counts_(std::move(counts)) {
  const int n = static_cast<int>(counts_.size());
  require(n >= 1 && n <= 3, "grid dimension must be 1, 2 or 3");
  require(lo_.size() == n && hi_.size() == n, "grid box dimension mismatch");
  h_.resize(n);
  size_ = 1;
  for (int k = 0; k < n; ++k) {
    require(counts_[static_cast<std::size_t>(k)] >= 2, "grid needs at least two points per dimension");
    require(hi_[k] > lo_[k], "grid box must have positive extent");
    h_[k] = (hi_[k] - lo_[k]) / (counts_[static_cast<std::size_t>(k)] - 1);
  }
  std::size_t s = 1;
  for (int k = n - 1; k >= 0; --k) {
    stride_[static_cast<std::size_t>(k)] = s;
    s *= static_cast<std::size_t>(counts_[static_cast<std::size_t>(k)]);
  }
  size_ = s;
}

TensorGrid TensorGrid::cell_centers(const Vec& lo, const Vec& hi, const std::vector<int>& cells) {
  require(lo.size() == hi.size() && static_cast<std::size_t>(lo.size()) == cells.size(),
          "lattice dimension mismatch");
  Vec a(lo.size()), b(lo.size());
  for (int k = 0; k < lo.size(); ++k) {
    require(cells[static_cast<std::size_t>(k)] >= 2, "lattice needs at least two cells per dimension");
    const double w = (hi[k] - lo[k]) / cells[static_cast<std::size_t>(k)];
    a[k] = lo[k] + 0.5 * w;
    b[k] = hi[k] - 0.5 * w;
  }
  return TensorGrid(a, b, cells);
}

std::array<int, 3> TensorGrid::multi(std::size_t idx) const {
  std::array<int, 3> m{0, 0, 0};
  for (int k = 0; k < dim(); ++k) {
    m[static_cast<std::size_t>(k)] = static_cast<int>(idx / stride_[static_cast<std::size_t>(k)]);
    idx %= stride_[static_cast<std::size_t>(k)];
  }
  return m;
}

std::size_t TensorGrid::flat(const std::array<int, 3>& m) const {
  std::size_t idx = 0;
  for (int k = 0; k < dim(); ++k) idx += static_cast<std::size_t>(m[static_cast<std::size_t>(k)]) * stride_[static_cast<std::size_t>(k)];
  return idx;
}

Vec TensorGrid::point(std::size_t idx) const {
  const auto m = multi(idx);
  Vec x(dim());
  for (int k = 0; k < dim(); ++k) x[k] = lo_[k] + h_[k] * m[static_cast<std::size_t>(k)];
  return x;
}

bool TensorGrid::on_boundary(std::size_t idx) const {
  const auto m = multi(idx);
  for (int k = 0; k < dim(); ++k) {
    if (m[static_cast<std::size_t>(k)] == 0 || m[static_cast<std::size_t>(k)] == count(k) - 1) return true;
  }
  return false;
}

std::size_t TensorGrid::nearest(const Vec& x) const {
  std::array<int, 3> m{0, 0, 0};
  for (int k = 0; k < dim(); ++k) {
    const double r = std::round((x[k] - lo_[k]) / h_[k]);
    m[static_cast<std::size_t>(k)] = static_cast<int>(std::clamp(r, 0.0, static_cast<double>(count(k) - 1)));
  }
  return flat(m);
}

TensorGrid::Stencil TensorGrid::stencil(const Vec& x) const {
  Stencil st;
  std::array<int, 3> base{0, 0, 0};
  std::array<double, 3> frac{0, 0, 0};
  for (int k = 0; k < dim(); ++k) {
    double s = (x[k] - lo_[k]) / h_[k];
    const double top = count(k) - 1;
    if (!(s >= 0.0) || s > top) {
      st.clamped = true;
      s = std::isnan(s) ? 0.0 : std::clamp(s, 0.0, top);
    }
    int i = static_cast<int>(std::floor(s));
    if (i >= count(k) - 1) i = count(k) - 2;
    base[static_cast<std::size_t>(k)] = i;
    frac[static_cast<std::size_t>(k)] = s - i;
  }
  const int corners = 1 << dim();
  for (int c = 0; c < corners; ++c) {
    std::array<int, 3> m = base;
    double w = 1.0;
    for (int k = 0; k < dim(); ++k) {
      const bool up = (c >> k) & 1;
      m[static_cast<std::size_t>(k)] += up ? 1 : 0;
      w *= up ? frac[static_cast<std::size_t>(k)] : 1.0 - frac[static_cast<std::size_t>(k)];
    }
    st.idx[static_cast<std::size_t>(st.size)] = flat(m);
    st.w[static_cast<std::size_t>(st.size)] = w;
    ++st.size;
  }
  return st;
}

double TensorGrid::interpolate(const Eigen::VectorXd& values, const Vec& x, bool* clamped) const {
  const Stencil st = stencil(x);
  double v = 0.0;
  for (int i = 0; i < st.size; ++i) v += st.w[static_cast<std::size_t>(i)] * values[static_cast<Eigen::Index>(st.idx[static_cast<std::size_t>(i)])];
  if (clamped) *clamped = st.clamped;
  return v;
}

std::size_t TensorGrid::neighbor(std::size_t idx, int k, int step) const {
  const auto s = static_cast<long long>(stride_[static_cast<std::size_t>(k)]);
  return static_cast<std::size_t>(static_cast<long long>(idx) + step * s);
}

Vec TensorGrid::gradient_at(const Eigen::VectorXd& v, std::size_t idx) const {
  const auto m = multi(idx);
  Vec g(dim());
  for (int k = 0; k < dim(); ++k) {
    const int mk = m[static_cast<std::size_t>(k)];
    const auto at = [&](std::size_t j) { return v[static_cast<Eigen::Index>(j)]; };
    if (mk == 0) {
      g[k] = (at(neighbor(idx, k, 1)) - at(idx)) / h_[k];
    } else if (mk == count(k) - 1) {
      g[k] = (at(idx) - at(neighbor(idx, k, -1))) / h_[k];
    } else {
      g[k] = (at(neighbor(idx, k, 1)) - at(neighbor(idx, k, -1))) / (2.0 * h_[k]);
    }
  }
  return g;
}

Mat TensorGrid::hessian_at(const Eigen::VectorXd& v, std::size_t idx) const {
  const auto m = multi(idx);
  const auto at = [&](std::size_t j) { return v[static_cast<Eigen::Index>(j)]; };
  Mat H = Mat::Zero(dim(), dim());
  auto interior = [&](int k) {
    const int mk = m[static_cast<std::size_t>(k)];
    return mk > 0 && mk < count(k) - 1;
  };
  for (int k = 0; k < dim(); ++k) {
    if (!interior(k)) continue;
    H(k, k) = (at(neighbor(idx, k, 1)) - 2.0 * at(idx) + at(neighbor(idx, k, -1))) / (h_[k] * h_[k]);
    for (int l = k + 1; l < dim(); ++l) {
      if (!interior(l)) continue;
      const double pp = at(neighbor(neighbor(idx, k, 1), l, 1));
      const double pm = at(neighbor(neighbor(idx, k, 1), l, -1));
      const double mp = at(neighbor(neighbor(idx, k, -1), l, 1));
      const double mm = at(neighbor(neighbor(idx, k, -1), l, -1));
      H(k, l) = H(l, k) = (pp - pm - mp + mm) / (4.0 * h_[k] * h_[l]);
    }
  }
  return H;
}

double TensorGrid::upwind_at(const Eigen::VectorXd& v, std::size_t idx, int k, double velocity) const {
  const int mk = multi(idx)[static_cast<std::size_t>(k)];
  const auto at = [&](std::size_t j) { return v[static_cast<Eigen::Index>(j)]; };
  // Outflow at the boundary sees the constant extension, so the difference vanishes.
  if (velocity > 0.0 && mk == count(k) - 1) return 0.0;
  if (velocity < 0.0 && mk == 0) return 0.0;
  if (velocity > 0.0) return (at(neighbor(idx, k, 1)) - at(idx)) / h_[k];
  return (at(idx) - at(neighbor(idx, k, -1))) / h_[k];
}

}  // namespace shjb
