#include "oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace oracle {

Mat dense_mass(const Vec &h) {
  const std::size_t n = h.size() + 1;
  Mat m(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double diag = 0;
    if (i > 0)
      diag += h[i - 1];
    if (i + 1 < n)
      diag += h[i];
    m[i][i] = 2 * diag;
    if (i + 1 < n) {
      m[i][i + 1] = h[i];
      m[i + 1][i] = h[i];
    }
  }
  return m;
}

Vec level_spacings(const mgr::GridHierarchy &hier, std::size_t level,
                   std::size_t dim) {
  return hier.dims[dim].h[level];
}

Mat dense_prolongation(const mgr::GridHierarchy &hier, std::size_t level,
                       std::size_t dim) {
  const std::size_t n = hier.extent(dim, level);
  const std::size_t m = hier.extent(dim, level - 1);
  const auto &r = hier.dims[dim].r[level];
  Mat p(n, Vec(m, 0.0));
  for (std::size_t pos = 0; pos < n; ++pos) {
    if (mgr::is_coarse_pos(pos, n)) {
      p[pos][mgr::coarse_rank(pos)] = 1.0;
    } else {
      const double t = r[pos - 1];
      p[pos][mgr::coarse_rank(pos - 1)] = 1.0 - t;
      p[pos][mgr::coarse_rank(pos + 1)] = t;
    }
  }
  (void)m;
  return p;
}

Mat dense_transfer(const mgr::GridHierarchy &hier, std::size_t level,
                   std::size_t dim) {
  return transpose(dense_prolongation(hier, level, dim));
}

Mat transpose(const Mat &a) {
  Mat t(a[0].size(), Vec(a.size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      t[j][i] = a[i][j];
  return t;
}

Mat matmul(const Mat &a, const Mat &b) {
  Mat c(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j)
        c[i][j] += a[i][k] * b[k][j];
  return c;
}

Vec matvec(const Mat &a, const Vec &x) {
  Vec y(a.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j)
      y[i] += a[i][j] * x[j];
  return y;
}

Vec dense_solve(Mat a, Vec b) {
  const std::size_t n = a.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t row = col + 1; row < n; ++row)
      if (std::abs(a[row][col]) > std::abs(a[piv][col]))
        piv = row;
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    if (a[col][col] == 0.0)
      throw std::runtime_error("singular dense system");
    for (std::size_t row = col + 1; row < n; ++row) {
      const double f = a[row][col] / a[col][col];
      for (std::size_t j = col; j < n; ++j)
        a[row][j] -= f * a[col][j];
      b[row] -= f * b[col];
    }
  }
  Vec x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j)
      s -= a[i][j] * x[j];
    x[i] = s / a[i][i];
  }
  return x;
}

Vec apply_along_dim(const Mat &m, const Vec &values,
                    const std::vector<std::size_t> &extents, std::size_t dim) {
  const std::size_t rows = m.size();
  const std::size_t cols = m[0].size();
  if (extents[dim] != cols)
    throw std::runtime_error("oracle extent mismatch");
  std::vector<std::size_t> out_ext = extents;
  out_ext[dim] = rows;
  const auto in_str = mgr::make_strides(extents);
  const auto out_str = mgr::make_strides(out_ext);
  Vec out(mgr::num_elements(out_ext), 0.0);
  mgr::FiberIndexer in_rows(extents, in_str, dim);
  mgr::FiberIndexer out_rows(out_ext, out_str, dim);
  for (std::size_t k = 0; k < in_rows.count(); ++k) {
    const std::size_t ib = in_rows.base(k);
    const std::size_t ob = out_rows.base(k);
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < cols; ++j)
        s += m[i][j] * values[ib + j * in_str[dim]];
      out[ob + i * out_str[dim]] = s;
    }
  }
  return out;
}

Vec dense_interpolate(const mgr::GridHierarchy &hier, std::size_t level,
                      const Vec &level_values) {
  const std::size_t nd = hier.shape.size();
  const auto lshape = hier.level_shape(level);
  // gather kept-node values into the packed coarse array
  std::vector<std::size_t> cshape = hier.level_shape(level - 1);
  const auto lstr = mgr::make_strides(lshape);
  Vec coarse(mgr::num_elements(cshape), 0.0);
  std::vector<std::size_t> rank(nd, 0);
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < nd; ++d)
      off += mgr::coarse_pos(rank[d], lshape[d]) * lstr[d];
    coarse[i] = level_values[off];
    for (std::size_t d = 0; d < nd; ++d) {
      if (++rank[d] < cshape[d])
        break;
      rank[d] = 0;
    }
  }
  // prolong dimension by dimension
  Vec cur = coarse;
  std::vector<std::size_t> ext = cshape;
  for (std::size_t d = 0; d < nd; ++d) {
    if (hier.extent(d, level) == hier.extent(d, level - 1))
      continue;
    const Mat p = dense_prolongation(hier, level, d);
    cur = apply_along_dim(p, cur, ext, d);
    ext[d] = hier.extent(d, level);
  }
  return cur;
}

Vec random_vector(std::size_t n, unsigned seed, double lo, double hi) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Vec v(n);
  for (auto &x : v)
    x = dist(rng);
  return v;
}

std::vector<double> random_increasing_coords(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(0.1, 1.0);
  std::vector<double> c(n);
  double at = 0;
  for (auto &x : c) {
    x = at;
    at += dist(rng);
  }
  return c;
}

} // namespace oracle
