#ifndef MGR_KERNELS_HPP
#define MGR_KERNELS_HPP

#include <cassert>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mgr/grid.hpp"
#include "mgr/ndarray.hpp"

namespace mgr {

// Tile extents over the (up to) three tiled dimensions; the analog of a
// thread-block size. Only affects traversal order and cache behavior, never
// values.
struct TileConfig {
  std::size_t bx = 4, by = 4, bz = 4;

  std::size_t volume() const { return bx * by * bz; }
  bool valid() const { return bx >= 1 && by >= 1 && bz >= 1; }
  std::size_t extent(std::size_t slot) const {
    return slot == 0 ? bx : slot == 1 ? by : bz;
  }
  bool operator==(const TileConfig &o) const {
    return bx == o.bx && by == o.by && bz == o.bz;
  }
};

inline constexpr std::size_t kDefaultTileBudget = 32768; // elements

// Shrink the largest extent until the tile fits the workspace budget.
inline TileConfig clamp_to_budget(TileConfig cfg,
                                  std::size_t budget = kDefaultTileBudget) {
  while (cfg.volume() > budget) {
    std::size_t *largest = &cfg.bx;
    if (cfg.by > *largest)
      largest = &cfg.by;
    if (cfg.bz > *largest)
      largest = &cfg.bz;
    if (*largest == 1)
      break;
    *largest /= 2;
  }
  return cfg;
}

// Traversal plan: which dimensions are tiled (blocked by the TileConfig) and
// which are looped one slab at a time outside the tiles.
struct TilePlan {
  std::vector<std::size_t> tiled; // at most 3, dimension 0 always first
  std::vector<std::size_t> outer;
};

inline TilePlan default_tile_plan(std::size_t ndims) {
  TilePlan plan;
  for (std::size_t d = 0; d < ndims && d < 3; ++d)
    plan.tiled.push_back(d);
  for (std::size_t d = 3; d < ndims; ++d)
    plan.outer.push_back(d);
  return plan;
}

// Invokes fn(lo, hi) for each tile box over `extents`. Outer dims advance one
// position at a time; tiled dims advance in TileConfig-sized blocks. Blocks
// are visited in row-major order, dimension 0 fastest.
template <typename Fn>
void for_each_tile(const Shape &extents, const TilePlan &plan,
                   const TileConfig &cfg, Fn &&fn) {
  const std::size_t nd = extents.size();
  std::vector<std::size_t> block(nd, 1);
  for (std::size_t s = 0; s < plan.tiled.size(); ++s)
    block[plan.tiled[s]] = std::max<std::size_t>(1, cfg.extent(s));
  std::vector<std::size_t> lo(nd, 0), hi(nd, 0);
  for (std::size_t d = 0; d < nd; ++d)
    hi[d] = std::min(block[d], extents[d]);
  for (;;) {
    fn(lo, hi);
    std::size_t d = 0;
    for (; d < nd; ++d) {
      lo[d] += block[d];
      if (lo[d] < extents[d]) {
        hi[d] = std::min(lo[d] + block[d], extents[d]);
        break;
      }
      lo[d] = 0;
      hi[d] = std::min(block[d], extents[d]);
    }
    if (d == nd)
      break;
  }
}

// Tridiagonal mass matrix of one dimension at one level, with its Thomas
// factorization. Diagonal 2*(h[i-1]+h[i]) (boundary spacings drop out),
// off-diagonals h[i]; symmetric positive definite for positive spacings.
template <typename Real> struct TridiagonalOperator {
  std::size_t level = 0;
  std::size_t dim = 0;
  std::vector<Real> h;         // level spacings
  std::vector<Real> fwd;       // forward multipliers, fwd[0] = 0
  std::vector<Real> inv_pivot; // reciprocal pivots of the LU factorization

  std::size_t n() const { return inv_pivot.size(); }

  static TridiagonalOperator build(const GridHierarchy &hier,
                                   std::size_t level, std::size_t dim) {
    TridiagonalOperator op;
    op.level = level;
    op.dim = dim;
    const auto &hd = hier.dims[dim].h[level];
    const std::size_t n = hd.size() + 1;
    op.h.resize(hd.size());
    for (std::size_t i = 0; i < hd.size(); ++i)
      op.h[i] = Real(hd[i]);
    op.fwd.resize(n);
    op.inv_pivot.resize(n);
    op.fwd[0] = Real(0);
    Real pivot = Real(2) * op.h[0];
    if (!(pivot > Real(0)))
      throw SingularSystem("nonpositive leading pivot");
    op.inv_pivot[0] = Real(1) / pivot;
    for (std::size_t i = 1; i < n; ++i) {
      const Real sub = op.h[i - 1];
      op.fwd[i] = -sub * op.inv_pivot[i - 1];
      const Real diag = i + 1 < n ? Real(2) * (op.h[i - 1] + op.h[i])
                                  : Real(2) * op.h[i - 1];
      pivot = diag + op.fwd[i] * sub;
      if (!(pivot > Real(0)))
        throw SingularSystem("nonpositive pivot at row " + std::to_string(i));
      op.inv_pivot[i] = Real(1) / pivot;
    }
    return op;
  }
};

namespace detail {

// Forward then backward substitution, in place:
//   forward:  v[i] <- v[i] + fwd[i]*v[i-1]
//   backward: v[i] <- (v[i] - h[i]*v[i+1]) * inv_pivot[i]
template <typename Real>
void thomas_fiber(Real *v, const TridiagonalOperator<Real> &op) {
  const std::size_t n = op.n();
  for (std::size_t i = 1; i < n; ++i)
    v[i] += op.fwd[i] * v[i - 1];
  v[n - 1] *= op.inv_pivot[n - 1];
  for (std::size_t i = n - 1; i-- > 0;)
    v[i] = (v[i] - op.h[i] * v[i + 1]) * op.inv_pivot[i];
}

// Merged mass-trans outputs for kept indices [i_begin, i_end) of one fiber:
// out = R * (M * in) where R carries the transposed interpolation weights.
// `in(j)` resolves the fiber value at position j; positions within reach 2 of
// the requested kept positions must resolve. Composing the two stencils in
// one pass gives the 5-point merged row without materializing M*in.
template <typename Real, typename In>
void masstrans_window(In &&in, Real *out, const Real *h, const Real *r,
                      std::size_t n, std::size_t i_begin, std::size_t i_end) {
  auto mv = [&](std::size_t j) -> Real {
    if (j == 0)
      return Real(2) * h[0] * in(0) + h[0] * in(1);
    if (j == n - 1)
      return h[n - 2] * in(n - 2) + Real(2) * h[n - 2] * in(n - 1);
    return h[j - 1] * in(j - 1) + Real(2) * (h[j - 1] + h[j]) * in(j) +
           h[j] * in(j + 1);
  };
  for (std::size_t i = i_begin; i < i_end; ++i) {
    const std::size_t q = coarse_pos(i, n);
    Real v = mv(q);
    if (q >= 1 && !is_coarse_pos(q - 1, n))
      v += r[q - 2] * mv(q - 1);
    if (q + 1 < n && !is_coarse_pos(q + 1, n))
      v += (Real(1) - r[q]) * mv(q + 1);
    out[i - i_begin] = v;
  }
}

template <typename Real>
void masstrans_fiber(const Real *in, Real *out, const Real *h, const Real *r,
                     std::size_t n) {
  masstrans_window([in](std::size_t j) { return in[j]; }, out, h, r, n, 0,
                   coarse_extent(n));
}

} // namespace detail

// Multilinear interpolation of one node from its surrounding coarse corners.
// `mask` marks the dimensions along which `pos` is fine; `at(p)` returns the
// value at lattice position p. Corners reduce pairwise with a + t*(b - a)
// (linear, then bilinear, then trilinear), dimension order ascending.
template <typename Real, typename At>
Real interpolate_node(At &&at, const std::size_t *pos, unsigned mask,
                      const GridHierarchy &hier, std::size_t level) {
  int fine_dims[kMaxDims];
  int k = 0;
  for (int d = 0; d < hier.ndims(); ++d)
    if ((mask >> d) & 1)
      fine_dims[k++] = d;
  Real corner[1 << kMaxDims];
  std::size_t p[kMaxDims];
  for (unsigned c = 0; c < (1u << k); ++c) {
    for (int d = 0; d < hier.ndims(); ++d)
      p[d] = pos[d];
    for (int q = 0; q < k; ++q)
      p[fine_dims[q]] += ((c >> q) & 1) ? 1 : -1;
    // the -1/+1 corner offsets: fine positions are odd interior ones, so
    // both neighbors exist and are coarse
    corner[c] = at(p);
  }
  unsigned width = 1u << k;
  for (int q = 0; q < k; ++q) {
    const int d = fine_dims[q];
    const Real t = Real(hier.dims[d].r[level][pos[d] - 1]);
    width /= 2;
    for (unsigned i = 0; i < width; ++i) {
      const Real a = corner[2 * i], b = corner[2 * i + 1];
      corner[i] = a + t * (b - a);
    }
  }
  return corner[0];
}

// Grid-processing sweep over one packed level array: replaces every
// coefficient-node value with (value - interpolation) or, inverse, with
// (interpolation + value). Traversal walks the coarse corner lattice in
// tiles; a corner owns the up-to-2^d coefficient nodes whose stencil it
// anchors on the left/lower side, so every coefficient is written exactly
// once regardless of tiling.
template <typename Real>
void gpk_sweep(Real *a, const GridHierarchy &hier, std::size_t level,
               bool inverse, const TileConfig &cfg, const TilePlan &plan) {
  const int nd = hier.ndims();
  const Shape lshape = hier.level_shape(level);
  const auto strides = make_strides(lshape);
  const Shape cshape = hier.level_shape(level - 1);

  auto at = [&](const std::size_t *p) -> Real {
    std::size_t off = 0;
    for (int d = 0; d < nd; ++d)
      off += p[d] * strides[d];
    return a[off];
  };

  for_each_tile(cshape, plan, cfg, [&](const std::vector<std::size_t> &lo,
                                       const std::vector<std::size_t> &hi) {
    std::vector<std::size_t> rank(lo);
    for (;;) {
      // corner position in the level lattice
      std::size_t corner[kMaxDims];
      for (int d = 0; d < nd; ++d)
        corner[d] = coarse_pos(rank[d], lshape[d]);
      // candidate coefficient nodes anchored at this corner
      unsigned avail = 0;
      for (int d = 0; d < nd; ++d)
        if (corner[d] % 2 == 0 && corner[d] + 2 <= lshape[d] - 1)
          avail |= 1u << d;
      for (unsigned m = avail; m != 0; m = (m - 1) & avail) {
        std::size_t p[kMaxDims];
        std::size_t off = 0;
        for (int d = 0; d < nd; ++d) {
          p[d] = corner[d] + ((m >> d) & 1);
          off += p[d] * strides[d];
        }
        const Real interp = interpolate_node<Real>(at, p, m, hier, level);
        a[off] = inverse ? interp + a[off] : a[off] - interp;
      }
      int d = 0;
      for (; d < nd; ++d) {
        if (++rank[d] < hi[d])
          break;
        rank[d] = lo[d];
      }
      if (d == nd)
        break;
    }
  });
}

// Compute the level-l coefficients in place on a packed level-l array:
// coefficient nodes become value - multilinear interpolation of the
// surrounding kept nodes; kept-node values are untouched.
template <typename Real>
void compute_coefficients(std::span<Real> values, const GridHierarchy &hier,
                          std::size_t level, const TileConfig &cfg = {},
                          const TilePlan *plan = nullptr) {
  hier.require_level(level);
  if (values.size() != hier.num_nodes(level))
    throw ShapeError("level " + std::to_string(level) + " expects " +
                     std::to_string(hier.num_nodes(level)) + " values, got " +
                     std::to_string(values.size()));
  const TilePlan p = plan ? *plan : default_tile_plan(hier.ndims());
  gpk_sweep(values.data(), hier, level, false, cfg, p);
}

// Exact inverse of compute_coefficients: coefficient nodes become
// interpolation + stored coefficient.
template <typename Real>
void restore_coefficients(std::span<Real> values, const GridHierarchy &hier,
                          std::size_t level, const TileConfig &cfg = {},
                          const TilePlan *plan = nullptr) {
  hier.require_level(level);
  if (values.size() != hier.num_nodes(level))
    throw ShapeError("level " + std::to_string(level) + " expects " +
                     std::to_string(hier.num_nodes(level)) + " values, got " +
                     std::to_string(values.size()));
  const TilePlan p = plan ? *plan : default_tile_plan(hier.ndims());
  gpk_sweep(values.data(), hier, level, true, cfg, p);
}

// Expected extents of the mass-trans input when applying along `dim` at
// `level`: dims below `dim` are already reduced to their coarse extents.
inline Shape masstrans_input_shape(const GridHierarchy &hier,
                                   std::size_t level, std::size_t dim) {
  Shape s(hier.ndims());
  for (std::size_t d = 0; d < s.size(); ++d)
    s[d] = d < dim ? hier.extent(d, level - 1) : hier.extent(d, level);
  return s;
}

// Merged mass-trans application along one dimension, out of place. The
// output is the input reduced to the kept (coarse) positions along `dim`,
// holding R*(M*input) fiber-wise. For dim 0 the input is the full level
// array in vec(C) form: nodes kept at level l-1 read as zero, and with
// `fused_copy` the coefficient values are extracted into `coef_out` (class
// order) during the same pass.
template <typename Real>
NdBuffer<Real> masstrans_apply(const NdBuffer<Real> &in,
                               const GridHierarchy &hier, std::size_t level,
                               std::size_t dim, bool fused_copy = false,
                               std::vector<Real> *coef_out = nullptr) {
  hier.require_level(level);
  const int nd = hier.ndims();
  if (dim >= static_cast<std::size_t>(nd))
    throw ShapeError("dimension " + std::to_string(dim) + " out of range");
  if (fused_copy && dim != 0)
    throw InvalidFusion("coefficient copy can only fuse with dimension 0");
  const Shape expect = masstrans_input_shape(hier, level, dim);
  if (in.shape != expect)
    throw ShapeError("mass-trans input extents do not match level " +
                     std::to_string(level) + " along dim " +
                     std::to_string(dim));

  const std::size_t n = hier.extent(dim, level);
  const std::size_t m = hier.extent(dim, level - 1);
  Shape out_shape = expect;
  out_shape[dim] = m;
  NdBuffer<Real> out(out_shape);
  if (m == n) { // dimension does not refine at this level: identity transfer
    out.data = in.data;
    return out;
  }

  std::vector<Real> h(hier.dims[dim].h[level].begin(),
                      hier.dims[dim].h[level].end());
  std::vector<Real> r(hier.dims[dim].r[level].begin(),
                      hier.dims[dim].r[level].end());

  ClassLayout cls;
  if (fused_copy) {
    cls = make_class_layout(hier, level);
    if (coef_out)
      coef_out->assign(cls.total, Real(0));
  }

  const Shape lshape = hier.level_shape(level);
  std::vector<Real> fiber(n), result(m);
  FiberIndexer rows(expect, in.strides, dim);
  FiberIndexer out_rows(out_shape, out.strides, dim);
  std::vector<std::size_t> row_pos(nd, 0);
  for (std::size_t k = 0; k < rows.count(); ++k) {
    {
      std::size_t t = k;
      for (int d = 0; d < nd; ++d) {
        if (static_cast<std::size_t>(d) == dim)
          continue;
        row_pos[d] = t % expect[d];
        t /= expect[d];
      }
    }
    const std::size_t base = rows.base(k);
    if (dim == 0) {
      // vec(C) semantics: a node kept at level l-1 contributes zero
      bool row_fine = false;
      for (int d = 1; d < nd; ++d)
        if (!is_coarse_pos(row_pos[d], lshape[d]))
          row_fine = true;
      for (std::size_t j = 0; j < n; ++j) {
        const Real v = in.data[base + j * in.strides[0]];
        const bool j_fine = !is_coarse_pos(j, n);
        fiber[j] = (row_fine || j_fine) ? v : Real(0);
        if (fused_copy && coef_out && (row_fine || j_fine)) {
          std::size_t p[kMaxDims];
          p[0] = j;
          for (int d = 1; d < nd; ++d)
            p[d] = row_pos[d];
          (*coef_out)[class_slot(cls, lshape, p)] = v;
        }
      }
    } else {
      for (std::size_t j = 0; j < n; ++j)
        fiber[j] = in.data[base + j * in.strides[dim]];
    }
    detail::masstrans_fiber(fiber.data(), result.data(), h.data(), r.data(),
                            n);
    const std::size_t obase = out_rows.base(k);
    for (std::size_t i = 0; i < m; ++i)
      out.data[obase + i * out.strides[dim]] = result[i];
  }
  return out;
}

// Batched Thomas solve along one dimension of the level-(l-1) lattice:
// every fiber of f along `dim` is replaced by the solution z of M z = f,
// with M the level-(l-1) mass matrix of that dimension.
template <typename Real>
void solve_correction(NdBuffer<Real> &f, const GridHierarchy &hier,
                      std::size_t level, std::size_t dim) {
  hier.require_level(level);
  const TridiagonalOperator<Real> op =
      TridiagonalOperator<Real>::build(hier, level - 1, dim);
  solve_correction(f, op, hier, level, dim);
}

template <typename Real>
void solve_correction(NdBuffer<Real> &f, const TridiagonalOperator<Real> &op,
                      const GridHierarchy &hier, std::size_t level,
                      std::size_t dim) {
  hier.require_level(level);
  if (f.shape != hier.level_shape(level - 1))
    throw ShapeError("correction solve expects the level-" +
                     std::to_string(level - 1) + " lattice");
  if (!hier.coarsens(dim, level))
    return; // identity transfer, no correction contribution along this dim
  const std::size_t m = f.shape[dim];
  assert(op.n() == m);
  std::vector<Real> fiber(m);
  FiberIndexer rows(f.shape, f.strides, dim);
  for (std::size_t k = 0; k < rows.count(); ++k) {
    const std::size_t base = rows.base(k);
    for (std::size_t i = 0; i < m; ++i)
      fiber[i] = f.data[base + i * f.strides[dim]];
    detail::thomas_fiber(fiber.data(), op);
    for (std::size_t i = 0; i < m; ++i)
      f.data[base + i * f.strides[dim]] = fiber[i];
  }
}

// values += sign * z, elementwise on the kept-node lattice.
template <typename Real>
void apply_correction(std::span<Real> values, std::span<const Real> z,
                      int sign) {
  if (values.size() != z.size())
    throw ShapeError("correction length " + std::to_string(z.size()) +
                     " does not match " + std::to_string(values.size()) +
                     " nodes");
  if (sign >= 0)
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] += z[i];
  else
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] -= z[i];
}

} // namespace mgr

#endif
