#ifndef MGR_GRID_HPP
#define MGR_GRID_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgr/errors.hpp"
#include "mgr/ndarray.hpp"

namespace mgr {

// N-D structured grid: values on a tensor product of strictly increasing
// per-dimension coordinates. Row-major storage, dimension 0 fastest-varying.
template <typename Real> struct TensorGrid {
  Shape shape;
  std::vector<std::vector<double>> coords;
  std::vector<Real> values;

  int ndims() const { return static_cast<int>(shape.size()); }
  std::size_t size() const { return num_elements(shape); }
};

std::vector<double> uniform_coords(std::size_t n);

void validate_grid_geometry(const Shape &shape,
                            const std::vector<std::vector<double>> &coords,
                            std::size_t min_extent);

template <typename Real>
TensorGrid<Real> make_grid(Shape shape, std::vector<Real> values,
                           std::vector<std::vector<double>> coords = {},
                           std::size_t min_extent = 3) {
  if (coords.empty()) {
    coords.reserve(shape.size());
    for (std::size_t e : shape)
      coords.push_back(uniform_coords(e));
  }
  validate_grid_geometry(shape, coords, min_extent);
  if (values.size() != num_elements(shape))
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match grid of " +
                     std::to_string(num_elements(shape)) + " nodes");
  return TensorGrid<Real>{std::move(shape), std::move(coords),
                          std::move(values)};
}

template <typename Real> double value_range(const TensorGrid<Real> &g) {
  auto [lo, hi] = std::minmax_element(g.values.begin(), g.values.end());
  return static_cast<double>(*hi) - static_cast<double>(*lo);
}

// Per-dimension view of the nested level index sets and derived geometry.
struct DimLevels {
  // idx[l]: grid indices along this dimension present at level l, ascending.
  // idx[L] covers the whole dimension; idx[l-1] is evens-of-idx[l] plus the
  // last entry, so both endpoints survive at every level.
  std::vector<std::vector<std::size_t>> idx;
  // Level spacings h[l][i] = x(idx[l][i+1]) - x(idx[l][i]).
  std::vector<std::vector<double>> h;
  // Ratios r[l][i] = h[l][i] / (h[l][i] + h[l][i+1]).
  std::vector<std::vector<double>> r;

  std::size_t extent(std::size_t l) const { return idx[l].size(); }
};

// Position (not grid-index) helpers within a level-l lattice of extent n.
// Coarse positions are the even ones plus the last; fine positions are the
// odd ones below the last.
inline bool is_coarse_pos(std::size_t p, std::size_t n) {
  return p % 2 == 0 || p == n - 1;
}
inline std::size_t coarse_extent(std::size_t n) { return n / 2 + 1; }
inline std::size_t coarse_rank(std::size_t p) {
  return p % 2 == 0 ? p / 2 : p / 2 + 1; // odd only for the final node
}
inline std::size_t fine_rank(std::size_t p) { return (p - 1) / 2; }
// Position of the k-th coarse node in the finer lattice.
inline std::size_t coarse_pos(std::size_t k, std::size_t n) {
  return std::min(2 * k, n - 1);
}

struct GridHierarchy {
  std::size_t levels = 0; // L: finest level index; level 0 is coarsest
  Shape shape;            // finest-level extents
  std::vector<DimLevels> dims;

  int ndims() const { return static_cast<int>(shape.size()); }
  std::size_t extent(std::size_t d, std::size_t l) const {
    return dims[d].extent(l);
  }
  Shape level_shape(std::size_t l) const {
    Shape s(shape.size());
    for (std::size_t d = 0; d < s.size(); ++d)
      s[d] = extent(d, l);
    return s;
  }
  std::size_t num_nodes(std::size_t l) const {
    return num_elements(level_shape(l));
  }
  // Whether dimension d refines between level l-1 and l.
  bool coarsens(std::size_t d, std::size_t l) const {
    return extent(d, l - 1) < extent(d, l);
  }
  void require_level(std::size_t l, std::size_t lo = 1) const {
    if (l < lo || l > levels)
      throw InvalidLevel("level " + std::to_string(l) + " outside [" +
                         std::to_string(lo) + ", " + std::to_string(levels) +
                         "]");
  }
};

GridHierarchy build_hierarchy(const Shape &shape,
                              const std::vector<std::vector<double>> &coords,
                              std::optional<std::size_t> max_levels = {},
                              std::size_t min_extent = 3);

template <typename Real>
GridHierarchy build_hierarchy(const TensorGrid<Real> &g,
                              std::optional<std::size_t> max_levels = {}) {
  return build_hierarchy(g.shape, g.coords, max_levels);
}

// Full-grid linear indices (natural order) of level-l nodes, split into the
// nodes kept at level l-1 and the coefficient nodes of level l.
struct NodePartition {
  std::vector<std::size_t> coarse;
  std::vector<std::size_t> coefficient;
};
NodePartition node_partition(const GridHierarchy &hier, std::size_t level);

// Ordering of the coefficient class of one level: node types (bitmask of
// fine dimensions, dim 0 = bit 0) ascending, row-major positions within a
// type, dim 0 fastest. Class slot = base[type] + row-major within-type index.
struct ClassLayout {
  std::size_t level = 0;
  std::size_t total = 0;
  std::vector<std::size_t> type_base;                 // indexed by mask
  std::vector<std::vector<std::size_t>> type_extents; // per mask, per dim
};
ClassLayout make_class_layout(const GridHierarchy &hier, std::size_t level);

// Class slot of a coefficient node given its lattice positions at the
// layout's level. The node must be fine along at least one dimension.
inline std::size_t class_slot(const ClassLayout &cls, const Shape &lshape,
                              const std::size_t *pos) {
  unsigned mask = 0;
  const std::size_t nd = lshape.size();
  for (std::size_t d = 0; d < nd; ++d)
    if (!is_coarse_pos(pos[d], lshape[d]))
      mask |= 1u << d;
  std::size_t idx = 0, mult = 1;
  for (std::size_t d = 0; d < nd; ++d) {
    const std::size_t w =
        (mask >> d) & 1 ? fine_rank(pos[d]) : coarse_rank(pos[d]);
    idx += w * mult;
    mult *= cls.type_extents[mask][d];
  }
  return cls.type_base[mask] + idx;
}

// Bijection between the natural (row-major) order of a level-l array and the
// coarse-first hierarchical order: [level-(l-1) nodes, natural packed order]
// then [coefficient nodes in class order].
struct LayoutMap {
  std::vector<std::size_t> perm; // hierarchical slot -> natural offset
  std::vector<std::size_t> inv;  // natural offset -> hierarchical slot
};
LayoutMap make_layout_map(const GridHierarchy &hier, std::size_t level);

enum class ReorderDirection { to_hierarchical, to_natural };

template <typename Real>
std::vector<Real> reorder(std::span<const Real> values,
                          const GridHierarchy &hier, std::size_t level,
                          ReorderDirection dir) {
  hier.require_level(level);
  const LayoutMap map = make_layout_map(hier, level);
  if (values.size() != map.perm.size())
    throw ShapeError("reorder input has " + std::to_string(values.size()) +
                     " values; level " + std::to_string(level) + " has " +
                     std::to_string(map.perm.size()) + " nodes");
  std::vector<Real> out(values.size());
  if (dir == ReorderDirection::to_hierarchical) {
    for (std::size_t k = 0; k < out.size(); ++k)
      out[k] = values[map.perm[k]];
  } else {
    for (std::size_t k = 0; k < out.size(); ++k)
      out[map.perm[k]] = values[k];
  }
  return out;
}

namespace detail {
// One tridiagonal mass row sweep: out = M * in with
//   M[i][i]   = 2*(h[i-1] + h[i])   (missing boundary spacings drop out)
//   M[i][i+1] = M[i+1][i] = h[i].
template <typename Real, typename Weight>
void mass_fiber(const Real *in, Real *out, const Weight *h, std::size_t n) {
  if (n == 1) { // degenerate, unused by the hierarchy (extents >= 2)
    out[0] = in[0];
    return;
  }
  out[0] = Real(2 * h[0]) * in[0] + Real(h[0]) * in[1];
  for (std::size_t i = 1; i + 1 < n; ++i)
    out[i] = Real(h[i - 1]) * in[i - 1] +
             Real(2 * (h[i - 1] + h[i])) * in[i] + Real(h[i]) * in[i + 1];
  out[n - 1] =
      Real(h[n - 2]) * in[n - 2] + Real(2 * h[n - 2]) * in[n - 1];
}
} // namespace detail

// sqrt(v^T (M_0 x M_1 x ... ) v) with the finest-level per-dimension mass
// matrices. Accumulates in double; reporting-grade, deterministic order.
template <typename Real> double weighted_l2_norm(const TensorGrid<Real> &g) {
  std::vector<double> w(g.values.begin(), g.values.end());
  std::vector<double> scratch_in, scratch_out;
  const auto strides = make_strides(g.shape);
  for (std::size_t d = 0; d < g.shape.size(); ++d) {
    const std::size_t n = g.shape[d];
    std::vector<double> h(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i)
      h[i] = g.coords[d][i + 1] - g.coords[d][i];
    scratch_in.resize(n);
    scratch_out.resize(n);
    FiberIndexer fibers(g.shape, strides, d);
    for (std::size_t k = 0; k < fibers.count(); ++k) {
      const std::size_t base = fibers.base(k);
      for (std::size_t i = 0; i < n; ++i)
        scratch_in[i] = w[base + i * strides[d]];
      detail::mass_fiber(scratch_in.data(), scratch_out.data(), h.data(), n);
      for (std::size_t i = 0; i < n; ++i)
        w[base + i * strides[d]] = scratch_out[i];
    }
  }
  double dot = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    dot += w[i] * static_cast<double>(g.values[i]);
  return std::sqrt(std::max(dot, 0.0));
}

} // namespace mgr

#endif
