#include "mgr/grid.hpp"

#include <cmath>

namespace mgr {

std::vector<double> uniform_coords(std::size_t n) {
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i)
    c[i] = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
  return c;
}

void validate_grid_geometry(const Shape &shape,
                            const std::vector<std::vector<double>> &coords,
                            std::size_t min_extent) {
  if (shape.empty() || shape.size() > kMaxDims)
    throw InvalidGrid("grid must have 1.." + std::to_string(kMaxDims) +
                      " dimensions, got " + std::to_string(shape.size()));
  if (coords.size() != shape.size())
    throw InvalidGrid("coordinate arrays do not match dimension count");
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] < min_extent)
      throw InvalidGrid("dimension " + std::to_string(d) + " has " +
                        std::to_string(shape[d]) + " nodes; need at least " +
                        std::to_string(min_extent));
    if (coords[d].size() != shape[d])
      throw InvalidGrid("coordinates of dimension " + std::to_string(d) +
                        " do not match its extent");
    for (std::size_t i = 0; i + 1 < coords[d].size(); ++i)
      if (!(coords[d][i] < coords[d][i + 1]))
        throw InvalidGrid("coordinates of dimension " + std::to_string(d) +
                          " are not strictly increasing at index " +
                          std::to_string(i));
  }
}

namespace {

DimLevels build_dim_levels(std::size_t n, const std::vector<double> &coords,
                           std::size_t levels) {
  DimLevels dl;
  dl.idx.resize(levels + 1);
  dl.h.resize(levels + 1);
  dl.r.resize(levels + 1);

  dl.idx[levels].resize(n);
  for (std::size_t i = 0; i < n; ++i)
    dl.idx[levels][i] = i;
  for (std::size_t l = levels; l-- > 0;) {
    const auto &fine = dl.idx[l + 1];
    std::vector<std::size_t> coarse;
    coarse.reserve(coarse_extent(fine.size()));
    for (std::size_t p = 0; p < fine.size(); p += 2)
      coarse.push_back(fine[p]);
    if (coarse.back() != fine.back())
      coarse.push_back(fine.back());
    dl.idx[l] = std::move(coarse);
  }
  for (std::size_t l = 0; l <= levels; ++l) {
    const auto &ids = dl.idx[l];
    auto &h = dl.h[l];
    auto &r = dl.r[l];
    h.resize(ids.size() - 1);
    for (std::size_t i = 0; i + 1 < ids.size(); ++i)
      h[i] = coords[ids[i + 1]] - coords[ids[i]];
    if (h.size() >= 2) {
      r.resize(h.size() - 1);
      for (std::size_t i = 0; i + 1 < h.size(); ++i)
        r[i] = h[i] / (h[i] + h[i + 1]);
    }
  }
  return dl;
}

} // namespace

GridHierarchy build_hierarchy(const Shape &shape,
                              const std::vector<std::vector<double>> &coords,
                              std::optional<std::size_t> max_levels,
                              std::size_t min_extent) {
  validate_grid_geometry(shape, coords, min_extent);

  // Full depth: every second node down to a 2-node-per-dimension coarsest
  // level for (2^k)+1 extents. Dimensions that cannot refine (extent 2,
  // permitted only on internal paths) do not constrain the depth.
  std::size_t levels = 0;
  bool any = false;
  for (std::size_t e : shape) {
    if (e < 3)
      continue;
    const std::size_t depth =
        static_cast<std::size_t>(std::floor(std::log2(double(e - 1))));
    levels = any ? std::min(levels, depth) : depth;
    any = true;
  }
  if (!any)
    throw InvalidGrid("no dimension has at least 3 nodes");
  if (max_levels) {
    if (*max_levels < 1)
      throw InvalidLevel("level count must be at least 1");
    levels = std::min(levels, *max_levels);
  }

  GridHierarchy hier;
  hier.levels = levels;
  hier.shape = shape;
  hier.dims.reserve(shape.size());
  for (std::size_t d = 0; d < shape.size(); ++d)
    hier.dims.push_back(build_dim_levels(shape[d], coords[d], levels));
  return hier;
}

NodePartition node_partition(const GridHierarchy &hier, std::size_t level) {
  hier.require_level(level);
  const int nd = hier.ndims();
  const auto full_strides = make_strides(hier.shape);
  const Shape lshape = hier.level_shape(level);

  NodePartition part;
  std::vector<std::size_t> pos(nd, 0);
  const std::size_t total = num_elements(lshape);
  for (std::size_t k = 0; k < total; ++k) {
    std::size_t lin = 0;
    bool coarse = true;
    for (int d = 0; d < nd; ++d) {
      lin += hier.dims[d].idx[level][pos[d]] * full_strides[d];
      coarse = coarse && is_coarse_pos(pos[d], lshape[d]);
    }
    (coarse ? part.coarse : part.coefficient).push_back(lin);
    for (int d = 0; d < nd; ++d) {
      if (++pos[d] < lshape[d])
        break;
      pos[d] = 0;
    }
  }
  return part;
}

ClassLayout make_class_layout(const GridHierarchy &hier, std::size_t level) {
  hier.require_level(level);
  const int nd = hier.ndims();
  const Shape lshape = hier.level_shape(level);

  ClassLayout layout;
  layout.level = level;
  const std::size_t nmasks = std::size_t(1) << nd;
  layout.type_base.assign(nmasks, 0);
  layout.type_extents.assign(nmasks, {});
  std::size_t off = 0;
  for (std::size_t mask = 1; mask < nmasks; ++mask) {
    std::vector<std::size_t> ext(nd);
    std::size_t count = 1;
    for (int d = 0; d < nd; ++d) {
      const std::size_t n = lshape[d];
      ext[d] = (mask >> d) & 1 ? n - coarse_extent(n) : coarse_extent(n);
      count *= ext[d];
    }
    layout.type_base[mask] = off;
    layout.type_extents[mask] = std::move(ext);
    off += count;
  }
  layout.total = off;
  return layout;
}

LayoutMap make_layout_map(const GridHierarchy &hier, std::size_t level) {
  hier.require_level(level);
  const int nd = hier.ndims();
  const Shape lshape = hier.level_shape(level);
  const auto lstrides = make_strides(lshape);
  const std::size_t total = num_elements(lshape);

  LayoutMap map;
  map.perm.resize(total);
  map.inv.resize(total);

  // Coarse block: level-(l-1) nodes in their packed row-major order.
  const Shape cshape = hier.level_shape(level - 1);
  std::size_t k = 0;
  std::vector<std::size_t> pos(nd, 0);
  for (std::size_t c = 0; c < num_elements(cshape); ++c) {
    std::size_t off = 0;
    for (int d = 0; d < nd; ++d)
      off += coarse_pos(pos[d], lshape[d]) * lstrides[d];
    map.perm[k++] = off;
    for (int d = 0; d < nd; ++d) {
      if (++pos[d] < cshape[d])
        break;
      pos[d] = 0;
    }
  }

  // Coefficient block in class order.
  const ClassLayout cls = make_class_layout(hier, level);
  const std::size_t coarse_count = num_elements(cshape);
  for (std::size_t mask = 1; mask < cls.type_base.size(); ++mask) {
    const auto &ext = cls.type_extents[mask];
    const std::size_t count = num_elements(ext);
    std::vector<std::size_t> w(nd, 0);
    for (std::size_t c = 0; c < count; ++c) {
      std::size_t off = 0;
      for (int d = 0; d < nd; ++d) {
        const std::size_t p = (mask >> d) & 1
                                  ? 2 * w[d] + 1
                                  : coarse_pos(w[d], lshape[d]);
        off += p * lstrides[d];
      }
      map.perm[coarse_count + cls.type_base[mask] + c] = off;
      for (int d = 0; d < nd; ++d) {
        if (++w[d] < ext[d])
          break;
        w[d] = 0;
      }
    }
  }

  for (std::size_t i = 0; i < total; ++i)
    map.inv[map.perm[i]] = i;
  return map;
}

} // namespace mgr
