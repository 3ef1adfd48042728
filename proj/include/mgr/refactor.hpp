#ifndef MGR_REFACTOR_HPP
#define MGR_REFACTOR_HPP

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mgr/grid.hpp"
#include "mgr/kernels.hpp"

namespace mgr {

// Progressive container: the coarsest nodal class plus one coefficient class
// per level, coarse to fine. Any prefix of classes reconstructs an
// approximation; all of them reconstruct the original to rounding.
template <typename Real> struct RefactoredData {
  Shape shape;
  std::vector<std::vector<double>> coords;
  std::size_t levels = 0;
  // classes[0]: nodal values on the coarsest lattice, packed row-major.
  // classes[l], l >= 1: level-l coefficients in class order.
  std::vector<std::vector<Real>> classes;

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto &c : classes)
      n += c.size();
    return n;
  }
};

struct ReconstructionReport {
  std::size_t classes_used = 0;
  double max_abs_error = 0;
  double rel_linf_error = 0; // max-abs over the reference value range
  double weighted_l2_error = 0;
  double elapsed_seconds = 0;
};

// Element-level traffic of one kernel phase, in elements read/written.
struct PhaseCounters {
  std::uint64_t in = 0, out = 0;
  std::uint64_t total() const { return in + out; }
};

struct LevelPassStats {
  std::size_t level = 0;
  std::uint64_t level_elements = 0;
  PhaseCounters coefficient; // interpolation sweep
  PhaseCounters fused_copy;  // coefficient copy fused into the dim-0 pass
  std::vector<PhaseCounters> masstrans; // per dimension
  std::vector<PhaseCounters> solve;     // per dimension, forward + backward
  PhaseCounters apply;                  // correction add + repack

  double total_passes() const {
    std::uint64_t t = coefficient.total() + fused_copy.total() + apply.total();
    for (const auto &c : masstrans)
      t += c.total();
    for (const auto &c : solve)
      t += c.total();
    return level_elements ? double(t) / double(level_elements) : 0.0;
  }
};

struct PassStats {
  std::vector<LevelPassStats> levels; // finest first
};

struct RefactorOptions {
  std::optional<std::size_t> levels;
  TileConfig tile{};
  std::size_t tile_budget = kDefaultTileBudget;
  PassStats *stats = nullptr;
};

// Per-phase tiling choice: three tiled dimensions (always including dim 0),
// remaining dimensions looped outside the tiles. When the active dimension is
// the last of a 4-D grid (the temporal one), the tiled set is {0, 1, active}
// and dim 2 is outer-looped.
struct TileSelection {
  TilePlan plan;
  TileConfig tile;
};

TileSelection select_tiling(std::size_t ndims, const Shape &shape,
                            std::size_t budget,
                            std::optional<std::size_t> active_dim = {},
                            TileConfig tile = {});

namespace detail {

// Offsets (element units) of the kept-node positions along one dimension of
// a level lattice.
inline std::vector<std::size_t> coarse_offsets(std::size_t n,
                                               std::size_t stride) {
  const std::size_t m = coarse_extent(n);
  std::vector<std::size_t> off(m);
  for (std::size_t i = 0; i < m; ++i)
    off[i] = coarse_pos(i, n) * stride;
  return off;
}

// Iterates the row space (all dims except `skip`) of a pass, in blocks taken
// from the tile plan. fn(row_rank) with row_rank[skip] == 0.
template <typename Fn>
void for_each_row(const Shape &row_extents, std::size_t skip,
                  const TileConfig &cfg, const TilePlan &plan, Fn &&fn) {
  Shape extents = row_extents;
  extents[skip] = 1;
  TileConfig block{1, 1, 1};
  TilePlan row_plan;
  for (std::size_t s = 0; s < plan.tiled.size(); ++s) {
    if (plan.tiled[s] == skip)
      continue;
    switch (row_plan.tiled.size()) {
    case 0:
      block.bx = cfg.extent(s);
      break;
    case 1:
      block.by = cfg.extent(s);
      break;
    default:
      block.bz = cfg.extent(s);
      break;
    }
    row_plan.tiled.push_back(plan.tiled[s]);
  }
  std::vector<std::size_t> rank(extents.size(), 0);
  for_each_tile(extents, row_plan, block,
                [&](const std::vector<std::size_t> &lo,
                    const std::vector<std::size_t> &hi) {
                  for (std::size_t d = 0; d < extents.size(); ++d)
                    rank[d] = lo[d];
                  for (;;) {
                    fn(rank);
                    std::size_t d = 0;
                    for (; d < extents.size(); ++d) {
                      if (++rank[d] < hi[d])
                        break;
                      rank[d] = lo[d];
                    }
                    if (d == extents.size())
                      break;
                  }
                });
}

// Level-by-level engine shared by decompose and recompose. Out-of-place
// intermediates live in one workspace sized like the finest level, addressed
// as the level-l lattice; kept-node subsets occupy the coarse slots.
template <typename Real> class RefactorEngine {
public:
  RefactorEngine(const GridHierarchy &hier, const RefactorOptions &opt)
      : hier_(hier), opt_(opt) {}

  // a: packed level-L values, consumed. Returns classes [0..L].
  std::vector<std::vector<Real>> decompose(std::vector<Real> a) {
    const std::size_t L = hier_.levels;
    std::vector<std::vector<Real>> classes(L + 1);
    w_.assign(hier_.num_nodes(L), Real(0));
    if (opt_.stats)
      opt_.stats->levels.clear();
    for (std::size_t l = L; l >= 1; --l) {
      begin_level(l);
      gpk(a.data(), l, false);
      classes[l].assign(hier_.num_nodes(l) - hier_.num_nodes(l - 1), Real(0));
      masstrans_dim0(a.data(), l, &classes[l], nullptr);
      for (std::size_t d = 1; d < dims(); ++d)
        masstrans_later(l, d);
      for (std::size_t d = 0; d < dims(); ++d)
        solve(l, d);
      apply_pack(a, l, +1);
      end_level();
    }
    a.resize(hier_.num_nodes(0));
    classes[0] = std::move(a);
    return classes;
  }

  // classes[0..L] with classes l > k treated as zero. Returns packed
  // finest-level values.
  std::vector<Real>
  recompose(const std::vector<std::vector<Real>> &classes, std::size_t k) {
    const std::size_t L = hier_.levels;
    std::vector<Real> a(hier_.num_nodes(L), Real(0));
    std::copy(classes[0].begin(), classes[0].end(), a.begin());
    w_.assign(hier_.num_nodes(L), Real(0));
    for (std::size_t l = 1; l <= L; ++l) {
      begin_level(l);
      const std::vector<Real> *cls = l <= k ? &classes[l] : nullptr;
      masstrans_dim0(nullptr, l, nullptr, cls);
      for (std::size_t d = 1; d < dims(); ++d)
        masstrans_later(l, d);
      for (std::size_t d = 0; d < dims(); ++d)
        solve(l, d);
      unapply_expand(a, l);
      scatter_class(a.data(), l, cls);
      gpk(a.data(), l, true);
      end_level();
    }
    return a;
  }

private:
  std::size_t dims() const { return hier_.shape.size(); }

  void begin_level(std::size_t l) {
    level_ = l;
    lshape_ = hier_.level_shape(l);
    lstrides_ = make_strides(lshape_);
    cshape_ = hier_.level_shape(l - 1);
    cls_layout_ = make_class_layout(hier_, l);
    coarse_off_.resize(dims());
    all_off_.resize(dims());
    for (std::size_t d = 0; d < dims(); ++d) {
      coarse_off_[d] = coarse_offsets(lshape_[d], lstrides_[d]);
      all_off_[d].resize(lshape_[d]);
      for (std::size_t j = 0; j < lshape_[d]; ++j)
        all_off_[d][j] = j * lstrides_[d];
    }
    if (opt_.stats) {
      stats_ = &opt_.stats->levels.emplace_back();
      stats_->level = l;
      stats_->level_elements = num_elements(lshape_);
      stats_->masstrans.resize(dims());
      stats_->solve.resize(dims());
    } else {
      stats_ = nullptr;
    }
  }
  void end_level() { stats_ = nullptr; }

  void gpk(Real *a, std::size_t l, bool inverse) {
    const TileSelection sel =
        select_tiling(dims(), lshape_, opt_.tile_budget, {}, opt_.tile);
    gpk_sweep(a, hier_, l, inverse, sel.tile, sel.plan);
    if (stats_) {
      stats_->coefficient.in += num_elements(lshape_);
      stats_->coefficient.out += num_elements(lshape_) - num_elements(cshape_);
    }
  }

  // Dim-0 pass. Decompose flavor (a != nullptr): reads the mixed level array
  // in vec(C) form (kept nodes as zero) and extracts the coefficient copy
  // into coef_out. Recompose flavor (a == nullptr): reads the stored class
  // (nullptr class = all-zero coefficients). Output goes to the workspace at
  // the dim-0 kept slots; when dim 0 does not refine the pass degenerates to
  // the plain copy into the workspace.
  void masstrans_dim0(const Real *a, std::size_t l, std::vector<Real> *coef_out,
                      const std::vector<Real> *cls) {
    const std::size_t n = lshape_[0];
    const std::size_t m = cshape_[0];
    const bool reduce = m < n;
    std::vector<Real> h(hier_.dims[0].h[l].begin(), hier_.dims[0].h[l].end());
    const auto &rd = hier_.dims[0].r[l];
    std::vector<Real> r(rd.begin(), rd.end());
    std::vector<Real> fiber(n), result(m);
    const TileSelection sel =
        select_tiling(dims(), lshape_, opt_.tile_budget, 0, opt_.tile);
    std::size_t pos[kMaxDims];
    for_each_row(lshape_, 0, sel.tile, sel.plan,
                 [&](const std::vector<std::size_t> &row) {
                   std::size_t base = 0;
                   bool row_fine = false;
                   for (std::size_t d = 1; d < dims(); ++d) {
                     base += row[d] * lstrides_[d];
                     pos[d] = row[d];
                     if (!is_coarse_pos(row[d], lshape_[d]))
                       row_fine = true;
                   }
                   for (std::size_t j = 0; j < n; ++j) {
                     const bool fine = row_fine || !is_coarse_pos(j, n);
                     pos[0] = j;
                     Real v;
                     if (a) {
                       v = fine ? a[base + j] : Real(0);
                       if (fine && coef_out)
                         (*coef_out)[class_slot(cls_layout_, lshape_, pos)] =
                             v;
                     } else {
                       v = fine && cls
                               ? (*cls)[class_slot(cls_layout_, lshape_, pos)]
                               : Real(0);
                     }
                     fiber[j] = v;
                   }
                   if (reduce) {
                     masstrans_fiber(fiber.data(), result.data(), h.data(),
                                     r.data(), n);
                     for (std::size_t i = 0; i < m; ++i)
                       w_[base + coarse_off_[0][i]] = result[i];
                   } else {
                     for (std::size_t j = 0; j < n; ++j)
                       w_[base + all_off_[0][j]] = fiber[j];
                   }
                 });
    if (stats_) {
      const std::uint64_t rows = num_elements(lshape_) / n;
      stats_->fused_copy.out += num_elements(lshape_) - num_elements(cshape_);
      if (reduce) {
        stats_->masstrans[0].in += rows * n;
        stats_->masstrans[0].out += rows * m;
      }
    }
  }

  void masstrans_later(std::size_t l, std::size_t d) {
    if (!hier_.coarsens(d, l))
      return;
    const std::size_t n = lshape_[d];
    const std::size_t m = cshape_[d];
    std::vector<Real> h(hier_.dims[d].h[l].begin(), hier_.dims[d].h[l].end());
    const auto &rd = hier_.dims[d].r[l];
    std::vector<Real> r(rd.begin(), rd.end());
    std::vector<Real> fiber(n), result(m);
    // dims below d are already reduced: rows run over their kept slots
    Shape row_ext(dims());
    for (std::size_t k = 0; k < dims(); ++k)
      row_ext[k] = k < d ? cshape_[k] : lshape_[k];
    const TileSelection sel =
        select_tiling(dims(), lshape_, opt_.tile_budget, d, opt_.tile);
    std::uint64_t rows_n = 0;
    for_each_row(row_ext, d, sel.tile, sel.plan,
                 [&](const std::vector<std::size_t> &row) {
                   std::size_t base = 0;
                   for (std::size_t k = 0; k < dims(); ++k) {
                     if (k == d)
                       continue;
                     base += k < d ? coarse_off_[k][row[k]]
                                   : all_off_[k][row[k]];
                   }
                   for (std::size_t j = 0; j < n; ++j)
                     fiber[j] = w_[base + all_off_[d][j]];
                   masstrans_fiber(fiber.data(), result.data(), h.data(),
                                   r.data(), n);
                   for (std::size_t i = 0; i < m; ++i)
                     w_[base + coarse_off_[d][i]] = result[i];
                   ++rows_n;
                 });
    if (stats_) {
      stats_->masstrans[d].in += rows_n * n;
      stats_->masstrans[d].out += rows_n * m;
    }
  }

  void solve(std::size_t l, std::size_t d) {
    if (!hier_.coarsens(d, l))
      return;
    const TridiagonalOperator<Real> op =
        TridiagonalOperator<Real>::build(hier_, l - 1, d);
    const std::size_t m = cshape_[d];
    std::vector<Real> fiber(m);
    const TileSelection sel =
        select_tiling(dims(), lshape_, opt_.tile_budget, d, opt_.tile);
    std::uint64_t rows_n = 0;
    for_each_row(cshape_, d, sel.tile, sel.plan,
                 [&](const std::vector<std::size_t> &row) {
                   std::size_t base = 0;
                   for (std::size_t k = 0; k < dims(); ++k)
                     if (k != d)
                       base += coarse_off_[k][row[k]];
                   for (std::size_t i = 0; i < m; ++i)
                     fiber[i] = w_[base + coarse_off_[d][i]];
                   thomas_fiber(fiber.data(), op);
                   for (std::size_t i = 0; i < m; ++i)
                     w_[base + coarse_off_[d][i]] = fiber[i];
                   ++rows_n;
                 });
    if (stats_) {
      stats_->solve[d].in += 2 * rows_n * m; // forward + backward
      stats_->solve[d].out += 2 * rows_n * m;
    }
  }

  // Decompose tail: kept-node value + correction, compacted into the packed
  // level-(l-1) array at the head of `a`. Packed offsets never exceed the
  // lattice offsets they read, so the forward sweep is in-place safe.
  void apply_pack(std::vector<Real> &a, std::size_t l, int sign) {
    (void)l;
    const std::size_t count = num_elements(cshape_);
    std::vector<std::size_t> rank(dims(), 0);
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t off = 0;
      for (std::size_t d = 0; d < dims(); ++d)
        off += coarse_off_[d][rank[d]];
      a[i] = sign >= 0 ? a[off] + w_[off] : a[off] - w_[off];
      for (std::size_t d = 0; d < dims(); ++d) {
        if (++rank[d] < cshape_[d])
          break;
        rank[d] = 0;
      }
    }
    if (stats_) {
      stats_->apply.in += 2 * count;
      stats_->apply.out += count;
    }
  }

  // Recompose counterpart: spread the packed level-(l-1) values onto the
  // level-l lattice slots while subtracting the recomputed correction.
  // Reverse order keeps the in-place expansion safe.
  void unapply_expand(std::vector<Real> &a, std::size_t l) {
    (void)l;
    const std::size_t count = num_elements(cshape_);
    std::vector<std::size_t> rank(dims());
    for (std::size_t i = count; i-- > 0;) {
      std::size_t t = i;
      std::size_t off = 0;
      for (std::size_t d = 0; d < dims(); ++d) {
        rank[d] = t % cshape_[d];
        t /= cshape_[d];
        off += coarse_off_[d][rank[d]];
      }
      a[off] = a[i] - w_[off];
    }
    if (stats_) {
      stats_->apply.in += 2 * count;
      stats_->apply.out += count;
    }
  }

  void scatter_class(Real *a, std::size_t l, const std::vector<Real> *cls) {
    (void)l;
    const std::size_t nmasks = std::size_t(1) << dims();
    for (std::size_t mask = 1; mask < nmasks; ++mask) {
      const auto &ext = cls_layout_.type_extents[mask];
      const std::size_t count = num_elements(ext);
      std::vector<std::size_t> wpos(dims(), 0);
      for (std::size_t c = 0; c < count; ++c) {
        std::size_t off = 0;
        for (std::size_t d = 0; d < dims(); ++d) {
          const std::size_t p = (mask >> d) & 1
                                    ? 2 * wpos[d] + 1
                                    : coarse_pos(wpos[d], lshape_[d]);
          off += p * lstrides_[d];
        }
        a[off] = cls ? (*cls)[cls_layout_.type_base[mask] + c] : Real(0);
        for (std::size_t d = 0; d < dims(); ++d) {
          if (++wpos[d] < ext[d])
            break;
          wpos[d] = 0;
        }
      }
    }
  }

  const GridHierarchy &hier_;
  RefactorOptions opt_;
  std::vector<Real> w_;
  std::size_t level_ = 0;
  Shape lshape_, cshape_;
  std::vector<std::size_t> lstrides_;
  ClassLayout cls_layout_;
  std::vector<std::vector<std::size_t>> coarse_off_, all_off_;
  LevelPassStats *stats_ = nullptr;
};

} // namespace detail

template <typename Real>
RefactoredData<Real> decompose(const TensorGrid<Real> &grid,
                               const RefactorOptions &opt = {}) {
  const GridHierarchy hier =
      build_hierarchy(grid.shape, grid.coords, opt.levels, 2);
  detail::RefactorEngine<Real> engine(hier, opt);
  RefactoredData<Real> out;
  out.shape = grid.shape;
  out.coords = grid.coords;
  out.levels = hier.levels;
  out.classes = engine.decompose(grid.values);
  return out;
}

template <typename Real>
TensorGrid<Real> recompose(const RefactoredData<Real> &r,
                           std::size_t classes_used,
                           const RefactorOptions &opt = {}) {
  if (classes_used > r.levels)
    throw InvalidLevel("requested " + std::to_string(classes_used) +
                       " classes; container has " + std::to_string(r.levels));
  for (std::size_t l = 0; l <= classes_used; ++l)
    if (l >= r.classes.size())
      throw MissingClass("class " + std::to_string(l) + " not loaded");
  const GridHierarchy hier = build_hierarchy(r.shape, r.coords,
                                             std::optional(r.levels), 2);
  RefactorOptions o = opt;
  o.levels = r.levels;
  detail::RefactorEngine<Real> engine(hier, o);
  TensorGrid<Real> g;
  g.shape = r.shape;
  g.coords = r.coords;
  g.values = engine.recompose(r.classes, classes_used);
  return g;
}

// Recompose and measure errors. With a reference grid the errors are against
// it; otherwise against the full-class reconstruction.
template <typename Real>
std::pair<TensorGrid<Real>, ReconstructionReport>
recompose_with_report(const RefactoredData<Real> &r, std::size_t classes_used,
                      const TensorGrid<Real> *reference = nullptr,
                      const RefactorOptions &opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  TensorGrid<Real> g = recompose(r, classes_used, opt);
  ReconstructionReport rep;
  rep.classes_used = classes_used;
  TensorGrid<Real> full;
  const TensorGrid<Real> *ref = reference;
  if (!ref) {
    // best reconstruction the container can offer (it may be a prefix read)
    const std::size_t best =
        std::min(r.levels, r.classes.empty() ? 0 : r.classes.size() - 1);
    full = classes_used == best ? g : recompose(r, best, opt);
    ref = &full;
  }
  double maxabs = 0;
  TensorGrid<Real> diff = g;
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const double d =
        static_cast<double>(g.values[i]) - static_cast<double>(ref->values[i]);
    diff.values[i] = Real(d);
    maxabs = std::max(maxabs, std::abs(d));
  }
  rep.max_abs_error = maxabs;
  const double range = value_range(*ref);
  rep.rel_linf_error = range > 0 ? maxabs / range : maxabs;
  rep.weighted_l2_error = weighted_l2_norm(diff);
  rep.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return {std::move(g), rep};
}

// Stack snapshots along a trailing temporal dimension and decompose; per
// level the spatial dimensions are processed before the temporal one, which
// the ascending dimension order provides. Two snapshots are allowed: a
// 2-extent temporal dimension simply never refines.
template <typename Real>
RefactoredData<Real>
decompose_spatiotemporal(const std::vector<TensorGrid<Real>> &snapshots,
                         const std::vector<double> &time_coords,
                         const RefactorOptions &opt = {}) {
  if (snapshots.size() < 2)
    throw ShapeError("need at least 2 snapshots");
  if (time_coords.size() != snapshots.size())
    throw ShapeError("time coordinate count does not match snapshots");
  const TensorGrid<Real> &first = snapshots.front();
  if (first.ndims() + 1 > kMaxDims)
    throw InvalidGrid("too many dimensions after stacking time");
  for (const auto &s : snapshots)
    if (s.shape != first.shape || s.coords != first.coords)
      throw ShapeError("snapshots must share shape and coordinates");

  Shape shape = first.shape;
  shape.push_back(snapshots.size());
  std::vector<std::vector<double>> coords = first.coords;
  coords.push_back(time_coords);
  std::vector<Real> values;
  values.reserve(num_elements(shape));
  for (const auto &s : snapshots)
    values.insert(values.end(), s.values.begin(), s.values.end());
  const TensorGrid<Real> stacked =
      make_grid(std::move(shape), std::move(values), std::move(coords), 2);
  return decompose(stacked, opt);
}

} // namespace mgr

#endif
