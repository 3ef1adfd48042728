#include "mgr/refactor.hpp"

#include <algorithm>

namespace mgr {

TileSelection select_tiling(std::size_t ndims, const Shape &shape,
                            std::size_t budget,
                            std::optional<std::size_t> active_dim,
                            TileConfig tile) {
  (void)shape;
  TileSelection sel;
  auto used = [&](std::size_t d) {
    return std::find(sel.plan.tiled.begin(), sel.plan.tiled.end(), d) !=
           sel.plan.tiled.end();
  };
  sel.plan.tiled.push_back(0); // dim 0 keeps the unit-stride access pattern
  if (active_dim && *active_dim != 0 && *active_dim < ndims)
    sel.plan.tiled.push_back(*active_dim);
  for (std::size_t d = 1; d < ndims && sel.plan.tiled.size() < 3; ++d)
    if (!used(d))
      sel.plan.tiled.push_back(d);
  std::sort(sel.plan.tiled.begin(), sel.plan.tiled.end());
  for (std::size_t d = 0; d < ndims; ++d)
    if (!used(d))
      sel.plan.outer.push_back(d);
  sel.tile = clamp_to_budget(tile, budget);
  return sel;
}

} // namespace mgr
