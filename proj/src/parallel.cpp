#include "mgr/parallel.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace mgr {

std::vector<std::size_t> split_dims_of(const Shape &shape,
                                       PartitionScheme scheme, int workers) {
  const std::size_t nd = shape.size();
  if (workers == 1)
    return {};
  if (scheme == PartitionScheme::block)
    return {nd - 1};
  if (nd < 2)
    throw ShapeError("shifted round-robin partitioning needs >= 2 dimensions");
  return {nd - 2, nd - 1};
}

namespace {

// Near-equal contiguous ranges; the remainder goes to the leading ranges.
std::vector<std::pair<std::size_t, std::size_t>> split_range(std::size_t n,
                                                             int parts) {
  std::vector<std::pair<std::size_t, std::size_t>> out(parts);
  const std::size_t base = n / parts, rem = n % parts;
  std::size_t at = 0;
  for (int i = 0; i < parts; ++i) {
    const std::size_t len = base + (static_cast<std::size_t>(i) < rem ? 1 : 0);
    out[i] = {at, at + len};
    at += len;
  }
  return out;
}

} // namespace

std::vector<Partition> make_partitions(const Shape &shape, int workers,
                                       PartitionScheme scheme) {
  if (workers < 1)
    throw TooManyWorkers("worker count must be positive");
  const std::size_t nd = shape.size();
  if (workers == 1) {
    Partition p;
    p.lo.assign(nd, 0);
    p.hi = shape;
    return {p};
  }
  const auto split = split_dims_of(shape, scheme, workers);
  for (std::size_t d : split)
    if (static_cast<std::size_t>(workers) > shape[d])
      throw TooManyWorkers("cannot split dimension " + std::to_string(d) +
                           " of extent " + std::to_string(shape[d]) +
                           " across " + std::to_string(workers) + " workers");

  std::vector<Partition> parts;
  if (scheme == PartitionScheme::block) {
    const auto ranges = split_range(shape[split[0]], workers);
    for (int w = 0; w < workers; ++w) {
      Partition p;
      p.worker = w;
      p.lo.assign(nd, 0);
      p.hi = shape;
      p.lo[split[0]] = ranges[w].first;
      p.hi[split[0]] = ranges[w].second;
      p.block_coord = {static_cast<std::size_t>(w), 0};
      parts.push_back(std::move(p));
    }
  } else {
    const auto ra = split_range(shape[split[0]], workers);
    const auto rb = split_range(shape[split[1]], workers);
    for (int a = 0; a < workers; ++a) {
      for (int b = 0; b < workers; ++b) {
        Partition p;
        p.worker = (a + b) % workers; // cyclic shift keeps every worker busy
        p.lo.assign(nd, 0);
        p.hi = shape;
        p.lo[split[0]] = ra[a].first;
        p.hi[split[0]] = ra[a].second;
        p.lo[split[1]] = rb[b].first;
        p.hi[split[1]] = rb[b].second;
        p.block_coord = {static_cast<std::size_t>(a),
                         static_cast<std::size_t>(b)};
        parts.push_back(std::move(p));
      }
    }
  }
  return parts;
}

namespace detail {

CoopGeometry make_coop_geometry(const GridHierarchy &hier,
                                const std::vector<Partition> &parts,
                                const std::vector<std::size_t> &split_dims,
                                int workers) {
  CoopGeometry geo;
  geo.hier = hier;
  geo.parts = parts;
  geo.split_dims = split_dims;
  geo.workers = workers;
  const std::size_t nd = hier.shape.size();
  const std::size_t L = hier.levels;

  geo.coarse_positions.assign(L + 1, {});
  for (std::size_t l = 0; l <= L; ++l) {
    geo.coarse_positions[l].resize(nd);
    for (std::size_t d = 0; d < nd; ++d) {
      const std::size_t n = hier.extent(d, l);
      const std::size_t m = coarse_extent(n);
      auto &cp = geo.coarse_positions[l][d];
      cp.resize(m);
      for (std::size_t i = 0; i < m; ++i)
        cp[i] = coarse_pos(i, n);
    }
  }

  geo.plo.assign(parts.size(), std::vector<Shape>(L + 1, Shape(nd)));
  geo.phi = geo.plo;
  for (std::size_t b = 0; b < parts.size(); ++b) {
    for (std::size_t l = 0; l <= L; ++l) {
      for (std::size_t d = 0; d < nd; ++d) {
        const auto &ids = hier.dims[d].idx[l];
        geo.plo[b][l][d] =
            std::lower_bound(ids.begin(), ids.end(), parts[b].lo[d]) -
            ids.begin();
        geo.phi[b][l][d] =
            std::lower_bound(ids.begin(), ids.end(), parts[b].hi[d]) -
            ids.begin();
      }
    }
  }
  return geo;
}

std::vector<HaloTransfer> plan_halo(const CoopGeometry &geo, std::size_t level,
                                    std::optional<std::size_t> halo_dim,
                                    std::size_t reach) {
  const std::size_t nd = geo.hier.shape.size();
  std::vector<HaloTransfer> out;
  for (std::size_t to = 0; to < geo.parts.size(); ++to) {
    Shape nlo(nd), nhi(nd);
    bool to_empty = false;
    for (std::size_t d = 0; d < nd; ++d) {
      nlo[d] = geo.plo[to][level][d];
      nhi[d] = geo.phi[to][level][d];
      if (nlo[d] >= nhi[d])
        to_empty = true;
      const bool expand = halo_dim ? d == *halo_dim : geo.is_split(d);
      if (expand) {
        nlo[d] = nlo[d] >= reach ? nlo[d] - reach : 0;
        nhi[d] = std::min(nhi[d] + reach, geo.hier.extent(d, level));
      }
    }
    if (to_empty)
      continue; // a block with no nodes at this level computes nothing
    for (std::size_t from = 0; from < geo.parts.size(); ++from) {
      if (from == to)
        continue;
      HaloTransfer t;
      t.from_block = static_cast<int>(from);
      t.to_block = static_cast<int>(to);
      t.lo.resize(nd);
      t.hi.resize(nd);
      bool empty = false;
      for (std::size_t d = 0; d < nd; ++d) {
        t.lo[d] = std::max(nlo[d], geo.plo[from][level][d]);
        t.hi[d] = std::min(nhi[d], geo.phi[from][level][d]);
        if (t.lo[d] >= t.hi[d])
          empty = true;
      }
      if (!empty)
        out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<SolveChain> plan_solve_chains(const CoopGeometry &geo,
                                          std::size_t level, std::size_t dim) {
  // Group blocks into lines: same block coordinate along the other split
  // dims. Order each line by position along `dim`; keep blocks that own a
  // nonempty kept segment and nonempty rows.
  std::map<std::size_t, std::vector<std::pair<std::size_t, int>>> lines;
  for (std::size_t b = 0; b < geo.parts.size(); ++b) {
    std::size_t line_key = 0;
    for (std::size_t s = 0; s < geo.split_dims.size(); ++s)
      if (geo.split_dims[s] != dim)
        line_key = line_key * geo.parts.size() + geo.parts[b].block_coord[s];
    auto [clo, chi] = geo.coarse_rank_range(b, level, dim);
    if (clo >= chi)
      continue;
    bool rows_ok = true;
    for (std::size_t d = 0; d < geo.hier.shape.size(); ++d) {
      if (d == dim)
        continue;
      auto [rlo, rhi] = geo.coarse_rank_range(b, level, d);
      if (rlo >= rhi)
        rows_ok = false;
    }
    if (!rows_ok)
      continue;
    lines[line_key].push_back({clo, static_cast<int>(b)});
  }
  std::vector<SolveChain> chains;
  for (auto &[key, vec] : lines) {
    (void)key;
    std::sort(vec.begin(), vec.end());
    SolveChain c;
    for (auto &[pos, b] : vec)
      c.blocks.push_back(b);
    chains.push_back(std::move(c));
  }
  return chains;
}

std::vector<IdleRecord> compute_idle_records(const CoopGeometry &geo) {
  std::vector<IdleRecord> records;
  const std::size_t L = geo.hier.levels;
  for (std::size_t l = L; l >= 1; --l) {
    for (std::size_t s = 0; s < geo.split_dims.size(); ++s) {
      const std::size_t d = geo.split_dims[s];
      if (!geo.hier.coarsens(d, l))
        continue;
      // Stages of the ordered sweep along d: block-grid index along d.
      std::size_t stages = 0;
      for (const auto &p : geo.parts)
        stages = std::max(stages, p.block_coord[s] + 1);
      IdleRecord rec;
      rec.level = l;
      rec.dim = d;
      rec.idle_per_stage.assign(stages, geo.workers);
      for (std::size_t stage = 0; stage < stages; ++stage) {
        std::set<int> active;
        for (std::size_t b = 0; b < geo.parts.size(); ++b) {
          if (geo.parts[b].block_coord[s] != stage)
            continue;
          auto [clo, chi] = geo.coarse_rank_range(b, l, d);
          if (clo >= chi)
            continue;
          bool rows_ok = true;
          for (std::size_t k = 0; k < geo.hier.shape.size(); ++k) {
            if (k == d)
              continue;
            auto [rlo, rhi] = geo.coarse_rank_range(b, l, k);
            if (rlo >= rhi)
              rows_ok = false;
          }
          if (rows_ok)
            active.insert(geo.parts[b].worker);
        }
        rec.idle_per_stage[stage] =
            geo.workers - static_cast<int>(active.size());
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

} // namespace detail

std::string CommReport::to_json() const {
  std::ostringstream os;
  os << "{\"workers\":" << workers << ",\"scheme\":\"" << to_string(scheme)
     << "\",\"grid_elements\":" << total_grid_elements << ",\"phases\":{";
  bool first = true;
  for (const auto &[name, st] : phases) {
    if (!first)
      os << ",";
    first = false;
    os << "\"" << name << "\":{\"messages\":" << st.messages
       << ",\"elements\":" << st.elements
       << ",\"local_elements\":" << st.local_elements
       << ",\"seconds\":" << st.seconds << "}";
  }
  os << "},\"idle\":[";
  first = true;
  for (const auto &rec : idle) {
    if (!first)
      os << ",";
    first = false;
    os << "{\"level\":" << rec.level << ",\"dim\":" << rec.dim
       << ",\"idle_per_stage\":[";
    for (std::size_t i = 0; i < rec.idle_per_stage.size(); ++i)
      os << (i ? "," : "") << rec.idle_per_stage[i];
    os << "]}";
  }
  os << "]}";
  return os.str();
}

} // namespace mgr
