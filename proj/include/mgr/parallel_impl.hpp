#ifndef MGR_PARALLEL_IMPL_HPP
#define MGR_PARALLEL_IMPL_HPP

// Implementation of the cooperative multi-worker engine. Workers are threads
// owning disjoint partitions; all sharing goes through the keyed channel.
// Every worker computes the same values a serial run would: halos carry the
// exact neighbor values, and the pipelined solves execute the same
// recurrences in the same order.

#include <chrono>

namespace mgr {

namespace detail {

template <typename Real> struct ClassFragment {
  std::size_t level = 0; // 0 = coarsest nodal class
  unsigned mask = 0;     // node type; 0 for the nodal class
  Shape rank_lo, rank_hi;
  std::vector<Real> payload;
};

template <typename Real> struct CoopShared {
  const CoopGeometry *geo = nullptr;
  const TensorGrid<Real> *grid = nullptr;
  const CoopOptions *opt = nullptr;
  Channel<Real> channel;
  AbortableBarrier barrier;
  std::mutex frag_mu;
  std::vector<ClassFragment<Real>> fragments;
  std::mutex stats_mu;
  std::map<std::string, CommPhaseStats> stats;
  std::atomic<bool> failed{false};
  std::mutex failure_mu;
  std::string failure;

  explicit CoopShared(int workers) : barrier(workers) {}

  void add_stat(const std::string &phase, std::uint64_t msgs,
                std::uint64_t elems, std::uint64_t local, double secs) {
    std::lock_guard<std::mutex> lk(stats_mu);
    auto &s = stats[phase];
    s.messages += msgs;
    s.elements += elems;
    s.local_elements += local;
    s.seconds += secs;
  }
};

template <typename Real> struct CoopBlock {
  int id = 0;
  Shape plo, phi, ext;
  std::vector<std::size_t> lstr;
  std::vector<Real> a, w;

  bool empty() const {
    for (std::size_t e : ext)
      if (e == 0)
        return true;
    return false;
  }
  std::size_t local_off(const std::size_t *gpos) const {
    std::size_t off = 0;
    for (std::size_t d = 0; d < ext.size(); ++d)
      off += (gpos[d] - plo[d]) * lstr[d];
    return off;
  }
  bool contains(const std::size_t *gpos) const {
    for (std::size_t d = 0; d < ext.size(); ++d)
      if (gpos[d] < plo[d] || gpos[d] >= phi[d])
        return false;
    return true;
  }
};

// Row-major enumeration of a position box, dim 0 fastest. Dims below
// `reduced_below` visit only kept (coarse) positions.
template <typename Fn>
void enumerate_box(const Shape &lo, const Shape &hi, const Shape &lshape,
                   std::size_t reduced_below, Fn &&fn) {
  const std::size_t nd = lo.size();
  std::vector<std::vector<std::size_t>> axis(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    for (std::size_t p = lo[d]; p < hi[d]; ++p)
      if (d >= reduced_below || is_coarse_pos(p, lshape[d]))
        axis[d].push_back(p);
    if (axis[d].empty())
      return;
  }
  std::vector<std::size_t> at(nd, 0);
  std::size_t p[kMaxDims];
  for (;;) {
    for (std::size_t d = 0; d < nd; ++d)
      p[d] = axis[d][at[d]];
    fn(p);
    std::size_t d = 0;
    for (; d < nd; ++d) {
      if (++at[d] < axis[d].size())
        break;
      at[d] = 0;
    }
    if (d == nd)
      break;
  }
}

template <typename Real> class CoopWorker {
public:
  CoopWorker(int worker, CoopShared<Real> &sh)
      : w_(worker), sh_(sh), geo_(*sh.geo), hier_(geo_.hier),
        nd_(hier_.shape.size()), L_(hier_.levels) {}

  void run() {
    init_blocks();
    for (std::size_t l = L_; l >= 1; --l) {
      begin_level(l);
      phase_coefficient();
      for (std::size_t d = 0; d < nd_; ++d)
        phase_masstrans(d);
      for (std::size_t d = 0; d < nd_; ++d)
        phase_solve(d);
      phase_apply();
    }
    gather_nodal_class();
  }

private:
  void enter_phase(const char *phase) {
    if (sh_.failed.load())
      throw WorkerFailure("peer worker failed");
    if (sh_.opt->fault_injector)
      sh_.opt->fault_injector(w_, phase, level_);
  }
  void sync() {
    sh_.barrier.arrive_and_wait([&] { return sh_.failed.load(); });
    if (sh_.failed.load())
      throw WorkerFailure("peer worker failed");
  }

  void init_blocks() {
    const auto gstr = make_strides(hier_.shape);
    for (std::size_t b = 0; b < geo_.parts.size(); ++b) {
      if (geo_.parts[b].worker != w_)
        continue;
      CoopBlock<Real> blk;
      blk.id = static_cast<int>(b);
      blk.plo = geo_.plo[b][L_];
      blk.phi = geo_.phi[b][L_];
      set_extents(blk);
      blk.a.resize(num_elements(blk.ext));
      enumerate_box(blk.plo, blk.phi, hier_.shape, 0,
                    [&](const std::size_t *p) {
                      std::size_t g = 0;
                      for (std::size_t d = 0; d < nd_; ++d)
                        g += p[d] * gstr[d];
                      blk.a[blk.local_off(p)] = sh_.grid->values[g];
                    });
      blocks_.push_back(std::move(blk));
    }
  }

  static void set_extents(CoopBlock<Real> &blk) {
    const std::size_t nd = blk.plo.size();
    blk.ext.resize(nd);
    for (std::size_t d = 0; d < nd; ++d)
      blk.ext[d] = blk.phi[d] > blk.plo[d] ? blk.phi[d] - blk.plo[d] : 0;
    blk.lstr = make_strides(blk.ext);
  }

  void begin_level(std::size_t l) {
    level_ = l;
    lshape_ = hier_.level_shape(l);
    cshape_ = hier_.level_shape(l - 1);
    for (auto &blk : blocks_) {
      blk.plo = geo_.plo[blk.id][l];
      blk.phi = geo_.phi[blk.id][l];
      set_extents(blk);
      blk.w.assign(num_elements(blk.ext), Real(0));
    }
  }

  int owner(int block) const { return geo_.parts[block].worker; }

  CoopBlock<Real> &block_by_id(int id) {
    for (auto &b : blocks_)
      if (b.id == id)
        return b;
    throw WorkerFailure("internal: block not owned");
  }

  // Sends and receives one phase's halo transfers; received values land in
  // the position-keyed halo map. `read(blk, gpos)` serves outgoing payloads.
  template <typename ReadFn>
  void exchange(const std::vector<HaloTransfer> &transfers,
                const std::string &keybase, std::size_t reduced_below,
                ReadFn &&read, const char *stat_phase) {
    halo_.clear();
    const auto t0 = std::chrono::steady_clock::now();
    std::uint64_t msgs = 0, elems = 0, local = 0;
    for (const auto &t : transfers) {
      if (owner(t.from_block) != w_)
        continue;
      CoopBlock<Real> &src = block_by_id(t.from_block);
      std::vector<Real> payload;
      enumerate_box(t.lo, t.hi, lshape_, reduced_below,
                    [&](const std::size_t *p) {
                      payload.push_back(read(src, p));
                    });
      const std::string key = keybase + "/" + std::to_string(t.from_block) +
                              ">" + std::to_string(t.to_block);
      if (owner(t.to_block) == w_) {
        local += payload.size();
        store_halo(t, reduced_below, payload);
      } else {
        ++msgs;
        elems += payload.size();
        sh_.channel.send(key, std::move(payload));
      }
    }
    for (const auto &t : transfers) {
      if (owner(t.to_block) != w_ || owner(t.from_block) == w_)
        continue;
      const std::string key = keybase + "/" + std::to_string(t.from_block) +
                              ">" + std::to_string(t.to_block);
      store_halo(t, reduced_below, sh_.channel.recv(key));
    }
    sh_.add_stat(stat_phase, msgs, elems, local,
                 std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t0)
                     .count());
  }

  void store_halo(const HaloTransfer &t, std::size_t reduced_below,
                  const std::vector<Real> &payload) {
    std::size_t i = 0;
    enumerate_box(t.lo, t.hi, lshape_, reduced_below,
                  [&](const std::size_t *p) {
                    halo_[pos_key(p, nd_)] = payload[i++];
                  });
  }

  void phase_coefficient() {
    enter_phase("coefficient");
    exchange(plan_halo(geo_, level_, {}, 1), key_base("gpk"), 0,
             [&](const CoopBlock<Real> &blk, const std::size_t *p) {
               return blk.a[blk.local_off(p)];
             },
             "coefficient");
    for (auto &blk : blocks_) {
      if (blk.empty())
        continue;
      auto at = [&](const std::size_t *p) -> Real {
        return blk.contains(p) ? blk.a[blk.local_off(p)]
                               : halo_.at(pos_key(p, nd_));
      };
      enumerate_box(blk.plo, blk.phi, lshape_, 0, [&](const std::size_t *p) {
        unsigned mask = 0;
        for (std::size_t d = 0; d < nd_; ++d)
          if (!is_coarse_pos(p[d], lshape_[d]))
            mask |= 1u << d;
        if (!mask)
          return;
        const Real interp =
            interpolate_node<Real>(at, p, mask, hier_, level_);
        blk.a[blk.local_off(p)] -= interp;
      });
    }
    sync();
  }

  void phase_masstrans(std::size_t d) {
    enter_phase("masstrans");
    const bool reduce = hier_.coarsens(d, level_);
    if (!reduce && d != 0) { // identity transfer, nothing stored yet either
      sync();
      return;
    }
    const std::size_t n = lshape_[d];
    std::vector<Real> h(hier_.dims[d].h[level_].begin(),
                        hier_.dims[d].h[level_].end());
    std::vector<Real> r(hier_.dims[d].r[level_].begin(),
                        hier_.dims[d].r[level_].end());

    auto masked = [&](const CoopBlock<Real> &blk,
                      const std::size_t *p) -> Real {
      for (std::size_t k = 0; k < nd_; ++k)
        if (!is_coarse_pos(p[k], lshape_[k]))
          return blk.a[blk.local_off(p)];
      return Real(0);
    };

    if (geo_.is_split(d)) {
      if (d == 0)
        exchange(plan_halo(geo_, level_, d, 2), key_base("lpk", d), 0, masked,
                 "masstrans");
      else
        exchange(plan_halo(geo_, level_, d, 2), key_base("lpk", d), d,
                 [&](const CoopBlock<Real> &blk, const std::size_t *p) {
                   return blk.w[blk.local_off(p)];
                 },
                 "masstrans");
    } else {
      halo_.clear();
    }

    for (auto &blk : blocks_) {
      if (blk.empty())
        continue;
      if (d == 0)
        extract_class_fragments(blk);
      const auto crange = geo_.coarse_rank_range(blk.id, level_, d);
      const std::size_t clo = crange.first, chi = crange.second;
      if (!reduce) { // copy pass: materialize vec(C) into the workspace
        enumerate_box(blk.plo, blk.phi, lshape_, 0,
                      [&](const std::size_t *p) {
                        blk.w[blk.local_off(p)] = masked(blk, p);
                      });
        continue;
      }
      if (clo >= chi)
        continue;
      std::vector<Real> out(chi - clo);
      std::size_t p[kMaxDims];
      for_each_coop_row(blk, d, [&](const std::size_t *row) {
        for (std::size_t k = 0; k < nd_; ++k)
          p[k] = row[k];
        auto in = [&](std::size_t j) -> Real {
          p[d] = j;
          if (blk.contains(p))
            return d == 0 ? masked(blk, p) : blk.w[blk.local_off(p)];
          return halo_.at(pos_key(p, nd_));
        };
        masstrans_window(in, out.data(), h.data(), r.data(), n, clo, chi);
        for (std::size_t i = clo; i < chi; ++i) {
          p[d] = geo_.coarse_positions[level_][d][i];
          blk.w[blk.local_off(p)] = out[i - clo];
        }
      });
    }
    sync();
  }

  // Rows of a dim-d sweep owned by one block: kept positions along dims < d,
  // all positions along dims > d, fixed 0 along d (caller overwrites).
  template <typename Fn>
  void for_each_coop_row(const CoopBlock<Real> &blk, std::size_t d, Fn &&fn) {
    std::vector<std::vector<std::size_t>> axis(nd_);
    for (std::size_t k = 0; k < nd_; ++k) {
      if (k == d) {
        axis[k] = {0};
        continue;
      }
      if (k < d) {
        auto [rlo, rhi] = geo_.coarse_rank_range(blk.id, level_, k);
        for (std::size_t i = rlo; i < rhi; ++i)
          axis[k].push_back(geo_.coarse_positions[level_][k][i]);
      } else {
        for (std::size_t p = blk.plo[k]; p < blk.phi[k]; ++p)
          axis[k].push_back(p);
      }
      if (axis[k].empty())
        return;
    }
    std::vector<std::size_t> at(nd_, 0);
    std::size_t row[kMaxDims];
    for (;;) {
      for (std::size_t k = 0; k < nd_; ++k)
        row[k] = axis[k][at[k]];
      fn(row);
      std::size_t k = 0;
      for (; k < nd_; ++k) {
        if (++at[k] < axis[k].size())
          break;
        at[k] = 0;
      }
      if (k == nd_)
        break;
    }
  }

  // Rows of the solve along d: kept positions along every other dim.
  template <typename Fn>
  bool solve_rows(const CoopBlock<Real> &blk, std::size_t d, Fn &&fn) {
    std::vector<std::vector<std::size_t>> axis(nd_);
    for (std::size_t k = 0; k < nd_; ++k) {
      if (k == d) {
        axis[k] = {0};
        continue;
      }
      auto [rlo, rhi] = geo_.coarse_rank_range(blk.id, level_, k);
      for (std::size_t i = rlo; i < rhi; ++i)
        axis[k].push_back(geo_.coarse_positions[level_][k][i]);
      if (axis[k].empty())
        return false;
    }
    std::vector<std::size_t> at(nd_, 0);
    std::size_t row[kMaxDims];
    std::size_t row_index = 0;
    for (;;) {
      for (std::size_t k = 0; k < nd_; ++k)
        row[k] = axis[k][at[k]];
      fn(row, row_index++);
      std::size_t k = 0;
      for (; k < nd_; ++k) {
        if (++at[k] < axis[k].size())
          break;
        at[k] = 0;
      }
      if (k == nd_)
        break;
    }
    return true;
  }

  std::size_t count_solve_rows(const CoopBlock<Real> &blk, std::size_t d) {
    std::size_t rows = 1;
    for (std::size_t k = 0; k < nd_; ++k) {
      if (k == d)
        continue;
      auto [rlo, rhi] = geo_.coarse_rank_range(blk.id, level_, k);
      rows *= rhi > rlo ? rhi - rlo : 0;
    }
    return rows;
  }

  void phase_solve(std::size_t d) {
    enter_phase("solve");
    if (!hier_.coarsens(d, level_)) {
      sync();
      return;
    }
    const TridiagonalOperator<Real> op =
        TridiagonalOperator<Real>::build(hier_, level_ - 1, d);
    const std::size_t m = cshape_[d];
    const auto &cp = geo_.coarse_positions[level_][d];

    if (!geo_.is_split(d)) {
      std::vector<Real> fiber(m);
      std::size_t p[kMaxDims];
      for (auto &blk : blocks_) {
        if (blk.empty())
          continue;
        solve_rows(blk, d, [&](const std::size_t *row, std::size_t) {
          for (std::size_t k = 0; k < nd_; ++k)
            p[k] = row[k];
          for (std::size_t i = 0; i < m; ++i) {
            p[d] = cp[i];
            fiber[i] = blk.w[blk.local_off(p)];
          }
          thomas_fiber(fiber.data(), op);
          for (std::size_t i = 0; i < m; ++i) {
            p[d] = cp[i];
            blk.w[blk.local_off(p)] = fiber[i];
          }
        });
      }
      sync();
      return;
    }

    // Pipelined Thomas across the block chain: one boundary layer per
    // message, forward then backward, identical recurrences to the serial
    // sweep.
    const auto chains = plan_solve_chains(geo_, level_, d);
    const auto t0 = std::chrono::steady_clock::now();
    std::uint64_t msgs = 0, elems = 0, local = 0;
    auto ship = [&](int from, int to, const char *leg,
                    std::vector<Real> payload) {
      const std::string key = key_base("ipk", d) + "/" + leg + "/" +
                              std::to_string(from) + ">" + std::to_string(to);
      if (owner(to) == w_ && owner(from) == w_) {
        local += payload.size();
        sh_.channel.send(key, std::move(payload)); // self-delivery via mailbox
      } else {
        ++msgs;
        elems += payload.size();
        sh_.channel.send(key, std::move(payload));
      }
    };
    auto fetch = [&](int from, int to, const char *leg) {
      const std::string key = key_base("ipk", d) + "/" + leg + "/" +
                              std::to_string(from) + ">" + std::to_string(to);
      return sh_.channel.recv(key);
    };

    for (const auto &chain : chains) {
      for (std::size_t ci = 0; ci < chain.blocks.size(); ++ci) {
        const int id = chain.blocks[ci];
        if (owner(id) != w_)
          continue;
        CoopBlock<Real> &blk = block_by_id(id);
        const auto crange = geo_.coarse_rank_range(blk.id, level_, d);
        const std::size_t clo = crange.first, chi = crange.second;
        const std::size_t rows = count_solve_rows(blk, d);
        std::vector<Real> boundary(rows, Real(0));
        if (ci > 0)
          boundary = fetch(chain.blocks[ci - 1], id, "fwd");
        std::vector<Real> last(rows);
        std::size_t p[kMaxDims];
        solve_rows(blk, d, [&](const std::size_t *row, std::size_t ri) {
          for (std::size_t k = 0; k < nd_; ++k)
            p[k] = row[k];
          Real prev = boundary[ri];
          for (std::size_t i = clo; i < chi; ++i) {
            p[d] = cp[i];
            Real &v = blk.w[blk.local_off(p)];
            if (i > 0)
              v += op.fwd[i] * prev;
            prev = v;
          }
          last[ri] = prev;
        });
        if (ci + 1 < chain.blocks.size())
          ship(id, chain.blocks[ci + 1], "fwd", std::move(last));
      }
      for (std::size_t ci = chain.blocks.size(); ci-- > 0;) {
        const int id = chain.blocks[ci];
        if (owner(id) != w_)
          continue;
        CoopBlock<Real> &blk = block_by_id(id);
        const auto crange = geo_.coarse_rank_range(blk.id, level_, d);
        const std::size_t clo = crange.first, chi = crange.second;
        const std::size_t rows = count_solve_rows(blk, d);
        std::vector<Real> boundary(rows, Real(0));
        if (ci + 1 < chain.blocks.size())
          boundary = fetch(chain.blocks[ci + 1], id, "bwd");
        std::vector<Real> first(rows);
        std::size_t p[kMaxDims];
        solve_rows(blk, d, [&](const std::size_t *row, std::size_t ri) {
          for (std::size_t k = 0; k < nd_; ++k)
            p[k] = row[k];
          Real next = boundary[ri];
          for (std::size_t i = chi; i-- > clo;) {
            p[d] = cp[i];
            Real &v = blk.w[blk.local_off(p)];
            if (i == m - 1)
              v *= op.inv_pivot[i];
            else
              v = (v - op.h[i] * next) * op.inv_pivot[i];
            next = v;
          }
          first[ri] = next;
        });
        if (ci > 0)
          ship(id, chain.blocks[ci - 1], "bwd", std::move(first));
      }
    }
    sh_.add_stat("solve", msgs, elems, local,
                 std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t0)
                     .count());
    sync();
  }

  void phase_apply() {
    enter_phase("apply");
    for (auto &blk : blocks_) {
      Shape nlo = geo_.plo[blk.id][level_ - 1];
      Shape nhi = geo_.phi[blk.id][level_ - 1];
      Shape next_ext(nd_);
      for (std::size_t dd = 0; dd < nd_; ++dd)
        next_ext[dd] = nhi[dd] > nlo[dd] ? nhi[dd] - nlo[dd] : 0;
      std::vector<Real> next(num_elements(next_ext));
      const auto nstr = make_strides(next_ext);
      std::size_t p[kMaxDims];
      std::vector<std::vector<std::size_t>> axis(nd_);
      bool empty = false;
      for (std::size_t k = 0; k < nd_; ++k) {
        auto [rlo, rhi] = geo_.coarse_rank_range(blk.id, level_, k);
        for (std::size_t i = rlo; i < rhi; ++i)
          axis[k].push_back(i);
        if (axis[k].empty())
          empty = true;
      }
      if (!empty) {
        std::vector<std::size_t> at(nd_, 0);
        for (;;) {
          std::size_t noff = 0;
          for (std::size_t k = 0; k < nd_; ++k) {
            const std::size_t rank = axis[k][at[k]];
            p[k] = geo_.coarse_positions[level_][k][rank];
            noff += (rank - nlo[k]) * nstr[k];
          }
          const std::size_t loff = blk.local_off(p);
          next[noff] = blk.a[loff] + blk.w[loff];
          std::size_t k = 0;
          for (; k < nd_; ++k) {
            if (++at[k] < axis[k].size())
              break;
            at[k] = 0;
          }
          if (k == nd_)
            break;
        }
      }
      blk.a = std::move(next);
      blk.plo = nlo;
      blk.phi = nhi;
      set_extents(blk);
      blk.w.clear();
    }
    sync();
  }

  void extract_class_fragments(CoopBlock<Real> &blk) {
    const auto t0 = std::chrono::steady_clock::now();
    std::uint64_t elems = 0;
    const std::size_t nmasks = std::size_t(1) << nd_;
    for (unsigned mask = 1; mask < nmasks; ++mask) {
      ClassFragment<Real> frag;
      frag.level = level_;
      frag.mask = mask;
      frag.rank_lo.resize(nd_);
      frag.rank_hi.resize(nd_);
      bool empty = false;
      for (std::size_t k = 0; k < nd_; ++k) {
        const auto [rlo, rhi] = (mask >> k) & 1
                                    ? geo_.fine_rank_range(blk.id, level_, k)
                                    : geo_.coarse_rank_range(blk.id, level_,
                                                             k);
        frag.rank_lo[k] = rlo;
        frag.rank_hi[k] = rhi;
        if (rlo >= rhi)
          empty = true;
      }
      if (empty)
        continue;
      std::vector<std::size_t> at(frag.rank_lo);
      std::size_t p[kMaxDims];
      for (;;) {
        for (std::size_t k = 0; k < nd_; ++k)
          p[k] = (mask >> k) & 1
                     ? 2 * at[k] + 1
                     : geo_.coarse_positions[level_][k][at[k]];
        frag.payload.push_back(blk.a[blk.local_off(p)]);
        std::size_t k = 0;
        for (; k < nd_; ++k) {
          if (++at[k] < frag.rank_hi[k])
            break;
          at[k] = frag.rank_lo[k];
        }
        if (k == nd_)
          break;
      }
      elems += frag.payload.size();
      std::lock_guard<std::mutex> lk(sh_.frag_mu);
      sh_.fragments.push_back(std::move(frag));
    }
    sh_.add_stat("gather", 0, elems, 0,
                 std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t0)
                     .count());
  }

  void gather_nodal_class() {
    std::uint64_t elems = 0;
    for (auto &blk : blocks_) {
      if (blk.empty())
        continue;
      ClassFragment<Real> frag;
      frag.level = 0;
      frag.mask = 0;
      frag.rank_lo = blk.plo;
      frag.rank_hi = blk.phi;
      frag.payload = blk.a;
      elems += frag.payload.size();
      std::lock_guard<std::mutex> lk(sh_.frag_mu);
      sh_.fragments.push_back(std::move(frag));
    }
    sh_.add_stat("gather", 0, elems, 0, 0);
  }

  std::string key_base(const char *phase, std::size_t d = 0) const {
    return std::string(phase) + "/" + std::to_string(level_) + "/" +
           std::to_string(d);
  }

  int w_;
  CoopShared<Real> &sh_;
  const CoopGeometry &geo_;
  const GridHierarchy &hier_;
  std::size_t nd_, L_;
  std::vector<CoopBlock<Real>> blocks_;
  std::unordered_map<std::uint64_t, Real> halo_;
  std::size_t level_ = 0;
  Shape lshape_, cshape_;
};

} // namespace detail

template <typename Real>
RefactoredData<Real> cooperative_decompose(const TensorGrid<Real> &grid,
                                           int workers,
                                           const CoopOptions &opt) {
  if (workers < 1)
    throw TooManyWorkers("worker count must be positive");
  const GridHierarchy hier =
      build_hierarchy(grid.shape, grid.coords, opt.levels, 2);
  const auto parts = make_partitions(grid.shape, workers, opt.scheme);
  const auto split = split_dims_of(grid.shape, opt.scheme, workers);
  const detail::CoopGeometry geo =
      detail::make_coop_geometry(hier, parts, split, workers);

  if (workers == 1 && !opt.fault_injector) {
    RefactorOptions ro;
    ro.levels = opt.levels;
    RefactoredData<Real> out = decompose(grid, ro);
    if (opt.report) {
      opt.report->workers = 1;
      opt.report->scheme = opt.scheme;
      opt.report->total_grid_elements = grid.size();
      opt.report->idle = detail::compute_idle_records(geo);
    }
    return out;
  }

  detail::CoopShared<Real> shared(workers);
  shared.geo = &geo;
  shared.grid = &grid;
  shared.opt = &opt;

  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        detail::CoopWorker<Real>(w, shared).run();
      } catch (const std::exception &e) {
        {
          std::lock_guard<std::mutex> lk(shared.failure_mu);
          if (!shared.failed.load())
            shared.failure = "worker " + std::to_string(w) + ": " + e.what();
        }
        shared.failed.store(true);
        shared.channel.abort(e.what());
        shared.barrier.release();
      }
    });
  }
  for (auto &t : threads)
    t.join();
  if (shared.failed.load())
    throw WorkerFailure(shared.failure);

  RefactoredData<Real> out;
  out.shape = grid.shape;
  out.coords = grid.coords;
  out.levels = hier.levels;
  out.classes.resize(hier.levels + 1);
  out.classes[0].assign(hier.num_nodes(0), Real(0));
  for (std::size_t l = 1; l <= hier.levels; ++l)
    out.classes[l].assign(hier.num_nodes(l) - hier.num_nodes(l - 1), Real(0));

  for (const auto &frag : shared.fragments) {
    if (frag.mask == 0) {
      const Shape shape0 = hier.level_shape(0);
      const auto str0 = make_strides(shape0);
      std::size_t i = 0;
      std::vector<std::size_t> at(frag.rank_lo);
      for (;;) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < at.size(); ++k)
          off += at[k] * str0[k];
        out.classes[0][off] = frag.payload[i++];
        std::size_t k = 0;
        for (; k < at.size(); ++k) {
          if (++at[k] < frag.rank_hi[k])
            break;
          at[k] = frag.rank_lo[k];
        }
        if (k == at.size())
          break;
      }
    } else {
      const ClassLayout cls = make_class_layout(hier, frag.level);
      const auto &ext = cls.type_extents[frag.mask];
      std::size_t i = 0;
      std::vector<std::size_t> at(frag.rank_lo);
      for (;;) {
        std::size_t idx = 0, mult = 1;
        for (std::size_t k = 0; k < at.size(); ++k) {
          idx += at[k] * mult;
          mult *= ext[k];
        }
        out.classes[frag.level][cls.type_base[frag.mask] + idx] =
            frag.payload[i++];
        std::size_t k = 0;
        for (; k < at.size(); ++k) {
          if (++at[k] < frag.rank_hi[k])
            break;
          at[k] = frag.rank_lo[k];
        }
        if (k == at.size())
          break;
      }
    }
  }

  if (opt.report) {
    opt.report->workers = workers;
    opt.report->scheme = opt.scheme;
    opt.report->total_grid_elements = grid.size();
    opt.report->idle = detail::compute_idle_records(geo);
    std::lock_guard<std::mutex> lk(shared.stats_mu);
    opt.report->phases = shared.stats;
  }
  return out;
}

template <typename Real>
std::vector<RefactoredData<Real>>
embarrassing_decompose(const std::vector<TensorGrid<Real>> &blocks,
                       int workers, const RefactorOptions &opt) {
  std::vector<RefactoredData<Real>> out(blocks.size());
  if (blocks.empty())
    return out;
  const int pool = std::max(1, std::min<int>(workers, blocks.size()));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  std::string err;
  std::vector<std::thread> threads;
  for (int w = 0; w < pool; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= blocks.size() || failed.load())
          return;
        try {
          RefactorOptions o = opt;
          o.stats = nullptr; // pass counters are not thread-shared
          out[i] = decompose(blocks[i], o);
        } catch (const std::exception &e) {
          std::lock_guard<std::mutex> lk(err_mu);
          err = e.what();
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto &t : threads)
    t.join();
  if (failed.load())
    throw WorkerFailure(err);
  return out;
}

template <typename Real>
std::vector<RefactoredData<Real>>
grouped_decompose(const std::vector<TensorGrid<Real>> &blocks, int num_groups,
                  int group_size, PartitionScheme scheme) {
  if (num_groups < 1 || group_size < 1)
    throw TooManyWorkers("group shape must be positive");
  std::vector<RefactoredData<Real>> out(blocks.size());
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  std::string err;
  std::vector<std::thread> threads;
  const int groups = std::max(1, std::min<int>(num_groups, blocks.size()));
  for (int g = 0; g < groups; ++g) {
    threads.emplace_back([&, g] {
      for (std::size_t i = g; i < blocks.size();
           i += static_cast<std::size_t>(groups)) {
        if (failed.load())
          return;
        try {
          CoopOptions opt;
          opt.scheme = scheme;
          out[i] = cooperative_decompose(blocks[i], group_size, opt);
        } catch (const std::exception &e) {
          std::lock_guard<std::mutex> lk(err_mu);
          err = e.what();
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto &t : threads)
    t.join();
  if (failed.load())
    throw WorkerFailure(err);
  return out;
}

} // namespace mgr

#endif
