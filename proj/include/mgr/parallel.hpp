#ifndef MGR_PARALLEL_HPP
#define MGR_PARALLEL_HPP

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "mgr/refactor.hpp"

namespace mgr {

enum class PartitionScheme { block, shifted_round_robin };

inline const char *to_string(PartitionScheme s) {
  return s == PartitionScheme::block ? "block" : "shifted_round_robin";
}

// One worker-owned box of the global grid. Interiors are disjoint and the
// boxes cover the grid. block_coord indexes the box along the split
// dimensions (block: one split dim; shifted round-robin: two).
struct Partition {
  int worker = 0;
  Shape lo, hi; // global grid index range [lo, hi) per dim
  std::array<std::size_t, 2> block_coord{0, 0};
};

std::vector<Partition> make_partitions(const Shape &shape, int workers,
                                       PartitionScheme scheme);
std::vector<std::size_t> split_dims_of(const Shape &shape,
                                       PartitionScheme scheme, int workers);

struct CommPhaseStats {
  std::uint64_t messages = 0;
  std::uint64_t elements = 0;       // sent between distinct workers
  std::uint64_t local_elements = 0; // between blocks of the same worker
  double seconds = 0;
};

// Idle workers per pipeline stage of one ordered sweep.
struct IdleRecord {
  std::size_t level = 0;
  std::size_t dim = 0;
  std::vector<int> idle_per_stage;
};

struct CommReport {
  int workers = 0;
  PartitionScheme scheme = PartitionScheme::block;
  std::map<std::string, CommPhaseStats> phases;
  std::vector<IdleRecord> idle;
  std::uint64_t total_grid_elements = 0;

  std::string to_json() const;
};

struct CoopOptions {
  std::optional<std::size_t> levels;
  PartitionScheme scheme = PartitionScheme::block;
  CommReport *report = nullptr;
  // Test hook: invoked at every phase entry; may throw to simulate a fault.
  std::function<void(int worker, const std::string &phase, std::size_t level)>
      fault_injector;
};

namespace detail {

// Blocking in-memory mailbox keyed by message tag. Payloads are copies; a
// receive blocks until the matching send arrives or the run aborts.
template <typename Real> class Channel {
public:
  void send(const std::string &key, std::vector<Real> payload) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      box_[key].push_back(std::move(payload));
    }
    cv_.notify_all();
  }

  std::vector<Real> recv(const std::string &key) {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [&] {
      if (aborted_)
        return true;
      auto it = box_.find(key);
      return it != box_.end() && !it->second.empty();
    });
    if (aborted_)
      throw WorkerFailure("run aborted: " + abort_reason_);
    auto it = box_.find(key);
    std::vector<Real> payload = std::move(it->second.front());
    it->second.erase(it->second.begin());
    return payload;
  }

  void abort(const std::string &reason) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (!aborted_) {
        aborted_ = true;
        abort_reason_ = reason;
      }
    }
    cv_.notify_all();
  }
  bool aborted() const {
    std::lock_guard<std::mutex> lk(mu_);
    return aborted_;
  }
  std::string abort_reason() const {
    std::lock_guard<std::mutex> lk(mu_);
    return abort_reason_;
  }

private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::unordered_map<std::string, std::vector<std::vector<Real>>> box_;
  bool aborted_ = false;
  std::string abort_reason_;
};

// Phase barrier that releases immediately when the run aborts.
class AbortableBarrier {
public:
  explicit AbortableBarrier(int n) : n_(n) {}
  template <typename Aborted> void arrive_and_wait(Aborted &&aborted) {
    std::unique_lock<std::mutex> lk(mu_);
    const std::uint64_t gen = gen_;
    if (++count_ == n_) {
      count_ = 0;
      ++gen_;
      cv_.notify_all();
      return;
    }
    cv_.wait(lk, [&] { return gen_ != gen || aborted(); });
  }
  void release() { cv_.notify_all(); }

private:
  std::mutex mu_;
  std::condition_variable cv_;
  int n_;
  int count_ = 0;
  std::uint64_t gen_ = 0;
};

// A planned halo message: `box` is a position-space box at one level; the
// payload enumerates the box row-major (dim 0 fastest), restricted to the
// kept positions along dims below `reduced_below`.
struct HaloTransfer {
  int from_block = 0, to_block = 0;
  Shape lo, hi;
};

// Geometry shared by all workers of one cooperative run.
struct CoopGeometry {
  GridHierarchy hier;
  std::vector<Partition> parts;
  std::vector<std::size_t> split_dims;
  int workers = 0;

  // prange[b][l][d] = [lo, hi) position range of block b at level l.
  std::vector<std::vector<Shape>> plo, phi;
  // global kept-position list per (level, dim)
  std::vector<std::vector<std::vector<std::size_t>>> coarse_positions;

  bool is_split(std::size_t d) const {
    for (std::size_t s : split_dims)
      if (s == d)
        return true;
    return false;
  }
  // kept-rank range [lo, hi) of block b at level l along dim d
  std::pair<std::size_t, std::size_t> coarse_rank_range(std::size_t b,
                                                        std::size_t l,
                                                        std::size_t d) const {
    const auto &cp = coarse_positions[l][d];
    const std::size_t lo = std::lower_bound(cp.begin(), cp.end(),
                                            plo[b][l][d]) -
                           cp.begin();
    const std::size_t hi = std::lower_bound(cp.begin(), cp.end(),
                                            phi[b][l][d]) -
                           cp.begin();
    return {lo, hi};
  }
  // fine positions are the odd ones below the last; rank r sits at 2r+1
  std::pair<std::size_t, std::size_t> fine_rank_range(std::size_t b,
                                                      std::size_t l,
                                                      std::size_t d) const {
    const std::size_t n = hier.extent(d, l);
    const std::size_t count = n - coarse_extent(n);
    const std::size_t lo = std::min(plo[b][l][d] / 2, count);
    const std::size_t hi = std::min(phi[b][l][d] / 2, count);
    return {lo, std::max(lo, hi)};
  }
};

CoopGeometry make_coop_geometry(const GridHierarchy &hier,
                                const std::vector<Partition> &parts,
                                const std::vector<std::size_t> &split_dims,
                                int workers);

// Intersections of each block's halo need-box with the other blocks' owned
// boxes along (or around) the given level lattice. `reach` extends the need
// box; halo_dim limits the extension to one dimension (mass-trans/solve) or,
// when absent, to every split dimension (coefficient phase).
std::vector<HaloTransfer> plan_halo(const CoopGeometry &geo, std::size_t level,
                                    std::optional<std::size_t> halo_dim,
                                    std::size_t reach);

// Ordered chain of blocks with a nonempty kept segment along `dim` for each
// line of blocks (fixed block coords on the other split dims).
struct SolveChain {
  std::vector<int> blocks; // in sweep order
};
std::vector<SolveChain> plan_solve_chains(const CoopGeometry &geo,
                                          std::size_t level, std::size_t dim);

std::vector<IdleRecord> compute_idle_records(const CoopGeometry &geo);

inline std::uint64_t pos_key(const std::size_t *p, std::size_t nd) {
  std::uint64_t k = 0;
  for (std::size_t d = 0; d < nd; ++d)
    k |= std::uint64_t(p[d] & 0xffff) << (16 * d);
  return k;
}

} // namespace detail

template <typename Real>
RefactoredData<Real> cooperative_decompose(const TensorGrid<Real> &grid,
                                           int workers,
                                           const CoopOptions &opt = {});

// Independent per-block refactoring on a small worker pool.
template <typename Real>
std::vector<RefactoredData<Real>>
embarrassing_decompose(const std::vector<TensorGrid<Real>> &blocks,
                       int workers, const RefactorOptions &opt = {});

// K independent groups, S cooperating workers within each group; blocks are
// dealt round-robin to groups.
template <typename Real>
std::vector<RefactoredData<Real>>
grouped_decompose(const std::vector<TensorGrid<Real>> &blocks, int num_groups,
                  int group_size,
                  PartitionScheme scheme = PartitionScheme::block);

} // namespace mgr

#include "mgr/parallel_impl.hpp"

#endif
