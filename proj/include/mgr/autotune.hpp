#ifndef MGR_AUTOTUNE_HPP
#define MGR_AUTOTUNE_HPP

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mgr/errors.hpp"
#include "mgr/kernels.hpp"

namespace mgr {

enum class Kernel { GPK, LPK, IPK };

const char *to_string(Kernel k);

// Memory-transaction model of the executing device: S bytes move per
// transaction, L bytes per element, G is the ghost-segment extent of the
// iterative kernel (defaults to one transaction's worth of elements).
struct DeviceModel {
  std::size_t transaction_bytes = 32;     // S
  double peak_bandwidth = 5.0e10;         // bytes per second
  std::size_t element_bytes = 8;          // L: 4 or 8
  std::optional<std::size_t> ghost = {};  // G, default S/L

  double elements_per_transaction() const {
    return static_cast<double>(transaction_bytes) /
           static_cast<double>(element_bytes);
  }
  double ghost_extent() const {
    return ghost ? static_cast<double>(*ghost) : elements_per_transaction();
  }
  void validate() const;
};

// Predicted seconds for one kernel invocation on an N-per-dim input. Pure
// transaction counting: transaction-rounded tile footprints times tile
// counts times 2L bytes (read + write), divided by peak bandwidth.
double model_time(Kernel kernel, const TileConfig &cfg, std::size_t n,
                  const DeviceModel &dev);

struct RankedConfig {
  TileConfig config;
  double predicted_seconds = 0;
  int rank = 0; // 1 = fastest
};

struct ConfigRanking {
  std::vector<RankedConfig> entries; // ascending predicted time

  const TileConfig &best() const { return entries.front().config; }
  int rank_of(const TileConfig &cfg) const;
};

// Ascending predicted time; ties break on smaller B_x, then B_y, then B_z.
ConfigRanking rank_configs(Kernel kernel,
                           const std::vector<TileConfig> &candidates,
                           std::size_t n, const DeviceModel &dev);

// The seven stock thread-block-style configurations used for ranking tables.
std::vector<TileConfig> default_candidates();

// Persistent kernel->config choices, keyed by (kernel, N, element bytes).
class TuningCache {
public:
  std::optional<TileConfig> find(Kernel k, std::size_t n,
                                 std::size_t element_bytes) const;
  void store(Kernel k, std::size_t n, std::size_t element_bytes,
             const TileConfig &cfg);
  void load_file(const std::string &path);  // missing file is fine
  void save_file(const std::string &path) const;
  std::size_t size() const { return entries_.size(); }

private:
  std::map<std::string, TileConfig> entries_;
};

struct AutotuneResult {
  TileConfig config;
  bool measured = false; // false: model-only or cached decision
  std::string note;
};

using MeasureFn = std::function<double(const TileConfig &)>;

// Rank all candidates with the model, measure the estimated top_k with the
// callback (median of 3 runs after 1 warm-up) and return the empirically
// fastest. A failing measurement falls back to the model's first choice with
// a warning note. Decisions are cached per (kernel, N, element size).
AutotuneResult autotune(Kernel kernel,
                        const std::vector<TileConfig> &candidates,
                        std::size_t n, const DeviceModel &dev,
                        const MeasureFn &measure, int top_k = 3,
                        TuningCache *cache = nullptr);

} // namespace mgr

#endif
