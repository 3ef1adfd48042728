#include "mgr/autotune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mgr {

const char *to_string(Kernel k) {
  switch (k) {
  case Kernel::GPK:
    return "GPK";
  case Kernel::LPK:
    return "LPK";
  default:
    return "IPK";
  }
}

void DeviceModel::validate() const {
  if (element_bytes == 0 || transaction_bytes < element_bytes)
    throw InvalidBound("device model requires S >= L > 0");
  if (!(peak_bandwidth > 0))
    throw InvalidBound("peak bandwidth must be positive");
}

double model_time(Kernel kernel, const TileConfig &cfg, std::size_t n,
                  const DeviceModel &dev) {
  dev.validate();
  if (!cfg.valid())
    throw InvalidBound("tile extents must be positive");
  const double sl = dev.elements_per_transaction();
  const double bx = double(cfg.bx), by = double(cfg.by), bz = double(cfg.bz);
  const double nd = double(n);
  const double fx = std::floor(nd / bx), fy = std::floor(nd / by),
               fz = std::floor(nd / bz);
  const double bytes = 2.0 * double(dev.element_bytes);

  double transactions = 0;
  switch (kernel) {
  case Kernel::GPK:
    // tile plus one halo node per dimension, row width rounded to whole
    // transactions
    transactions = std::ceil((bx + 1) / sl) * sl * (by + 1) * (bz + 1) * fx *
                   fy * fz;
    break;
  case Kernel::LPK:
    // tile row plus two ghost segments of one transaction each
    transactions =
        (std::ceil(bx / sl) * sl + 2 * sl) * by * bz * fx * fy * fz;
    break;
  case Kernel::IPK:
    // ghost segment plus the full sweep along x in bx-wide steps
    transactions = (std::ceil(dev.ghost_extent() / sl) * sl +
                    std::ceil(bx / sl) * sl * std::ceil(nd / bx)) *
                   by * bz * fy * fz;
    break;
  }
  return transactions * bytes / dev.peak_bandwidth;
}

int ConfigRanking::rank_of(const TileConfig &cfg) const {
  for (const auto &e : entries)
    if (e.config == cfg)
      return e.rank;
  return 0;
}

ConfigRanking rank_configs(Kernel kernel,
                           const std::vector<TileConfig> &candidates,
                           std::size_t n, const DeviceModel &dev) {
  if (candidates.empty())
    throw InvalidBound("no candidate configurations");
  ConfigRanking ranking;
  ranking.entries.reserve(candidates.size());
  for (const auto &cfg : candidates)
    ranking.entries.push_back({cfg, model_time(kernel, cfg, n, dev), 0});
  std::stable_sort(ranking.entries.begin(), ranking.entries.end(),
                   [](const RankedConfig &a, const RankedConfig &b) {
                     if (a.predicted_seconds != b.predicted_seconds)
                       return a.predicted_seconds < b.predicted_seconds;
                     if (a.config.bx != b.config.bx)
                       return a.config.bx < b.config.bx;
                     if (a.config.by != b.config.by)
                       return a.config.by < b.config.by;
                     return a.config.bz < b.config.bz;
                   });
  for (std::size_t i = 0; i < ranking.entries.size(); ++i)
    ranking.entries[i].rank = static_cast<int>(i) + 1;
  return ranking;
}

std::vector<TileConfig> default_candidates() {
  return {
      {2, 2, 2},  {4, 4, 4},  {8, 4, 4},  {16, 4, 4},
      {32, 4, 4}, {64, 2, 2}, {128, 2, 2},
  };
}

namespace {
std::string cache_key(Kernel k, std::size_t n, std::size_t element_bytes) {
  std::ostringstream os;
  os << to_string(k) << " " << n << " " << element_bytes;
  return os.str();
}
} // namespace

std::optional<TileConfig> TuningCache::find(Kernel k, std::size_t n,
                                            std::size_t element_bytes) const {
  auto it = entries_.find(cache_key(k, n, element_bytes));
  if (it == entries_.end())
    return {};
  return it->second;
}

void TuningCache::store(Kernel k, std::size_t n, std::size_t element_bytes,
                        const TileConfig &cfg) {
  entries_[cache_key(k, n, element_bytes)] = cfg;
}

void TuningCache::load_file(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    return;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    std::string kernel;
    std::size_t n = 0, bytes = 0;
    TileConfig cfg;
    char arrow[3] = {0, 0, 0};
    if (is >> kernel >> n >> bytes >> arrow >> cfg.bx >> cfg.by >> cfg.bz)
      entries_[kernel + " " + std::to_string(n) + " " +
               std::to_string(bytes)] = cfg;
  }
}

void TuningCache::save_file(const std::string &path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError("cannot write tuning cache: " + path);
  for (const auto &[key, cfg] : entries_)
    out << key << " -> " << cfg.bx << " " << cfg.by << " " << cfg.bz << "\n";
}

AutotuneResult autotune(Kernel kernel,
                        const std::vector<TileConfig> &candidates,
                        std::size_t n, const DeviceModel &dev,
                        const MeasureFn &measure, int top_k,
                        TuningCache *cache) {
  if (cache) {
    if (auto hit = cache->find(kernel, n, dev.element_bytes)) {
      return {*hit, false, "cached"};
    }
  }
  const ConfigRanking ranking = rank_configs(kernel, candidates, n, dev);
  const std::size_t k = std::min<std::size_t>(
      std::max(top_k, 1), ranking.entries.size());

  AutotuneResult result{ranking.best(), false, "model rank 1"};
  if (k >= 1 && measure) {
    double best_time = 0;
    bool have = false;
    try {
      for (std::size_t i = 0; i < k; ++i) {
        const TileConfig &cfg = ranking.entries[i].config;
        measure(cfg); // warm-up
        double runs[3];
        for (double &t : runs) {
          t = measure(cfg);
          if (!std::isfinite(t) || t < 0)
            throw InvalidBound("measurement returned a bad time");
        }
        std::sort(runs, runs + 3);
        const double median = runs[1];
        if (!have || median < best_time) {
          have = true;
          best_time = median;
          result.config = cfg;
        }
      }
      result.measured = true;
      result.note = "measured best of top " + std::to_string(k);
    } catch (const std::exception &e) {
      result = {ranking.best(), false,
                std::string("warning: measurement failed (") + e.what() +
                    "); using model rank 1"};
    }
  }
  if (cache)
    cache->store(kernel, n, dev.element_bytes, result.config);
  return result;
}

} // namespace mgr
