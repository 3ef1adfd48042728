// mgrf: multigrid hierarchical refactoring tool.
//
// Subcommands: decompose, recompose, info, verify, bench, compress,
// decompress. Errors print a single machine-parsable line on stderr:
//   error: <Code>: <message>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "mgr/autotune.hpp"
#include "mgr/parallel.hpp"
#include "mgr/pipeline.hpp"

using namespace mgr;

namespace {

Shape parse_shape(const std::string &text) {
  Shape shape;
  std::string token;
  std::stringstream ss(text);
  const char delim = text.find('x') != std::string::npos ? 'x' : ',';
  while (std::getline(ss, token, delim)) {
    if (token.empty())
      continue;
    shape.push_back(std::stoull(token));
  }
  if (shape.empty())
    throw ShapeError("could not parse shape: " + text);
  return shape;
}

std::vector<std::string> split_list(const std::string &text) {
  std::vector<std::string> out;
  std::string token;
  std::stringstream ss(text);
  while (std::getline(ss, token, ','))
    if (!token.empty())
      out.push_back(token);
  return out;
}

std::vector<std::vector<double>> load_coords(const std::string &list,
                                             const Shape &shape) {
  std::vector<std::vector<double>> coords;
  if (list.empty())
    return coords;
  const auto files = split_list(list);
  if (files.size() != shape.size())
    throw ShapeError("need one coordinate file per dimension");
  for (std::size_t d = 0; d < files.size(); ++d) {
    coords.push_back(read_raw_doubles(files[d]));
    if (coords.back().size() != shape[d])
      throw ShapeError("coordinate file " + files[d] + " has " +
                       std::to_string(coords.back().size()) +
                       " entries; dimension needs " +
                       std::to_string(shape[d]));
  }
  return coords;
}

TileConfig parse_tile(const std::string &text) {
  TileConfig cfg;
  if (text.empty())
    return cfg;
  const auto parts = split_list(text);
  if (parts.size() != 3)
    throw ShapeError("tile must be BX,BY,BZ");
  cfg.bx = std::stoull(parts[0]);
  cfg.by = std::stoull(parts[1]);
  cfg.bz = std::stoull(parts[2]);
  return cfg;
}

PartitionScheme parse_scheme(const std::string &name) {
  if (name == "block")
    return PartitionScheme::block;
  if (name == "round_robin" || name == "shifted_round_robin")
    return PartitionScheme::shifted_round_robin;
  throw ShapeError("unknown scheme: " + name);
}

struct CommonInput {
  std::string shape_text;
  std::string dtype = "f64";
  std::string coords_text;
};

void add_input_flags(CLI::App *cmd, CommonInput &in) {
  cmd->add_option("--shape", in.shape_text, "grid extents, e.g. 65x65x65")
      ->required();
  cmd->add_option("--dtype", in.dtype, "element type: f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--coords", in.coords_text,
                  "comma-separated per-dimension coordinate files (f64)");
}

template <typename Real>
TensorGrid<Real> load_grid(const std::string &path, const CommonInput &in) {
  const Shape shape = parse_shape(in.shape_text);
  auto values = read_raw_values<Real>(path);
  if (values.size() != num_elements(shape))
    throw ShapeError("raw file holds " + std::to_string(values.size()) +
                     " values; shape needs " +
                     std::to_string(num_elements(shape)));
  return make_grid<Real>(shape, std::move(values),
                         load_coords(in.coords_text, shape));
}

template <typename Fn> int run_typed(const std::string &dtype, Fn &&fn) {
  if (dtype == "f32")
    return fn(float{});
  return fn(double{});
}

void print_pass_stats(const PassStats &stats) {
  std::cout << "pass accounting (elements in/out per phase):\n";
  for (const auto &lv : stats.levels) {
    std::cout << "  level " << lv.level << " (" << lv.level_elements
              << " nodes): coefficient " << lv.coefficient.in << "/"
              << lv.coefficient.out << ", fused copy " << lv.fused_copy.out;
    for (std::size_t d = 0; d < lv.masstrans.size(); ++d)
      if (lv.masstrans[d].total() || lv.solve[d].total())
        std::cout << ", dim" << d << " mass-trans " << lv.masstrans[d].in
                  << "/" << lv.masstrans[d].out << " solve "
                  << lv.solve[d].in << "/" << lv.solve[d].out;
    std::cout << ", apply " << lv.apply.in << "/" << lv.apply.out
              << "  => " << lv.total_passes() << " passes\n";
  }
}

int cmd_decompose(const std::string &in_path, const std::string &out_path,
                  const CommonInput &in, std::size_t levels, int workers,
                  const std::string &scheme, const std::string &tile_text,
                  const std::string &stats_path, bool show_passes) {
  return run_typed(in.dtype, [&](auto tag) {
    using Real = decltype(tag);
    const auto grid = load_grid<Real>(in_path, in);
    RefactoredData<Real> r;
    PassStats passes;
    if (workers > 1) {
      CoopOptions opt;
      if (levels)
        opt.levels = levels;
      opt.scheme = parse_scheme(scheme);
      CommReport report;
      opt.report = &report;
      r = cooperative_decompose(grid, workers, opt);
      if (!stats_path.empty()) {
        std::ofstream out(stats_path, std::ios::trunc);
        out << report.to_json() << "\n";
      }
    } else {
      RefactorOptions opt;
      if (levels)
        opt.levels = levels;
      opt.tile = parse_tile(tile_text);
      opt.stats = show_passes ? &passes : nullptr;
      r = decompose(grid, opt);
    }
    const auto bytes = write_refactored(r, out_path);
    std::cout << "decomposed " << in_path << ": " << r.levels + 1
              << " classes, " << bytes << " bytes -> " << out_path << "\n";
    for (std::size_t l = 0; l < r.classes.size(); ++l)
      std::cout << "  class " << l << ": " << r.classes[l].size()
                << " values\n";
    if (show_passes && workers <= 1)
      print_pass_stats(passes);
    return 0;
  });
}

int cmd_recompose(const std::string &in_path, const std::string &out_path,
                  std::size_t classes, bool want_report) {
  const auto loaded = read_refactored(in_path, classes);
  return std::visit(
      [&](const auto &r) {
        auto [grid, report] = recompose_with_report(r, classes);
        write_raw_values(out_path,
                         std::span<const typename std::decay_t<
                             decltype(grid.values)>::value_type>(grid.values));
        std::cout << "recomposed " << in_path << " with classes 0.."
                  << classes << " -> " << out_path << "\n";
        if (want_report)
          std::cout << "  vs full reconstruction: max-abs "
                    << report.max_abs_error << ", rel-linf "
                    << report.rel_linf_error << ", weighted-l2 "
                    << report.weighted_l2_error << ", elapsed "
                    << report.elapsed_seconds << " s\n";
        return 0;
      },
      loaded.data);
}

int cmd_info(const std::string &path) {
  const auto h = read_refactored_header(path);
  std::cout << "container: " << path << "\n";
  std::cout << "  dtype: " << (h.dtype == DType::f32 ? "f32" : "f64") << "\n";
  std::cout << "  shape:";
  for (std::size_t e : h.shape)
    std::cout << " " << e;
  std::cout << "\n  levels: " << h.levels << "\n";
  std::uint64_t total = h.header_bytes;
  for (std::size_t c = 0; c < h.class_records.size(); ++c) {
    std::cout << "  class " << c << ": " << h.class_records[c].bytes
              << " bytes, crc32 " << std::hex << h.class_records[c].crc
              << std::dec << "\n";
    total += h.class_records[c].bytes;
  }
  std::cout << "  total: " << total << " bytes (header " << h.header_bytes
            << ")\n";

  // expected full-array passes from the documented accounting
  const auto hier = build_hierarchy(h.shape, h.coords,
                                    std::optional(std::size_t(h.levels)), 2);
  std::cout << "pass model per level:\n";
  for (std::size_t l = hier.levels; l >= 1; --l) {
    const double F = double(hier.num_nodes(l));
    const double C = double(hier.num_nodes(l - 1));
    double touches = F + (F - C);   // coefficient sweep
    touches += F - C;               // fused copy
    double cur = F;
    for (std::size_t d = 0; d < h.shape.size(); ++d) {
      if (!hier.coarsens(d, l))
        continue;
      const double out =
          cur / double(hier.extent(d, l)) * double(hier.extent(d, l - 1));
      touches += cur + out; // mass-trans
      touches += 4 * C;     // forward + backward solve
      cur = out;
    }
    touches += 3 * C; // apply
    std::cout << "  level " << l << ": " << touches / F << " passes\n";
  }
  return 0;
}

int cmd_verify(const std::string &path, const std::string &reference,
               const CommonInput &in, double tolerance) {
  const auto loaded = read_refactored(path);
  return std::visit(
      [&](const auto &r) {
        using Real = typename std::decay_t<
            decltype(r.classes[0])>::value_type;
        const auto grid = recompose(r, r.levels);
        double err = 0, range = 0;
        if (!reference.empty()) {
          CommonInput ref_in = in;
          if (ref_in.shape_text.empty()) {
            std::ostringstream os;
            for (std::size_t d = 0; d < r.shape.size(); ++d)
              os << (d ? "x" : "") << r.shape[d];
            ref_in.shape_text = os.str();
          }
          const auto ref = load_grid<Real>(reference, ref_in);
          range = value_range(ref);
          for (std::size_t i = 0; i < grid.values.size(); ++i)
            err = std::max(err, std::abs(double(grid.values[i]) -
                                         double(ref.values[i])));
        } else {
          // no reference: decompose the reconstruction again and compare
          const auto again = decompose(grid);
          const auto back = recompose(again, again.levels);
          range = value_range(grid);
          for (std::size_t i = 0; i < grid.values.size(); ++i)
            err = std::max(err, std::abs(double(back.values[i]) -
                                         double(grid.values[i])));
        }
        double tol = tolerance;
        if (tol <= 0)
          tol = (sizeof(Real) == 4 ? 1e-5 : 1e-12) * std::max(range, 1e-300);
        std::cout << "verify " << path << ": max-abs " << err
                  << " (tolerance " << tol << ") "
                  << (err <= tol ? "OK" : "FAILED") << "\n";
        return err <= tol ? 0 : 1;
      },
      loaded.data);
}

template <typename Real>
double time_kernel(Kernel k, const TileConfig &cfg, std::size_t n) {
  // a representative single-level kernel invocation on an n^3 grid
  static std::vector<Real> values;
  static Shape cached_shape;
  const Shape shape{n, n, n};
  std::vector<std::vector<double>> coords;
  for (std::size_t e : shape)
    coords.push_back(uniform_coords(e));
  const auto hier = build_hierarchy(shape, coords);
  if (cached_shape != shape) {
    cached_shape = shape;
    values.resize(num_elements(shape));
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = Real(std::sin(double(i)));
  }
  const auto t0 = std::chrono::steady_clock::now();
  if (k == Kernel::GPK) {
    auto work = values;
    compute_coefficients<Real>(work, hier, hier.levels, cfg);
  } else if (k == Kernel::LPK) {
    NdBuffer<Real> in(shape);
    in.data = values;
    (void)masstrans_apply(in, hier, hier.levels, 0);
  } else {
    NdBuffer<Real> f(hier.level_shape(hier.levels - 1));
    for (std::size_t i = 0; i < f.data.size(); ++i)
      f.data[i] = Real(i % 17) * Real(0.25);
    solve_correction(f, hier, hier.levels, 0);
  }
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

int cmd_bench(std::size_t n, const std::string &dtype, bool run_autotune,
              const std::string &candidates_file) {
  DeviceModel dev;
  dev.element_bytes = dtype == "f32" ? 4 : 8;

  std::vector<TileConfig> candidates = default_candidates();
  if (!candidates_file.empty()) {
    candidates.clear();
    std::ifstream in(candidates_file);
    if (!in)
      throw IoError("cannot open candidates file: " + candidates_file);
    TileConfig cfg;
    while (in >> cfg.bx >> cfg.by >> cfg.bz)
      candidates.push_back(cfg);
    if (candidates.empty())
      throw InvalidBound("candidates file is empty");
  }

  std::cout << "model ranking for N=" << n << ", " << dtype << " (S="
            << dev.transaction_bytes << ")\n";
  std::cout << "  bx  by  bz |  GPK  LPK  IPK\n";
  const auto gpk = rank_configs(Kernel::GPK, candidates, n, dev);
  const auto lpk = rank_configs(Kernel::LPK, candidates, n, dev);
  const auto ipk = rank_configs(Kernel::IPK, candidates, n, dev);
  for (const auto &cfg : candidates) {
    std::printf(" %3zu %3zu %3zu |  %3d  %3d  %3d\n", cfg.bx, cfg.by, cfg.bz,
                gpk.rank_of(cfg), lpk.rank_of(cfg), ipk.rank_of(cfg));
  }

  if (run_autotune) {
    TuningCache cache;
    std::string cache_file;
    if (const char *dir = std::getenv("MGRF_TUNE_CACHE")) {
      std::filesystem::create_directories(dir);
      cache_file = (std::filesystem::path(dir) / "tuning.txt").string();
      cache.load_file(cache_file);
    }
    const std::size_t bench_n = std::min<std::size_t>(n, 65);
    for (Kernel k : {Kernel::GPK, Kernel::LPK, Kernel::IPK}) {
      auto measure = [&](const TileConfig &cfg) {
        return dtype == "f32" ? time_kernel<float>(k, cfg, bench_n)
                              : time_kernel<double>(k, cfg, bench_n);
      };
      const auto res = autotune(k, candidates, n, dev, measure, 3, &cache);
      std::cout << to_string(k) << ": chose (" << res.config.bx << ","
                << res.config.by << "," << res.config.bz << ") [" << res.note
                << "]\n";
    }
    if (!cache_file.empty()) {
      cache.save_file(cache_file);
      std::cout << "tuning cache: " << cache_file << "\n";
    }
  }
  return 0;
}

int cmd_compress(const std::string &in_path, const std::string &out_path,
                 const CommonInput &in, double eb, const std::string &codec) {
  return run_typed(in.dtype, [&](auto tag) {
    using Real = decltype(tag);
    const auto grid = load_grid<Real>(in_path, in);
    const auto result = compress(grid, eb, codec_by_name(codec));
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot open for writing: " + out_path);
    out.write(reinterpret_cast<const char *>(result.bytes.data()),
              std::streamsize(result.bytes.size()));
    std::cout << "compressed " << in_path << " -> " << out_path << ": ratio "
              << result.report.compression_ratio << ", max-abs error "
              << result.report.measured_max_abs_error << " (bound " << eb
              << "), codec " << result.report.codec << "\n";
    return 0;
  });
}

int cmd_decompress(const std::string &in_path, const std::string &out_path) {
  std::ifstream in(in_path, std::ios::binary);
  if (!in)
    throw IoError("cannot open: " + in_path);
  std::vector<std::uint8_t> bytes(
      (std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto result = decompress(bytes);
  std::visit(
      [&](const auto &grid) {
        write_raw_values(out_path,
                         std::span<const typename std::decay_t<
                             decltype(grid.values)>::value_type>(grid.values));
      },
      result.grid);
  std::cout << "decompressed " << in_path << " -> " << out_path
            << " (recorded max-abs error "
            << result.report.measured_max_abs_error << ")\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"multigrid hierarchical data refactoring"};
  app.require_subcommand(1);

  // decompose
  auto *dec = app.add_subcommand("decompose",
                                 "refactor raw data into coefficient classes");
  std::string in_path, out_path, scheme = "block", tile_text, stats_path;
  CommonInput input;
  std::size_t levels = 0, classes = 0;
  int workers = 1;
  bool show_passes = false;
  dec->add_option("input", in_path)->required();
  dec->add_option("output", out_path)->required();
  add_input_flags(dec, input);
  dec->add_option("--levels", levels, "cap the hierarchy depth");
  dec->add_option("--workers", workers, "cooperative worker count");
  dec->add_option("--scheme", scheme, "block or round_robin");
  dec->add_option("--tile", tile_text, "tile extents BX,BY,BZ");
  dec->add_option("--stats", stats_path, "write worker statistics (json)");
  dec->add_flag("--passes", show_passes, "print pass counters");

  // recompose
  auto *rec = app.add_subcommand("recompose",
                                 "reconstruct data from a class prefix");
  std::string rin, rout;
  bool want_report = false;
  rec->add_option("input", rin)->required();
  rec->add_option("output", rout)->required();
  rec->add_option("--classes", classes, "coefficient classes to use (0..L)")
      ->required();
  rec->add_flag("--report", want_report, "print reconstruction errors");

  // info
  auto *info = app.add_subcommand("info", "describe a refactored container");
  std::string ipath;
  info->add_option("input", ipath)->required();

  // verify
  auto *ver = app.add_subcommand("verify", "round-trip check a container");
  std::string vpath, vref;
  double vtol = 0;
  CommonInput vinput;
  ver->add_option("input", vpath)->required();
  ver->add_option("--reference", vref, "original raw data to compare against");
  ver->add_option("--tolerance", vtol, "absolute tolerance override");
  ver->add_option("--dtype", vinput.dtype)->check(CLI::IsMember({"f32",
                                                                 "f64"}));
  ver->add_option("--coords", vinput.coords_text);

  // bench
  auto *bench = app.add_subcommand("bench", "kernel timings + model ranking");
  std::size_t bn = 513;
  std::string bdtype = "f64", bcand;
  bool bautotune = false;
  bench->add_option("--n", bn, "per-dimension size for the model");
  bench->add_option("--dtype", bdtype)->check(CLI::IsMember({"f32", "f64"}));
  bench->add_flag("--autotune", bautotune, "measure the top-3 configurations");
  bench->add_option("--candidates", bcand, "file of bx by bz triples");

  // compress / decompress
  auto *cmp = app.add_subcommand("compress", "error-bounded lossy compression");
  std::string cin_path, cout_path, codec = "zlib";
  double eb = 0;
  CommonInput cinput;
  cmp->add_option("input", cin_path)->required();
  cmp->add_option("output", cout_path)->required();
  add_input_flags(cmp, cinput);
  cmp->add_option("--eb", eb, "absolute error bound")->required();
  cmp->add_option("--codec", codec, "lossless backend: store or zlib")
      ->check(CLI::IsMember({"store", "zlib"}));

  auto *dcmp = app.add_subcommand("decompress", "invert compress");
  std::string din, dout;
  dcmp->add_option("input", din)->required();
  dcmp->add_option("output", dout)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (dec->parsed())
      return cmd_decompose(in_path, out_path, input, levels, workers, scheme,
                           tile_text, stats_path, show_passes);
    if (rec->parsed())
      return cmd_recompose(rin, rout, classes, want_report);
    if (info->parsed())
      return cmd_info(ipath);
    if (ver->parsed())
      return cmd_verify(vpath, vref, vinput, vtol);
    if (bench->parsed())
      return cmd_bench(bn, bdtype, bautotune, bcand);
    if (cmp->parsed())
      return cmd_compress(cin_path, cout_path, cinput, eb, codec);
    if (dcmp->parsed())
      return cmd_decompress(din, dout);
  } catch (const Error &e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
