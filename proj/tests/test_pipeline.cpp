#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mgr/pipeline.hpp"
#include "oracle.hpp"

using namespace mgr;

namespace {

std::string temp_path(const std::string &name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TensorGrid<double> random_grid(const Shape &shape, unsigned seed) {
  std::vector<std::vector<double>> coords;
  for (std::size_t e : shape)
    coords.push_back(uniform_coords(e));
  return make_grid<double>(shape,
                           oracle::random_vector(num_elements(shape), seed),
                           std::move(coords));
}

std::vector<std::uint8_t> slurp(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string &path, const std::vector<std::uint8_t> &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char *>(bytes.data()),
            std::streamsize(bytes.size()));
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string &name) : path(temp_path(name)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("write then read returns bit-identical classes") {
  TempFile f("mgr_roundtrip.mgrf");
  const auto g = random_grid(Shape{9, 17}, 1);
  const auto r = decompose(g);
  const auto written = write_refactored(r, f.path);
  CHECK(written == std::filesystem::file_size(f.path));

  const auto loaded = read_refactored(f.path);
  const auto &r2 = std::get<RefactoredData<double>>(loaded.data);
  CHECK(r2.shape == r.shape);
  CHECK(r2.coords == r.coords);
  CHECK(r2.levels == r.levels);
  REQUIRE(r2.classes.size() == r.classes.size());
  for (std::size_t l = 0; l < r.classes.size(); ++l)
    CHECK(r2.classes[l] == r.classes[l]);
  CHECK(loaded.bytes_consumed == written);
}

TEST_CASE("writes are byte-deterministic") {
  TempFile a("mgr_det_a.mgrf"), b("mgr_det_b.mgrf");
  const auto g = random_grid(Shape{9, 9}, 2);
  const auto r = decompose(g);
  write_refactored(r, a.path);
  write_refactored(r, b.path);
  CHECK(slurp(a.path) == slurp(b.path));
}

TEST_CASE("f32 containers round-trip through the same format") {
  TempFile f("mgr_f32.mgrf");
  std::vector<float> v(9 * 9);
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = float(std::sin(double(i)));
  auto g = make_grid<float>(Shape{9, 9}, v);
  const auto r = decompose(g);
  write_refactored(r, f.path);
  const auto loaded = read_refactored(f.path);
  CHECK(loaded.header.dtype == DType::f32);
  const auto &r2 = std::get<RefactoredData<float>>(loaded.data);
  for (std::size_t l = 0; l < r.classes.size(); ++l)
    CHECK(r2.classes[l] == r.classes[l]);
}

TEST_CASE("a prefix read consumes exactly the prefix bytes") {
  TempFile f("mgr_prefix.mgrf");
  const auto g = random_grid(Shape{17, 17}, 3);
  const auto r = decompose(g);
  REQUIRE(r.levels == 4);
  write_refactored(r, f.path);

  const auto header = read_refactored_header(f.path);
  std::uint64_t expected = header.header_bytes;
  for (std::size_t k = 0; k <= r.levels; ++k) {
    expected += header.class_records[k].bytes;
    const auto partial = read_refactored(f.path, k);
    CHECK(partial.bytes_consumed == expected);
    CHECK(partial.classes_loaded == k);
    const auto &pr = std::get<RefactoredData<double>>(partial.data);
    REQUIRE(pr.classes.size() == k + 1);
    // a truncated container still recomposes its prefix
    const auto rec = recompose(pr, k);
    const auto ref = recompose(r, k);
    CHECK(rec.values == ref.values);
  }
  CHECK_THROWS_AS(read_refactored(f.path, r.levels + 1), MissingClass);
}

TEST_CASE("payload corruption is detected and attributed to its class") {
  TempFile f("mgr_crc.mgrf");
  const auto g = random_grid(Shape{9, 9}, 4);
  const auto r = decompose(g);
  write_refactored(r, f.path);
  const auto original = slurp(f.path);
  const auto header = read_refactored_header(f.path);

  std::mt19937 rng(99);
  int detected = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto bytes = original;
    const std::size_t payload_bytes = bytes.size() - header.header_bytes;
    const std::size_t at =
        header.header_bytes + rng() % payload_bytes;
    bytes[at] ^= std::uint8_t(1 + rng() % 255);
    spit(f.path, bytes);
    // identify which class the mutated byte falls in
    std::size_t cls = 0, off = header.header_bytes;
    while (at >= off + header.class_records[cls].bytes) {
      off += header.class_records[cls].bytes;
      ++cls;
    }
    try {
      (void)read_refactored(f.path);
      FAIL("corruption not detected");
    } catch (const CorruptFile &e) {
      ++detected;
      CHECK(std::string(e.what()).find("class " + std::to_string(cls)) !=
            std::string::npos);
    }
  }
  CHECK(detected == 100);
}

TEST_CASE("structural corruption raises CorruptFile") {
  TempFile f("mgr_magic.mgrf");
  const auto g = random_grid(Shape{9}, 5);
  write_refactored(decompose(g), f.path);
  auto bytes = slurp(f.path);

  SUBCASE("bad magic") {
    bytes[0] = 'X';
    spit(f.path, bytes);
    CHECK_THROWS_AS(read_refactored(f.path), CorruptFile);
  }
  SUBCASE("bad version") {
    bytes[4] = 42;
    spit(f.path, bytes);
    CHECK_THROWS_AS(read_refactored(f.path), CorruptFile);
  }
  SUBCASE("truncated payload") {
    bytes.resize(bytes.size() - 3);
    spit(f.path, bytes);
    CHECK_THROWS_AS(read_refactored(f.path), MissingClass);
  }
}

TEST_CASE("codecs invert themselves") {
  const auto payload = oracle::random_vector(257, 6);
  std::vector<std::uint8_t> raw(payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i)
    raw[i] = std::uint8_t(payload[i] * 255);
  for (const LosslessCodec *codec : {&store_codec(), &zlib_codec()}) {
    const auto enc = codec->encode(raw);
    const auto dec = codec->decode(enc, raw.size());
    CHECK(dec == raw);
  }
  CHECK(store_codec().id() == 0);
  CHECK(zlib_codec().id() == 1);
  CHECK_THROWS_AS(codec_by_id(9), CorruptFile);
  CHECK(&codec_by_name("zlib") == &zlib_codec());
}

TEST_CASE("compression respects the error bound on a smooth field") {
  // smooth reaction-diffusion-style blobs
  const std::size_t n = 33;
  std::vector<double> v(n * n * n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) {
        const double x = double(i) / (n - 1), y = double(j) / (n - 1),
                     z = double(k) / (n - 1);
        v[i + n * (j + n * k)] =
            std::exp(-40 * ((x - 0.3) * (x - 0.3) + (y - 0.4) * (y - 0.4) +
                            (z - 0.5) * (z - 0.5))) +
            0.5 * std::sin(2 * M_PI * x) * std::sin(2 * M_PI * y) *
                std::sin(2 * M_PI * z);
      }
  auto g = make_grid<double>(Shape{n, n, n}, v);
  const double eb = 1e-3 * value_range(g);

  for (const LosslessCodec *codec : {&zlib_codec(), &store_codec()}) {
    const auto result = compress(g, eb, *codec);
    CHECK(result.report.measured_max_abs_error <= eb);
    if (codec->id() == 1)
      CHECK(result.report.compression_ratio > 1.0);

    const auto dec = decompress(result.bytes);
    const auto &back = std::get<TensorGrid<double>>(dec.grid);
    double err = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
      err = std::max(err, std::abs(back.values[i] - v[i]));
    CHECK(err <= eb);
    CHECK(dec.report.measured_max_abs_error ==
          result.report.measured_max_abs_error);
  }
}

TEST_CASE("a huge error bound quantizes every class to zero") {
  const auto g = random_grid(Shape{9, 9}, 7);
  const double eb = 1e3 * value_range(g);
  const auto result = compress(g, eb, store_codec());
  const auto dec = decompress(result.bytes);
  const auto &back = std::get<TensorGrid<double>>(dec.grid);
  for (double x : back.values)
    CHECK(x == 0.0); // all-zero classes reconstruct the zero field
  CHECK(result.report.measured_max_abs_error <= eb);
}

TEST_CASE("compressing the decompressed field is a fixed point") {
  const auto g = random_grid(Shape{17, 17}, 8);
  const double eb = 1e-2 * value_range(g);
  const auto first = compress(g, eb, zlib_codec());
  const auto dec1 = decompress(first.bytes);
  const auto &g1 = std::get<TensorGrid<double>>(dec1.grid);
  const auto second = compress(g1, eb, zlib_codec());
  const auto dec2 = decompress(second.bytes);
  const auto &g2 = std::get<TensorGrid<double>>(dec2.grid);
  for (std::size_t i = 0; i < g1.values.size(); ++i)
    CHECK(g2.values[i] == doctest::Approx(g1.values[i]).epsilon(1e-13));
}

TEST_CASE("compression validates the bound") {
  const auto g = random_grid(Shape{9}, 9);
  CHECK_THROWS_AS(compress(g, 0.0), InvalidBound);
  CHECK_THROWS_AS(compress(g, -1.0), InvalidBound);
}

TEST_CASE("raw value files round trip") {
  TempFile f("mgr_raw.bin");
  const auto v = oracle::random_vector(64, 10);
  write_raw_values<double>(f.path, v);
  CHECK(read_raw_values<double>(f.path) == v);
  std::vector<float> vf(v.begin(), v.end());
  write_raw_values<float>(f.path, vf);
  CHECK(read_raw_values<float>(f.path) == vf);
}
