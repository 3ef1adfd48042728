#ifndef MGR_PIPELINE_HPP
#define MGR_PIPELINE_HPP

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mgr/refactor.hpp"

namespace mgr {

std::uint32_t crc32(std::span<const std::uint8_t> data);

enum class DType : std::uint8_t { f32 = 4, f64 = 8 };

template <typename Real> constexpr DType dtype_of() {
  return sizeof(Real) == 4 ? DType::f32 : DType::f64;
}

struct ClassRecord {
  std::uint64_t bytes = 0;
  std::uint32_t crc = 0;
};

// On-disk layout (all integers little-endian):
//   "MGRF" | u8 version | u8 endianness (0 = little) | u8 dtype (4|8)
//   u8 ndims | u64 size per dim | f64 coordinates per dim
//   u64 level count L | (L+1) x { u64 payload bytes, u32 crc32 }
//   payloads: class 0 .. class L, raw element arrays
struct RefactorFileHeader {
  std::uint8_t version = 1;
  DType dtype = DType::f64;
  Shape shape;
  std::vector<std::vector<double>> coords;
  std::uint64_t levels = 0;
  std::vector<ClassRecord> class_records; // class 0 .. class L
  std::uint64_t header_bytes = 0;         // set on read/write
};

using AnyRefactored =
    std::variant<RefactoredData<float>, RefactoredData<double>>;

std::uint64_t write_refactored(const RefactoredData<float> &r,
                               const std::string &path);
std::uint64_t write_refactored(const RefactoredData<double> &r,
                               const std::string &path);

struct ReadResult {
  AnyRefactored data;
  RefactorFileHeader header;
  std::uint64_t bytes_consumed = 0; // header plus the payloads actually read
  std::size_t classes_loaded = 0;   // highest class index loaded
};

// Reads the header and classes 0..classes (default: all). Bytes past the
// requested prefix are never touched. CRC mismatches raise CorruptFile with
// the class index; a payload cut short raises MissingClass.
ReadResult read_refactored(const std::string &path,
                           std::optional<std::size_t> classes = {});

RefactorFileHeader read_refactored_header(const std::string &path);

// Pluggable lossless byte codec for the compression pipeline.
class LosslessCodec {
public:
  virtual ~LosslessCodec() = default;
  virtual std::uint8_t id() const = 0;
  virtual std::string name() const = 0;
  virtual std::vector<std::uint8_t>
  encode(std::span<const std::uint8_t> raw) const = 0;
  virtual std::vector<std::uint8_t>
  decode(std::span<const std::uint8_t> enc, std::size_t raw_size) const = 0;
};

const LosslessCodec &store_codec(); // id 0: identity, always available
const LosslessCodec &zlib_codec();  // id 1: deflate
const LosslessCodec &codec_by_id(std::uint8_t id);
const LosslessCodec &codec_by_name(const std::string &name);

// Uniform scalar quantization: one bin width shared by all classes,
// starting from 2*eb/(L+1) and halved until the measured round-trip error
// meets the bound.
struct QuantizerSpec {
  double error_bound = 0;
  double bin_width = 0;
  std::size_t num_classes = 0;
};

struct CompressionReport {
  double error_bound = 0;
  double bin_width = 0;
  double measured_max_abs_error = 0;
  double compression_ratio = 0; // raw bytes / compressed bytes
  std::string codec;
};

struct CompressResult {
  std::vector<std::uint8_t> bytes;
  CompressionReport report;
};

template <typename Real>
CompressResult compress(const TensorGrid<Real> &grid, double error_bound,
                        const LosslessCodec &codec = zlib_codec(),
                        const RefactorOptions &opt = {});

struct DecompressResult {
  std::variant<TensorGrid<float>, TensorGrid<double>> grid;
  CompressionReport report; // as recorded at compression time
};

DecompressResult decompress(std::span<const std::uint8_t> bytes);

// Raw little-endian value array I/O for the CLI.
template <typename Real>
std::vector<Real> read_raw_values(const std::string &path);
template <typename Real>
void write_raw_values(const std::string &path, std::span<const Real> values);
std::vector<double> read_raw_doubles(const std::string &path);

namespace detail {

void quantize_class(std::span<const float> values, double bin,
                    std::vector<std::int64_t> &out);
void quantize_class(std::span<const double> values, double bin,
                    std::vector<std::int64_t> &out);
std::vector<std::uint8_t> zigzag_encode(std::span<const std::int64_t> q);
std::vector<std::int64_t> zigzag_decode(std::span<const std::uint8_t> bytes,
                                        std::size_t count);

std::vector<std::uint8_t>
build_compressed_container(const RefactorFileHeader &meta, double eb,
                           double bin, double measured_error,
                           const LosslessCodec &codec,
                           const std::vector<std::vector<std::int64_t>> &q);

struct ParsedContainer {
  RefactorFileHeader meta;
  double eb = 0, bin = 0, measured_error = 0;
  std::uint8_t codec_id = 0;
  std::vector<std::vector<std::int64_t>> quantized;
};
ParsedContainer parse_compressed_container(std::span<const std::uint8_t> b);

} // namespace detail

template <typename Real>
CompressResult compress(const TensorGrid<Real> &grid, double error_bound,
                        const LosslessCodec &codec,
                        const RefactorOptions &opt) {
  if (!(error_bound > 0))
    throw InvalidBound("error bound must be positive");
  const RefactoredData<Real> r = decompose(grid, opt);
  const std::size_t num_classes = r.levels + 1;

  double bin = 2.0 * error_bound / double(num_classes);
  double measured = 0;
  std::vector<std::vector<std::int64_t>> quantized(num_classes);
  for (int attempt = 0;; ++attempt) {
    RefactoredData<Real> deq = r;
    for (std::size_t c = 0; c < num_classes; ++c) {
      detail::quantize_class(std::span<const Real>(r.classes[c]), bin,
                             quantized[c]);
      for (std::size_t i = 0; i < quantized[c].size(); ++i)
        deq.classes[c][i] = Real(double(quantized[c][i]) * bin);
    }
    const TensorGrid<Real> rec = recompose(deq, deq.levels, opt);
    measured = 0;
    for (std::size_t i = 0; i < rec.values.size(); ++i)
      measured = std::max(measured,
                          std::abs(double(rec.values[i]) -
                                   double(grid.values[i])));
    if (measured <= error_bound)
      break;
    if (attempt >= 24)
      throw InvalidBound("quantizer failed to reach the requested bound");
    bin *= 0.5;
  }

  RefactorFileHeader meta;
  meta.dtype = dtype_of<Real>();
  meta.shape = r.shape;
  meta.coords = r.coords;
  meta.levels = r.levels;

  CompressResult out;
  out.bytes = detail::build_compressed_container(meta, error_bound, bin,
                                                 measured, codec, quantized);
  out.report.error_bound = error_bound;
  out.report.bin_width = bin;
  out.report.measured_max_abs_error = measured;
  out.report.codec = codec.name();
  out.report.compression_ratio =
      double(grid.size() * sizeof(Real)) / double(out.bytes.size());
  return out;
}

} // namespace mgr

#endif
