#include "mgr/pipeline.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace mgr {

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::uint8_t b : data)
    c = table[(c ^ b) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

namespace {

class ByteWriter {
public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      buf_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
      buf_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void bytes(std::span<const std::uint8_t> b) {
    buf_.insert(buf_.end(), b.begin(), b.end());
  }
  const std::vector<std::uint8_t> &data() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
  ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(s[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t(s[i]) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (at_ + n > b_.size())
      throw CorruptFile("unexpected end of data");
    auto s = b_.subspan(at_, n);
    at_ += n;
    return s;
  }
  std::size_t offset() const { return at_; }
  std::size_t remaining() const { return b_.size() - at_; }

private:
  std::span<const std::uint8_t> b_;
  std::size_t at_ = 0;
};

constexpr char kMagic[4] = {'M', 'G', 'R', 'F'};
constexpr char kCompressedMagic[4] = {'M', 'G', 'R', 'C'};
constexpr std::uint8_t kVersion = 1;

template <typename Real>
std::vector<std::uint8_t> payload_bytes(const std::vector<Real> &values) {
  std::vector<std::uint8_t> out(values.size() * sizeof(Real));
  if (!out.empty())
    std::memcpy(out.data(), values.data(), out.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < out.size(); i += sizeof(Real))
      std::reverse(out.begin() + i, out.begin() + i + sizeof(Real));
  }
  return out;
}

template <typename Real>
std::vector<Real> payload_values(std::span<const std::uint8_t> bytes) {
  std::vector<Real> out(bytes.size() / sizeof(Real));
  if (!out.empty())
    std::memcpy(out.data(), bytes.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (auto &v : out) {
      auto *p = reinterpret_cast<std::uint8_t *>(&v);
      std::reverse(p, p + sizeof(Real));
    }
  }
  return out;
}

void write_header(ByteWriter &w, const RefactorFileHeader &h) {
  w.bytes(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t *>(kMagic), 4));
  w.u8(h.version);
  w.u8(0); // little-endian
  w.u8(static_cast<std::uint8_t>(h.dtype));
  w.u8(static_cast<std::uint8_t>(h.shape.size()));
  for (std::size_t e : h.shape)
    w.u64(e);
  for (std::size_t d = 0; d < h.shape.size(); ++d)
    for (double c : h.coords[d])
      w.f64(c);
  w.u64(h.levels);
  for (const auto &rec : h.class_records) {
    w.u64(rec.bytes);
    w.u32(rec.crc);
  }
}

RefactorFileHeader read_header_fields(ByteReader &r, const char magic[4]) {
  auto m = r.take(4);
  if (std::memcmp(m.data(), magic, 4) != 0)
    throw CorruptFile("bad magic");
  RefactorFileHeader h;
  h.version = r.u8();
  if (h.version != kVersion)
    throw CorruptFile("unsupported version " + std::to_string(h.version));
  const std::uint8_t endian = r.u8();
  if (endian != 0)
    throw CorruptFile("unsupported endianness");
  const std::uint8_t dt = r.u8();
  if (dt != 4 && dt != 8)
    throw CorruptFile("unsupported dtype " + std::to_string(dt));
  h.dtype = static_cast<DType>(dt);
  const std::uint8_t nd = r.u8();
  if (nd < 1 || nd > kMaxDims)
    throw CorruptFile("bad dimension count");
  h.shape.resize(nd);
  for (auto &e : h.shape) {
    e = r.u64();
    if (e < 2)
      throw CorruptFile("bad dimension size");
  }
  h.coords.resize(nd);
  for (std::uint8_t d = 0; d < nd; ++d) {
    h.coords[d].resize(h.shape[d]);
    for (auto &c : h.coords[d])
      c = r.f64();
  }
  h.levels = r.u64();
  if (h.levels > 64)
    throw CorruptFile("implausible level count");
  return h;
}

template <typename Real>
std::uint64_t write_refactored_impl(const RefactoredData<Real> &r,
                                    const std::string &path) {
  RefactorFileHeader h;
  h.dtype = dtype_of<Real>();
  h.shape = r.shape;
  h.coords = r.coords;
  h.levels = r.levels;
  std::vector<std::vector<std::uint8_t>> payloads;
  payloads.reserve(r.classes.size());
  for (const auto &cls : r.classes) {
    payloads.push_back(payload_bytes(cls));
    h.class_records.push_back(
        {payloads.back().size(), crc32(payloads.back())});
  }
  ByteWriter w;
  write_header(w, h);
  for (const auto &p : payloads)
    w.bytes(p);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char *>(w.data().data()),
            static_cast<std::streamsize>(w.size()));
  if (!out)
    throw IoError("write failed: " + path);
  return w.size();
}

std::vector<std::uint8_t> read_file_prefix(const std::string &path,
                                           std::size_t max_bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open: " + path);
  std::vector<std::uint8_t> buf(max_bytes);
  in.read(reinterpret_cast<char *>(buf.data()),
          static_cast<std::streamsize>(max_bytes));
  buf.resize(static_cast<std::size_t>(in.gcount()));
  return buf;
}

} // namespace

std::uint64_t write_refactored(const RefactoredData<float> &r,
                               const std::string &path) {
  return write_refactored_impl(r, path);
}
std::uint64_t write_refactored(const RefactoredData<double> &r,
                               const std::string &path) {
  return write_refactored_impl(r, path);
}

RefactorFileHeader read_refactored_header(const std::string &path) {
  // headers are small; one bounded read suffices
  const auto buf = read_file_prefix(path, 1 << 20);
  ByteReader r(buf);
  RefactorFileHeader h = read_header_fields(r, kMagic);
  h.class_records.resize(h.levels + 1);
  for (auto &rec : h.class_records) {
    rec.bytes = r.u64();
    rec.crc = r.u32();
  }
  h.header_bytes = r.offset();
  return h;
}

ReadResult read_refactored(const std::string &path,
                           std::optional<std::size_t> classes) {
  RefactorFileHeader h = read_refactored_header(path);
  const std::size_t want = classes ? *classes : h.levels;
  if (want > h.levels)
    throw MissingClass("requested class " + std::to_string(want) +
                       " of a container with " + std::to_string(h.levels + 1) +
                       " classes");

  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open: " + path);
  in.seekg(static_cast<std::streamoff>(h.header_bytes));

  ReadResult result;
  result.header = h;
  result.classes_loaded = want;
  std::uint64_t consumed = h.header_bytes;

  auto load = [&](auto &refactored) {
    refactored.shape = h.shape;
    refactored.coords = h.coords;
    refactored.levels = h.levels;
    refactored.classes.resize(want + 1);
    using Real = typename std::decay_t<decltype(refactored.classes[0])>::
        value_type;
    for (std::size_t c = 0; c <= want; ++c) {
      const auto &rec = h.class_records[c];
      std::vector<std::uint8_t> buf(rec.bytes);
      in.read(reinterpret_cast<char *>(buf.data()),
              static_cast<std::streamsize>(rec.bytes));
      if (static_cast<std::uint64_t>(in.gcount()) != rec.bytes)
        throw MissingClass("class " + std::to_string(c) +
                           " payload is truncated");
      if (crc32(buf) != rec.crc)
        throw CorruptFile("crc mismatch in class " + std::to_string(c));
      refactored.classes[c] = payload_values<Real>(buf);
      consumed += rec.bytes;
    }
  };

  if (h.dtype == DType::f32) {
    RefactoredData<float> r;
    load(r);
    result.data = std::move(r);
  } else {
    RefactoredData<double> r;
    load(r);
    result.data = std::move(r);
  }
  result.bytes_consumed = consumed;
  return result;
}

// ---------------------------------------------------------------------------
// codecs

namespace {

class StoreCodec final : public LosslessCodec {
public:
  std::uint8_t id() const override { return 0; }
  std::string name() const override { return "store"; }
  std::vector<std::uint8_t>
  encode(std::span<const std::uint8_t> raw) const override {
    return {raw.begin(), raw.end()};
  }
  std::vector<std::uint8_t> decode(std::span<const std::uint8_t> enc,
                                   std::size_t raw_size) const override {
    if (enc.size() != raw_size)
      throw CorruptFile("stored block size mismatch");
    return {enc.begin(), enc.end()};
  }
};

class ZlibCodec final : public LosslessCodec {
public:
  std::uint8_t id() const override { return 1; }
  std::string name() const override { return "zlib"; }
  std::vector<std::uint8_t>
  encode(std::span<const std::uint8_t> raw) const override {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> out(bound);
    if (compress2(out.data(), &bound, raw.data(),
                  static_cast<uLong>(raw.size()), Z_DEFAULT_COMPRESSION) !=
        Z_OK)
      throw IoError("zlib compression failed");
    out.resize(bound);
    return out;
  }
  std::vector<std::uint8_t> decode(std::span<const std::uint8_t> enc,
                                   std::size_t raw_size) const override {
    std::vector<std::uint8_t> out(raw_size);
    uLongf len = static_cast<uLongf>(raw_size);
    if (uncompress(out.data(), &len, enc.data(),
                   static_cast<uLong>(enc.size())) != Z_OK ||
        len != raw_size)
      throw CorruptFile("zlib decompression failed");
    return out;
  }
};

} // namespace

const LosslessCodec &store_codec() {
  static StoreCodec c;
  return c;
}
const LosslessCodec &zlib_codec() {
  static ZlibCodec c;
  return c;
}
const LosslessCodec &codec_by_id(std::uint8_t id) {
  if (id == 0)
    return store_codec();
  if (id == 1)
    return zlib_codec();
  throw CorruptFile("unknown codec id " + std::to_string(id));
}
const LosslessCodec &codec_by_name(const std::string &name) {
  if (name == "store")
    return store_codec();
  if (name == "zlib")
    return zlib_codec();
  throw InvalidBound("unknown codec: " + name);
}

// ---------------------------------------------------------------------------
// quantization + container

namespace detail {

namespace {
template <typename Real>
void quantize_impl(std::span<const Real> values, double bin,
                   std::vector<std::int64_t> &out) {
  out.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = std::llround(double(values[i]) / bin);
}
} // namespace

void quantize_class(std::span<const float> values, double bin,
                    std::vector<std::int64_t> &out) {
  quantize_impl(values, bin, out);
}
void quantize_class(std::span<const double> values, double bin,
                    std::vector<std::int64_t> &out) {
  quantize_impl(values, bin, out);
}

std::vector<std::uint8_t> zigzag_encode(std::span<const std::int64_t> q) {
  std::vector<std::uint8_t> out;
  out.reserve(q.size());
  for (std::int64_t v : q) {
    std::uint64_t u =
        (static_cast<std::uint64_t>(v) << 1) ^
        static_cast<std::uint64_t>(v >> 63);
    while (u >= 0x80) {
      out.push_back(std::uint8_t(u) | 0x80);
      u >>= 7;
    }
    out.push_back(std::uint8_t(u));
  }
  return out;
}

std::vector<std::int64_t> zigzag_decode(std::span<const std::uint8_t> bytes,
                                        std::size_t count) {
  std::vector<std::int64_t> out;
  out.reserve(count);
  std::size_t at = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t u = 0;
    int shift = 0;
    for (;;) {
      if (at >= bytes.size())
        throw CorruptFile("truncated varint stream");
      const std::uint8_t b = bytes[at++];
      u |= std::uint64_t(b & 0x7F) << shift;
      if (!(b & 0x80))
        break;
      shift += 7;
      if (shift > 63)
        throw CorruptFile("varint overflow");
    }
    out.push_back(static_cast<std::int64_t>(u >> 1) ^
                  -static_cast<std::int64_t>(u & 1));
  }
  if (at != bytes.size())
    throw CorruptFile("trailing bytes in varint stream");
  return out;
}

std::vector<std::uint8_t>
build_compressed_container(const RefactorFileHeader &meta, double eb,
                           double bin, double measured_error,
                           const LosslessCodec &codec,
                           const std::vector<std::vector<std::int64_t>> &q) {
  ByteWriter w;
  w.bytes(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t *>(kCompressedMagic), 4));
  w.u8(kVersion);
  w.u8(codec.id());
  w.u8(static_cast<std::uint8_t>(meta.dtype));
  w.u8(static_cast<std::uint8_t>(meta.shape.size()));
  for (std::size_t e : meta.shape)
    w.u64(e);
  for (std::size_t d = 0; d < meta.shape.size(); ++d)
    for (double c : meta.coords[d])
      w.f64(c);
  w.u64(meta.levels);
  w.f64(eb);
  w.f64(bin);
  w.f64(measured_error);
  for (const auto &cls : q) {
    const auto raw = zigzag_encode(cls);
    const auto enc = codec.encode(raw);
    w.u64(cls.size());
    w.u64(raw.size());
    w.u64(enc.size());
    w.bytes(enc);
  }
  return w.data();
}

ParsedContainer parse_compressed_container(std::span<const std::uint8_t> b) {
  ByteReader r(b);
  auto m = r.take(4);
  if (std::memcmp(m.data(), kCompressedMagic, 4) != 0)
    throw CorruptFile("bad magic");
  if (r.u8() != kVersion)
    throw CorruptFile("unsupported version");
  ParsedContainer out;
  out.codec_id = r.u8();
  const std::uint8_t dt = r.u8();
  if (dt != 4 && dt != 8)
    throw CorruptFile("unsupported dtype");
  out.meta.dtype = static_cast<DType>(dt);
  const std::uint8_t nd = r.u8();
  if (nd < 1 || nd > kMaxDims)
    throw CorruptFile("bad dimension count");
  out.meta.shape.resize(nd);
  for (auto &e : out.meta.shape)
    e = r.u64();
  out.meta.coords.resize(nd);
  for (std::uint8_t d = 0; d < nd; ++d) {
    out.meta.coords[d].resize(out.meta.shape[d]);
    for (auto &c : out.meta.coords[d])
      c = r.f64();
  }
  out.meta.levels = r.u64();
  if (out.meta.levels > 64)
    throw CorruptFile("implausible level count");
  out.eb = r.f64();
  out.bin = r.f64();
  out.measured_error = r.f64();
  const LosslessCodec &codec = codec_by_id(out.codec_id);
  out.quantized.resize(out.meta.levels + 1);
  for (auto &cls : out.quantized) {
    const std::uint64_t count = r.u64();
    const std::uint64_t raw_size = r.u64();
    const std::uint64_t enc_size = r.u64();
    const auto enc = r.take(enc_size);
    const auto raw = codec.decode(enc, raw_size);
    cls = zigzag_decode(raw, count);
  }
  return out;
}

} // namespace detail

DecompressResult decompress(std::span<const std::uint8_t> bytes) {
  const detail::ParsedContainer c = detail::parse_compressed_container(bytes);
  DecompressResult out;
  out.report.error_bound = c.eb;
  out.report.bin_width = c.bin;
  out.report.measured_max_abs_error = c.measured_error;
  out.report.codec = codec_by_id(c.codec_id).name();

  auto rebuild = [&](auto tag) {
    using Real = decltype(tag);
    RefactoredData<Real> r;
    r.shape = c.meta.shape;
    r.coords = c.meta.coords;
    r.levels = c.meta.levels;
    r.classes.resize(c.quantized.size());
    for (std::size_t i = 0; i < c.quantized.size(); ++i) {
      r.classes[i].resize(c.quantized[i].size());
      for (std::size_t j = 0; j < c.quantized[i].size(); ++j)
        r.classes[i][j] = Real(double(c.quantized[i][j]) * c.bin);
    }
    return recompose(r, r.levels);
  };
  if (c.meta.dtype == DType::f32)
    out.grid = rebuild(float{});
  else
    out.grid = rebuild(double{});
  return out;
}

// ---------------------------------------------------------------------------
// raw value I/O

template <typename Real>
std::vector<Real> read_raw_values(const std::string &path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in)
    throw IoError("cannot open: " + path);
  const std::size_t bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(Real) != 0)
    throw ShapeError("raw file size is not a multiple of the element size");
  in.seekg(0);
  std::vector<std::uint8_t> buf(bytes);
  in.read(reinterpret_cast<char *>(buf.data()),
          static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes)
    throw IoError("short read: " + path);
  return payload_values<Real>(buf);
}

template std::vector<float> read_raw_values<float>(const std::string &);
template std::vector<double> read_raw_values<double>(const std::string &);

template <typename Real>
void write_raw_values(const std::string &path, std::span<const Real> values) {
  const auto bytes = payload_bytes(std::vector<Real>(values.begin(),
                                                     values.end()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IoError("write failed: " + path);
}

template void write_raw_values<float>(const std::string &,
                                      std::span<const float>);
template void write_raw_values<double>(const std::string &,
                                       std::span<const double>);

std::vector<double> read_raw_doubles(const std::string &path) {
  return read_raw_values<double>(path);
}

} // namespace mgr
