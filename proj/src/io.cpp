#include "tcq/io.hpp"

#include "tcq/serialization.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unistd.h>

namespace tcq {

namespace {

class ByteWriter {
public:
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
      bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void append(std::span<const std::uint8_t> b) {
    bytes_.insert(bytes_.end(), b.begin(), b.end());
  }
  std::vector<std::uint8_t> take() && { return std::move(bytes_); }

private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::memcmp(b_.data() + pos_, magic.data(), magic.size()) != 0)
      throw FormatError("bad magic, expected " + std::string(magic));
    pos_ += magic.size();
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n)
      throw FormatError("truncated file");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::size_t checked_product(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > SIZE_MAX / a)
    throw FormatError("dimension overflow");
  return static_cast<std::size_t>(a * b);
}

} // namespace

std::vector<std::uint8_t> encode_matrix(const Matrix &m) {
  ByteWriter w;
  w.raw(kMatrixMagic);
  w.u64(m.rows);
  w.u64(m.cols);
  for (double v : m.data)
    w.f64(v);
  return std::move(w).take();
}

Matrix decode_matrix(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(kMatrixMagic);
  const auto rows = r.u64(), cols = r.u64();
  if (rows == 0 || cols == 0)
    throw FormatError("empty matrix");
  const std::size_t n = checked_product(rows, cols);
  if (r.remaining() / 8 < n)
    throw FormatError("truncated matrix payload");
  if (r.remaining() != n * 8)
    throw FormatError("trailing bytes after matrix payload");
  Matrix m(rows, cols);
  for (auto &v : m.data)
    v = r.f64();
  return m;
}

void write_matrix_file(const std::filesystem::path &path, const Matrix &m) {
  atomic_write(path, encode_matrix(m));
}

Matrix read_matrix_file(const std::filesystem::path &path) {
  return decode_matrix(read_file(path));
}

std::vector<std::uint8_t> encode_snapshot(const QuantizedMatrix &q) {
  const auto &c = q.config;
  ByteWriter w;
  w.raw(kSnapshotMagic);
  w.u8(static_cast<std::uint8_t>(c.code.k));
  w.u8(static_cast<std::uint8_t>(c.code.V));
  w.u8(c.code.topology == Topology::ShiftRegister ? 0 : 1);
  w.u8(static_cast<std::uint8_t>(c.scale_bits));
  w.u32(static_cast<std::uint32_t>(c.code.L));
  w.u32(static_cast<std::uint32_t>(c.group_size));
  w.u64(c.code.permutation_seed);
  w.u64(q.geometry.rows);
  w.u64(q.geometry.cols);
  w.u64(q.geometry.padded_rows);
  w.u64(q.geometry.padded_cols);
  w.u64(q.geometry.transform_seed);
  w.u8(q.geometry.incoherence ? 1 : 0);
  w.f64(q.scales.base);
  w.u64(q.bits.n_bits);
  w.u64(q.scales.codes.size());
  w.append(q.bits.bytes);
  if (c.scale_bits > 0) {
    BitWriter sw;
    for (auto code : q.scales.codes)
      sw.put(code, c.scale_bits);
    w.append(std::move(sw).finish().bytes);
  }
  return std::move(w).take();
}

QuantizedMatrix decode_snapshot(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(kSnapshotMagic);
  QuantizedMatrix q;
  auto &c = q.config;
  c.code.k = r.u8();
  c.code.V = r.u8();
  const auto topo = r.u8();
  if (topo > 1)
    throw FormatError("unknown topology code");
  c.code.topology = topo == 0 ? Topology::ShiftRegister : Topology::FullyConnected;
  c.scale_bits = r.u8();
  c.code.L = r.u32();
  c.group_size = r.u32();
  c.code.permutation_seed = r.u64();
  try {
    validate(c);
  } catch (const ParameterError &e) {
    throw FormatError(std::string("invalid snapshot config: ") + e.what());
  }
  auto &g = q.geometry;
  g.rows = r.u64();
  g.cols = r.u64();
  g.padded_rows = r.u64();
  g.padded_cols = r.u64();
  g.transform_seed = r.u64();
  g.incoherence = r.u8() != 0;
  if (g.rows == 0 || g.cols == 0 || g.padded_rows < g.rows ||
      g.padded_cols < g.cols)
    throw FormatError("invalid snapshot geometry");
  const std::size_t n = checked_product(g.padded_rows, g.padded_cols);
  if (n % c.code.L != 0)
    throw FormatError("element count is not a multiple of L");
  q.scales.bits = c.scale_bits;
  q.scales.group_size = c.group_size;
  q.scales.base = r.f64();
  const auto n_bits = r.u64();
  const auto n_groups = r.u64();
  if (n_bits != n * c.code.k)
    throw FormatError("code stream length does not match geometry");
  if (n_groups != (n + c.group_size - 1) / c.group_size)
    throw FormatError("scale group count does not match geometry");
  q.bits.n_bits = n_bits;
  const auto code_bytes = r.bytes((n_bits + 7) / 8);
  q.bits.bytes.assign(code_bytes.begin(), code_bytes.end());
  q.scales.codes.assign(n_groups, 0);
  if (c.scale_bits > 0) {
    BitStream s;
    s.n_bits = checked_product(n_groups, c.scale_bits);
    const auto sb = r.bytes((s.n_bits + 7) / 8);
    s.bytes.assign(sb.begin(), sb.end());
    BitReader sr(s);
    for (auto &code : q.scales.codes)
      code = static_cast<std::uint16_t>(sr.get(c.scale_bits));
  }
  if (r.remaining() != 0)
    throw FormatError("trailing bytes after snapshot payload");
  return q;
}

std::filesystem::path sidecar_path(const std::filesystem::path &path) {
  auto p = path;
  p += ".json";
  return p;
}

void write_snapshot(const std::filesystem::path &path, const QuantizedMatrix &q) {
  const auto bytes = encode_snapshot(q);
  atomic_write(path, bytes);
  atomic_write(sidecar_path(path), snapshot_sidecar(q, bytes.size()).dump(2) + "\n");
}

QuantizedMatrix read_snapshot(const std::filesystem::path &path) {
  return decode_snapshot(read_file(path));
}

void atomic_write(const std::filesystem::path &path,
                  std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char *>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out.flush())
      throw FormatError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw FormatError("cannot rename into " + path.string());
  }
}

void atomic_write(const std::filesystem::path &path, std::string_view text) {
  atomic_write(path, std::span(reinterpret_cast<const std::uint8_t *>(text.data()),
                               text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace tcq
