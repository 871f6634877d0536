#include "doctest.h"
#include "oracles.hpp"

#include "tcq/io.hpp"
#include "tcq/serialization.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace tcq;
namespace fs = std::filesystem;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed,
                     double sigma = 1.0) {
  Matrix m(r, c);
  fill_normal(m.data, seed, sigma);
  return m;
}

fs::path temp_dir(const std::string &name) {
  auto p = fs::temp_directory_path() / ("tcq_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

} // namespace

TEST_CASE("fitted scales round up and cover every group") {
  std::vector<double> x(100);
  fill_normal(x, 4, 0.01);
  const double cmax = 1.8627318674216515;
  for (unsigned bits : {0u, 1u, 4u, 8u}) {
    const auto t = fit_scales(x, cmax, bits, 16);
    CHECK(t.codes.size() == 7);
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(std::abs(x[i]) / t.element_scale(i) <= cmax * (1 + 1e-12));
    if (bits == 0)
      for (std::size_t g = 0; g < 7; ++g)
        CHECK(t.group_scale(g) == t.base);
  }
  // a group whose max is half the global max gets code 7 of 16
  std::vector<double> y{1.0, 0.5};
  const auto t = fit_scales(y, 1.0, 4, 1);
  CHECK(t.base == 1.0);
  CHECK(t.codes[0] == 15);
  CHECK(t.codes[1] == 7);
  CHECK(t.group_scale(1) == 0.5);
  CHECK_THROWS_AS(fit_scales(y, 1.0, 4, 0), ParameterError);
  CHECK_THROWS_AS(fit_scales(y, 1.0, 17, 4), ParameterError);
}

TEST_CASE("quantize_matrix encodes each block with Viterbi") {
  const QuantizerConfig qc{};
  const auto trellis = build_trellis(qc.code);
  const Matrix w = random_matrix(16, 32, 5, 0.01);
  const auto q = quantize_matrix(w, qc, 99);
  const Matrix x = q.geometry.to_transformed(w);
  const auto values = dequantize_transformed(q, trellis);
  for (std::size_t b = 0; b < q.n_blocks(); ++b) {
    std::vector<double> scaled(16);
    for (std::size_t t = 0; t < 16; ++t)
      scaled[t] = x.data[b * 16 + t] / q.scales.element_scale(b * 16 + t);
    const auto cw = viterbi_encode(scaled, trellis).codeword;
    for (std::size_t t = 0; t < 16; ++t)
      CHECK(values.data[b * 16 + t] == q.scales.element_scale(b * 16 + t) * cw[t]);
  }
  CHECK(quantize_matrix(w, qc, 99) == q);
  CHECK(q.bits.n_bits == 16 * 32 * 2);
}

TEST_CASE("padding: non power-of-two matrices round trip through the geometry") {
  const QuantizerConfig qc{};
  const auto trellis = build_trellis(qc.code);
  const Matrix w = random_matrix(3, 5, 6);
  const auto q = quantize_matrix(w, qc, 1);
  CHECK(q.geometry.padded_rows == 4);
  CHECK(q.geometry.padded_cols == 8);
  const Matrix back = dequantize_matrix(q, trellis);
  CHECK(back.rows == 3);
  CHECK(back.cols == 5);
  CHECK_THROWS_AS(quantize_matrix(w, qc, 1, /*incoherence=*/false), DimensionError);
  CHECK_THROWS_AS(make_geometry(0, 4, true, 0), DimensionError);
}

TEST_CASE("an all-zero matrix dequantizes to zero") {
  const QuantizerConfig qc{};
  const auto q = quantize_matrix(Matrix(16, 16), qc, 3);
  CHECK(q.scales.base == 0.0);
  for (double v : dequantize_matrix(q, build_trellis(qc.code)).data)
    CHECK(v == 0.0);
}

TEST_CASE("decode_blocks agrees with hard_quantize") {
  const auto trellis = build_trellis(16, 2, 2, 7);
  std::vector<double> x(16 * 9);
  fill_normal(x, 8);
  const auto scales = fit_scales(x, trellis.max_abs_emission(), 4, 16);
  const auto code = hard_quantize(x, scales, trellis, 3);
  const auto cw = decode_blocks(code.bits, trellis, 9);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(code.values[i] == scales.element_scale(i) * cw[i]);
  CHECK_THROWS_AS(decode_blocks(code.bits, trellis, 8), FormatError);
}

TEST_CASE("matrix file round trip and format errors") {
  const auto dir = temp_dir("matrix");
  const Matrix m = random_matrix(3, 7, 1);
  write_matrix_file(dir / "m.tcqm", m);
  CHECK(read_matrix_file(dir / "m.tcqm") == m);
  auto bytes = encode_matrix(m);
  CHECK(bytes.size() == kMatrixHeaderBytes + 21 * 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "TCQMAT01");
  // little-endian rows field
  CHECK(bytes[8] == 3);
  CHECK(bytes[9] == 0);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_matrix(bad), FormatError);
  auto trunc = bytes;
  trunc.pop_back();
  CHECK_THROWS_AS(decode_matrix(trunc), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_matrix(trailing), FormatError);
  CHECK_THROWS_AS(decode_matrix(encode_matrix(Matrix(0, 4))), FormatError);
  CHECK_THROWS_AS(decode_matrix(std::vector<std::uint8_t>{}), FormatError);
  CHECK_THROWS_AS(read_matrix_file(dir / "missing.tcqm"), FormatError);

  // no temp files left behind
  std::size_t files = 0;
  for (const auto &e : fs::directory_iterator(dir)) {
    (void)e;
    ++files;
  }
  CHECK(files == 1);
}

TEST_CASE("snapshot encode/decode round trip") {
  for (unsigned bits : {0u, 3u, 4u}) {
    QuantizerConfig qc{};
    qc.scale_bits = bits;
    const auto trellis = build_trellis(qc.code);
    const auto q = quantize_matrix(random_matrix(8, 24, 2, 0.02), qc, 4);
    const auto bytes = encode_snapshot(q);
    auto back = decode_snapshot(bytes);
    back.distortion = q.distortion; // not stored in the binary
    CHECK(back == q);
    CHECK(dequantize_matrix(back, trellis) == dequantize_matrix(q, trellis));
  }
}

TEST_CASE("snapshot size is 2.25 bits per weight plus the header") {
  const QuantizerConfig qc{}; // k=2, 4-bit scales, groups of 16
  const auto q = quantize_matrix(random_matrix(64, 64, 3, 0.01), qc, 5);
  const auto bytes = encode_snapshot(q);
  CHECK(bytes.size() == kSnapshotHeaderBytes + 1024 + 128);
  const double payload_bpw = 8.0 * static_cast<double>(bytes.size() - kSnapshotHeaderBytes) / 4096.0;
  CHECK(payload_bpw == 2.25);
  CHECK(payload_bpw == rate_bpw(build_trellis(qc.code), 4, 16));
}

TEST_CASE("corrupt snapshots are rejected") {
  const auto q = quantize_matrix(random_matrix(16, 16, 3), QuantizerConfig{}, 5);
  const auto bytes = encode_snapshot(q);
  auto b1 = bytes;
  b1[10] = 7; // topology
  CHECK_THROWS_AS(decode_snapshot(b1), FormatError);
  auto b2 = bytes;
  b2[77] ^= 1; // n_bits
  CHECK_THROWS_AS(decode_snapshot(b2), FormatError);
  auto b3 = bytes;
  b3.pop_back();
  CHECK_THROWS_AS(decode_snapshot(b3), FormatError);
  auto b4 = bytes;
  b4[8] = 0; // k = 0
  CHECK_THROWS_AS(decode_snapshot(b4), FormatError);
}

TEST_CASE("snapshot files carry a JSON sidecar") {
  const auto dir = temp_dir("snapshot");
  const auto q = quantize_matrix(random_matrix(16, 16, 3), QuantizerConfig{}, 5);
  write_snapshot(dir / "s.tcq", q);
  auto back = read_snapshot(dir / "s.tcq");
  back.distortion = q.distortion;
  CHECK(back == q);
  const auto side = read_file(sidecar_path(dir / "s.tcq"));
  const auto j = parse_json(std::string(side.begin(), side.end()));
  CHECK(quantizer_config_from_json(j.at("config")) == q.config);
  CHECK(j.at("config").at("topology") == "shift_register");
  CHECK(j.at("file_bytes").get<std::size_t>() == fs::file_size(dir / "s.tcq"));
}

TEST_CASE("quantizer config JSON") {
  QuantizerConfig qc{};
  qc.code = {8, 1, 3, 42, Topology::ShiftRegister};
  qc.scale_bits = 6;
  qc.group_size = 32;
  CHECK(quantizer_config_from_json(to_json(qc)) == qc);
  CHECK(quantizer_config_from_json(parse_json("{}")) == QuantizerConfig{});
  CHECK_THROWS_AS(quantizer_config_from_json(parse_json(R"({"bogus": 1})")), FormatError);
  CHECK_THROWS_AS(quantizer_config_from_json(parse_json(R"({"L": -16})")), FormatError);
  CHECK_THROWS_AS(quantizer_config_from_json(parse_json(R"({"k": 0})")), ParameterError);
  CHECK_THROWS_AS(quantizer_config_from_json(parse_json(R"({"topology": "ring"})")),
                  ParameterError);
  CHECK_THROWS_AS(quantizer_config_from_json(parse_json("[1, 2]")), FormatError);
  CHECK_THROWS_AS(
      quantizer_config_from_json(parse_json(R"({"topology": "fully_connected", "V": 2})")),
      ParameterError);
}
