#pragma once

#include "tcq/layer_quant.hpp"

#include <filesystem>
#include <string_view>

namespace tcq {

// Matrix file: magic "TCQMAT01", u64 rows, u64 cols, then rows*cols
// little-endian IEEE-754 doubles in row-major order.
inline constexpr std::string_view kMatrixMagic = "TCQMAT01";
inline constexpr std::size_t kMatrixHeaderBytes = 24;

std::vector<std::uint8_t> encode_matrix(const Matrix &m);
// Throws FormatError on a bad magic, truncated payload, trailing bytes or
// an empty matrix.
Matrix decode_matrix(std::span<const std::uint8_t> bytes);

void write_matrix_file(const std::filesystem::path &path, const Matrix &m);
Matrix read_matrix_file(const std::filesystem::path &path);

// Snapshot file layout (all integers little-endian):
//
//   off  size  field
//     0     8  magic "TCQSNP01"
//     8     1  k
//     9     1  V
//    10     1  topology (0 shift_register, 1 fully_connected)
//    11     1  scale_bits
//    12     4  L
//    16     4  group_size
//    20     8  permutation_seed
//    28     8  rows
//    36     8  cols
//    44     8  padded_rows
//    52     8  padded_cols
//    60     8  transform_seed
//    68     1  incoherence flag
//    69     8  scale base (f64)
//    77     8  n_bits of the code stream
//    85     8  number of scale groups
//    93        code stream bytes, ceil(n_bits / 8)
//              scale codes, scale_bits each, MSB first, ceil(groups*bits/8)
inline constexpr std::string_view kSnapshotMagic = "TCQSNP01";
inline constexpr std::size_t kSnapshotHeaderBytes = 93;

std::vector<std::uint8_t> encode_snapshot(const QuantizedMatrix &q);
QuantizedMatrix decode_snapshot(std::span<const std::uint8_t> bytes);

// Writes `path` plus a JSON sidecar at `path` + ".json".
void write_snapshot(const std::filesystem::path &path, const QuantizedMatrix &q);
QuantizedMatrix read_snapshot(const std::filesystem::path &path);
std::filesystem::path sidecar_path(const std::filesystem::path &path);

// Temp file in the same directory, then rename over `path`.
void atomic_write(const std::filesystem::path &path,
                  std::span<const std::uint8_t> bytes);
void atomic_write(const std::filesystem::path &path, std::string_view text);

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);

} // namespace tcq
