#pragma once

#include "tcq/viterbi.hpp"

namespace tcq {

// Per-group scales stored as `bits`-wide codes against one per-matrix base.
// Code q represents base * (q + 1) / 2^bits; with bits == 0 every group
// uses the base.
struct ScaleTable {
  unsigned bits = 4;
  std::size_t group_size = 16;
  double base = 0.0;
  std::vector<std::uint16_t> codes; // one per group

  double group_scale(std::size_t g) const;
  double element_scale(std::size_t i) const {
    return group_scale(i / group_size);
  }
  bool operator==(const ScaleTable &) const = default;
};

// Fits max-abs / max|c| per group, then rounds each scale up to the next
// representable code so scaled weights stay inside the emission range.
ScaleTable fit_scales(std::span<const double> x, double max_abs_emission,
                      unsigned bits, std::size_t group_size);

// Forward/back to the domain the trellis sees: the (padded) incoherence
// rotation when enabled, the identity otherwise.
struct LayerGeometry {
  std::size_t rows = 0, cols = 0;               // original
  std::size_t padded_rows = 0, padded_cols = 0; // transformed domain
  bool incoherence = true;
  std::uint64_t transform_seed = 0;

  std::size_t n_elements() const { return padded_rows * padded_cols; }
  Matrix to_transformed(const Matrix &w) const;
  Matrix from_transformed(const Matrix &x) const;
  bool operator==(const LayerGeometry &) const = default;
};

LayerGeometry make_geometry(std::size_t rows, std::size_t cols,
                            bool incoherence, std::uint64_t transform_seed);

// Hard code of a transformed-domain vector with fixed scales.
struct HardCode {
  std::vector<double> values; // scale * c(s_t), element-aligned with x
  BitStream bits;             // blocks back to back, L*k bits each
  double distortion = 0.0;    // 1/2 Σ (x/scale - c)^2, trellis units
};

HardCode hard_quantize(std::span<const double> x, const ScaleTable &scales,
                       const TrellisConfig &config, unsigned workers = 1);

// Emission values (unscaled) replayed from a concatenated block stream.
std::vector<double> decode_blocks(const BitStream &bits,
                                  const TrellisConfig &config,
                                  std::size_t n_blocks);

struct QuantizedMatrix {
  QuantizerConfig config;
  LayerGeometry geometry;
  ScaleTable scales;
  BitStream bits;
  double distortion = 0.0;

  std::size_t n_blocks() const { return geometry.n_elements() / config.code.L; }
  bool operator==(const QuantizedMatrix &) const = default;
};

// Element x is divided by its group scale before encoding. Divisions by a
// zero scale (an all-zero matrix) encode zero.
QuantizedMatrix quantize_matrix(const Matrix &w, const QuantizerConfig &config,
                                std::uint64_t transform_seed,
                                bool incoherence = true, unsigned workers = 1);

// Scaled codewords in the transformed domain.
Matrix dequantize_transformed(const QuantizedMatrix &q,
                              const TrellisConfig &config);
// Back in the original domain.
Matrix dequantize_matrix(const QuantizedMatrix &q, const TrellisConfig &config);

} // namespace tcq
