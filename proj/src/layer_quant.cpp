#include "tcq/layer_quant.hpp"

#include <algorithm>
#include <cmath>

namespace tcq {

double ScaleTable::group_scale(std::size_t g) const {
  if (bits == 0)
    return base;
  const double levels = static_cast<double>(1u << bits);
  return base * (static_cast<double>(codes.at(g)) + 1.0) / levels;
}

ScaleTable fit_scales(std::span<const double> x, double max_abs_emission,
                      unsigned bits, std::size_t group_size) {
  if (group_size == 0)
    throw ParameterError("group_size must be >= 1");
  if (bits > 16)
    throw ParameterError("scale_bits must be <= 16");
  if (!(max_abs_emission > 0.0))
    throw ParameterError("emission range must be positive");
  ScaleTable t;
  t.bits = bits;
  t.group_size = group_size;
  const std::size_t n_groups = (x.size() + group_size - 1) / group_size;
  std::vector<double> raw(n_groups, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]))
      throw NumericalError("non-finite weight");
    auto &r = raw[i / group_size];
    r = std::max(r, std::abs(x[i]) / max_abs_emission);
  }
  t.base = raw.empty() ? 0.0 : *std::max_element(raw.begin(), raw.end());
  t.codes.assign(n_groups, 0);
  if (bits == 0 || t.base == 0.0)
    return t;
  const std::uint32_t levels = 1u << bits;
  for (std::size_t g = 0; g < n_groups; ++g) {
    auto q = static_cast<std::int64_t>(
                 std::ceil(raw[g] * levels / t.base)) - 1;
    q = std::clamp<std::int64_t>(q, 0, levels - 1);
    // guard against the ceil landing one code low after rounding
    while (q + 1 < static_cast<std::int64_t>(levels) &&
           t.base * static_cast<double>(q + 1) / levels < raw[g])
      ++q;
    t.codes[g] = static_cast<std::uint16_t>(q);
  }
  return t;
}

LayerGeometry make_geometry(std::size_t rows, std::size_t cols,
                            bool incoherence, std::uint64_t transform_seed) {
  if (rows == 0 || cols == 0)
    throw DimensionError("empty matrix");
  LayerGeometry g;
  g.rows = rows;
  g.cols = cols;
  g.incoherence = incoherence;
  g.transform_seed = transform_seed;
  g.padded_rows = incoherence ? next_power_of_two(rows) : rows;
  g.padded_cols = incoherence ? next_power_of_two(cols) : cols;
  return g;
}

Matrix LayerGeometry::to_transformed(const Matrix &w) const {
  if (w.rows != rows || w.cols != cols)
    throw DimensionError("matrix does not match layer geometry");
  return incoherence ? incoherence_transform(w, transform_seed) : w;
}

Matrix LayerGeometry::from_transformed(const Matrix &x) const {
  if (x.rows != padded_rows || x.cols != padded_cols)
    throw DimensionError("matrix does not match transformed geometry");
  return incoherence
             ? inverse_incoherence_transform(x, transform_seed, rows, cols)
             : x;
}

HardCode hard_quantize(std::span<const double> x, const ScaleTable &scales,
                       const TrellisConfig &config, unsigned workers) {
  const std::size_t L = config.L();
  if (x.size() % L != 0)
    throw DimensionError("element count is not a multiple of L");
  std::vector<double> scaled(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = scales.element_scale(i);
    scaled[i] = s > 0.0 ? x[i] / s : 0.0;
  }
  const auto paths = viterbi_encode_batch(scaled, config, workers);
  HardCode out;
  out.values.resize(x.size());
  BitWriter writer;
  for (std::size_t b = 0; b < paths.size(); ++b) {
    BitReader r(paths[b].bits);
    while (r.remaining() > 0)
      writer.put(r.get(config.k()), config.k());
    out.distortion += paths[b].distortion;
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t i = b * L + t;
      out.values[i] = scales.element_scale(i) * paths[b].codeword[t];
    }
  }
  out.bits = std::move(writer).finish();
  return out;
}

std::vector<double> decode_blocks(const BitStream &bits,
                                  const TrellisConfig &config,
                                  std::size_t n_blocks) {
  const std::size_t per_block = config.L() * config.k();
  if (bits.n_bits != per_block * n_blocks ||
      bits.bytes.size() != (bits.n_bits + 7) / 8)
    throw FormatError("bitstream length does not match block count");
  std::vector<double> out;
  out.reserve(n_blocks * config.L());
  BitReader reader(bits);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    BitWriter w;
    for (std::size_t t = 0; t < config.L(); ++t)
      w.put(reader.get(config.k()), config.k());
    const auto cw = decode(std::move(w).finish(), config);
    out.insert(out.end(), cw.begin(), cw.end());
  }
  return out;
}

QuantizedMatrix quantize_matrix(const Matrix &w, const QuantizerConfig &config,
                                std::uint64_t transform_seed, bool incoherence,
                                unsigned workers) {
  validate(config);
  const auto trellis = build_trellis(config.code);
  QuantizedMatrix q;
  q.config = config;
  q.geometry = make_geometry(w.rows, w.cols, incoherence, transform_seed);
  const Matrix x = q.geometry.to_transformed(w);
  q.scales = fit_scales(x.data, trellis.max_abs_emission(), config.scale_bits,
                        config.group_size);
  auto code = hard_quantize(x.data, q.scales, trellis, workers);
  q.bits = std::move(code.bits);
  q.distortion = code.distortion;
  return q;
}

Matrix dequantize_transformed(const QuantizedMatrix &q,
                              const TrellisConfig &config) {
  if (!(config.params() == q.config.code))
    throw ParameterError("trellis does not match quantized matrix");
  const auto cw = decode_blocks(q.bits, config, q.n_blocks());
  Matrix x(q.geometry.padded_rows, q.geometry.padded_cols);
  for (std::size_t i = 0; i < cw.size(); ++i)
    x.data[i] = q.scales.element_scale(i) * cw[i];
  return x;
}

Matrix dequantize_matrix(const QuantizedMatrix &q, const TrellisConfig &config) {
  return q.geometry.from_transformed(dequantize_transformed(q, config));
}

} // namespace tcq
