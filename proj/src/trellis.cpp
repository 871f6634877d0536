#include "tcq/trellis.hpp"

#include "tcq/normal.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <tuple>

namespace tcq {

std::string to_string(Topology t) {
  return t == Topology::ShiftRegister ? "shift_register" : "fully_connected";
}

Topology topology_from_string(const std::string &s) {
  if (s == "shift_register")
    return Topology::ShiftRegister;
  if (s == "fully_connected")
    return Topology::FullyConnected;
  throw ParameterError("unknown topology '" + s + "'");
}

namespace {

void check_code_params(std::size_t L, unsigned k, unsigned V,
                       Topology topology) {
  if (k < 1)
    throw ParameterError("trellis: k must be >= 1");
  if (L < 1)
    throw ParameterError("trellis: L must be >= 1");
  if (k + V > 16)
    throw ParameterError("trellis: k + V must be <= 16");
  if (topology == Topology::FullyConnected && V != 0)
    throw ParameterError(
        "trellis: fully connected topology needs 2^k == S (V == 0)");
}

std::shared_ptr<TransitionTables> make_tables(unsigned k, unsigned V,
                                              Topology topology) {
  auto t = std::make_shared<TransitionTables>();
  t->k = k;
  t->V = V;
  t->S = std::size_t{1} << (k + V);
  t->n_succ = std::size_t{1} << k;
  t->topology = topology;

  const std::size_t S = t->S;
  const std::size_t mask = S - 1;
  t->succ.resize(S * t->n_succ);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t b = 0; b < t->n_succ; ++b)
      t->succ[s * t->n_succ + b] = static_cast<std::uint32_t>(
          topology == Topology::ShiftRegister ? ((s << k) | b) & mask : b);

  // Invert by scanning; predecessors come out sorted by state index.
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> inv(S);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t b = 0; b < t->n_succ; ++b)
      inv[t->succ[s * t->n_succ + b]].emplace_back(
          static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(b));

  t->n_pred = inv[0].size();
  for (const auto &row : inv)
    if (row.size() != t->n_pred)
      throw Error("trellis: irregular predecessor count");
  t->pred_state.resize(S * t->n_pred);
  t->pred_bits.resize(S * t->n_pred);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t j = 0; j < t->n_pred; ++j) {
      t->pred_state[s * t->n_pred + j] = inv[s][j].first;
      t->pred_bits[s * t->n_pred + j] = inv[s][j].second;
    }
  return t;
}

} // namespace

std::shared_ptr<const TransitionTables> cached_tables(unsigned k, unsigned V,
                                                      Topology topology) {
  static std::mutex mu;
  static std::map<std::tuple<unsigned, unsigned, Topology>,
                  std::shared_ptr<const TransitionTables>>
      cache;
  std::lock_guard lock(mu);
  auto &slot = cache[{k, V, topology}];
  if (!slot)
    slot = make_tables(k, V, topology);
  return slot;
}

std::uint64_t TrellisConfig::fingerprint() const {
  std::uint64_t h = splitmix64(params_.L);
  h = splitmix64(h ^ params_.k);
  h = splitmix64(h ^ params_.V);
  h = splitmix64(h ^ params_.permutation_seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(params_.topology));
  return h;
}

TrellisConfig build_trellis(std::size_t L, unsigned k, unsigned V,
                            std::uint64_t permutation_seed,
                            Topology topology) {
  check_code_params(L, k, V, topology);

  TrellisConfig cfg;
  cfg.params_ = CodeParams{L, k, V, permutation_seed, topology};
  cfg.tables_ = cached_tables(k, V, topology);

  const std::size_t S = cfg.tables_->S;
  cfg.quantiles_.resize(S);
  for (std::size_t j = 0; j < S; ++j)
    cfg.quantiles_[j] =
        inverse_normal_cdf((static_cast<double>(j) + 0.5) / static_cast<double>(S));

  cfg.permutation_.resize(S);
  std::iota(cfg.permutation_.begin(), cfg.permutation_.end(), 0u);
  std::mt19937_64 rng(permutation_seed);
  std::shuffle(cfg.permutation_.begin(), cfg.permutation_.end(), rng);

  cfg.emission_.resize(S);
  for (std::size_t s = 0; s < S; ++s) {
    cfg.emission_[s] = cfg.quantiles_[cfg.permutation_[s]];
    cfg.max_abs_emission_ =
        std::max(cfg.max_abs_emission_, std::abs(cfg.emission_[s]));
  }
  return cfg;
}

TrellisConfig build_trellis(const CodeParams &p) {
  return build_trellis(p.L, p.k, p.V, p.permutation_seed, p.topology);
}

double rate_bpw(const TrellisConfig &config, unsigned scale_bits,
                std::size_t group_size) {
  if (group_size < 1)
    throw ParameterError("rate_bpw: group_size must be >= 1");
  return static_cast<double>(config.k()) +
         static_cast<double>(scale_bits) / static_cast<double>(group_size);
}

void validate(const QuantizerConfig &c) {
  check_code_params(c.code.L, c.code.k, c.code.V, c.code.topology);
  if (c.group_size < 1)
    throw ParameterError("group_size must be >= 1");
  if (c.scale_bits > 16)
    throw ParameterError("scale_bits must be <= 16");
}

// ============================================================================
// Incoherence processing
// ============================================================================

SignVector make_sign_vector(std::size_t d, std::uint64_t seed) {
  SignVector sv;
  sv.seed = seed;
  sv.signs.resize(d);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < d; ++i)
    sv.signs[i] = (rng() >> 63) ? -1.0 : 1.0;
  return sv;
}

void fwht(std::span<double> v) {
  const std::size_t n = v.size();
  if (!is_power_of_two(n))
    throw DimensionError("fwht: length must be a power of two");
  for (std::size_t h = 1; h < n; h <<= 1)
    for (std::size_t i = 0; i < n; i += h << 1)
      for (std::size_t j = i; j < i + h; ++j) {
        const double a = v[j];
        const double b = v[j + h];
        v[j] = a + b;
        v[j + h] = a - b;
      }
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  for (double &x : v)
    x *= norm;
}

namespace {

void fwht_columns(Matrix &m) {
  std::vector<double> col(m.rows);
  for (std::size_t j = 0; j < m.cols; ++j) {
    for (std::size_t i = 0; i < m.rows; ++i)
      col[i] = m(i, j);
    fwht(col);
    for (std::size_t i = 0; i < m.rows; ++i)
      m(i, j) = col[i];
  }
}

void fwht_rows(Matrix &m) {
  for (std::size_t i = 0; i < m.rows; ++i)
    fwht(m.row(i));
}

void scale_rows_cols(Matrix &m, const SignVector &left,
                     const SignVector &right) {
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j)
      m(i, j) *= left.signs[i] * right.signs[j];
}

} // namespace

Matrix incoherence_transform(const Matrix &w, std::uint64_t seed,
                             Padding padding) {
  if (w.rows == 0 || w.cols == 0)
    throw DimensionError("incoherence_transform: empty matrix");
  const bool pow2 = is_power_of_two(w.rows) && is_power_of_two(w.cols);
  if (!pow2 && padding == Padding::Reject)
    throw DimensionError(
        "incoherence_transform: dimensions must be powers of two");

  Matrix x(next_power_of_two(w.rows), next_power_of_two(w.cols));
  for (std::size_t i = 0; i < w.rows; ++i)
    for (std::size_t j = 0; j < w.cols; ++j)
      x(i, j) = w(i, j);

  const auto left = make_sign_vector(
      x.rows, derive_seed(seed, seed_stream::kLeftSigns));
  const auto right = make_sign_vector(
      x.cols, derive_seed(seed, seed_stream::kRightSigns));

  fwht_columns(x);
  fwht_rows(x);
  scale_rows_cols(x, left, right);
  return x;
}

Matrix inverse_incoherence_transform(const Matrix &x, std::uint64_t seed,
                                     std::size_t rows, std::size_t cols) {
  if (!is_power_of_two(x.rows) || !is_power_of_two(x.cols))
    throw DimensionError(
        "inverse_incoherence_transform: dimensions must be powers of two");
  rows = rows == 0 ? x.rows : rows;
  cols = cols == 0 ? x.cols : cols;
  if (rows > x.rows || cols > x.cols)
    throw DimensionError("inverse_incoherence_transform: target exceeds input");

  const auto left = make_sign_vector(
      x.rows, derive_seed(seed, seed_stream::kLeftSigns));
  const auto right = make_sign_vector(
      x.cols, derive_seed(seed, seed_stream::kRightSigns));

  Matrix m = x;
  scale_rows_cols(m, left, right);
  fwht_columns(m);
  fwht_rows(m);

  if (rows == m.rows && cols == m.cols)
    return m;
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out(i, j) = m(i, j);
  return out;
}

} // namespace tcq
