#pragma once

#include "tcq/common.hpp"

#include <memory>

namespace tcq {

enum class Topology { ShiftRegister, FullyConnected };

std::string to_string(Topology t);
Topology topology_from_string(const std::string &s);

// Transition structure shared by every trellis with the same (k, V,
// topology). Lookups are flat row-major arrays so hot loops index them
// directly.
struct TransitionTables {
  unsigned k = 0;
  unsigned V = 0;
  std::size_t S = 0;
  std::size_t n_succ = 0; // 2^k
  std::size_t n_pred = 0;
  Topology topology = Topology::ShiftRegister;

  std::vector<std::uint32_t> succ;       // S x n_succ, f(s, b)
  std::vector<std::uint32_t> pred_state; // S x n_pred, ascending
  std::vector<std::uint32_t> pred_bits;  // S x n_pred, b with f(pred, b) = s

  std::uint32_t next(std::size_t s, std::size_t b) const {
    return succ[s * n_succ + b];
  }
};

// Process-wide, lazily built, mutex-guarded cache of transition tables.
std::shared_ptr<const TransitionTables> cached_tables(unsigned k, unsigned V,
                                                      Topology topology);

struct CodeParams {
  std::size_t L = 16;
  unsigned k = 2;
  unsigned V = 2;
  std::uint64_t permutation_seed = 0;
  Topology topology = Topology::ShiftRegister;

  bool operator==(const CodeParams &) const = default;
};

// A trellis code. The initial state s0 is pinned to 0 so that L*k bits
// replay to a unique path; the final state is free.
class TrellisConfig {
public:
  const CodeParams &params() const { return params_; }
  std::size_t L() const { return params_.L; }
  unsigned k() const { return params_.k; }
  unsigned V() const { return params_.V; }
  std::size_t S() const { return tables_->S; }
  Topology topology() const { return params_.topology; }
  std::uint64_t permutation_seed() const { return params_.permutation_seed; }

  const TransitionTables &tables() const { return *tables_; }
  std::shared_ptr<const TransitionTables> shared_tables() const {
    return tables_;
  }

  // c(s) per state (after the incoherent permutation).
  std::span<const double> emission() const { return emission_; }
  // Sorted midpoint quantiles Phi^-1((j + 1/2) / S), before permutation.
  std::span<const double> quantiles() const { return quantiles_; }
  // State s emits quantiles()[permutation()[s]].
  std::span<const std::uint32_t> permutation() const { return permutation_; }
  double max_abs_emission() const { return max_abs_emission_; }

  static constexpr std::uint32_t kInitialState = 0;

  // Stable hash of the generating parameters.
  std::uint64_t fingerprint() const;

  bool operator==(const TrellisConfig &o) const {
    return params_ == o.params_ && emission_ == o.emission_;
  }

private:
  friend TrellisConfig build_trellis(std::size_t, unsigned, unsigned,
                                     std::uint64_t, Topology);
  CodeParams params_;
  std::shared_ptr<const TransitionTables> tables_;
  std::vector<double> emission_;
  std::vector<double> quantiles_;
  std::vector<std::uint32_t> permutation_;
  double max_abs_emission_ = 0.0;
};

TrellisConfig build_trellis(std::size_t L, unsigned k, unsigned V,
                            std::uint64_t permutation_seed = 0,
                            Topology topology = Topology::ShiftRegister);
TrellisConfig build_trellis(const CodeParams &p);

// Bits per weight including per-group scale storage.
double rate_bpw(const TrellisConfig &config, unsigned scale_bits,
                std::size_t group_size);

// Trellis parameters plus the per-group scale layout. This is the JSON
// document {L, k, V, permutation_seed, topology, scale_bits, group_size};
// emission and tables are never serialized.
struct QuantizerConfig {
  CodeParams code;
  unsigned scale_bits = 4;
  std::size_t group_size = 16;

  bool operator==(const QuantizerConfig &) const = default;
};

// Throws ParameterError on out-of-range fields.
void validate(const QuantizerConfig &c);

// ============================================================================
// Incoherence processing
// ============================================================================

struct SignVector {
  std::vector<double> signs; // entries in {-1, +1}
  std::uint64_t seed = 0;
};

SignVector make_sign_vector(std::size_t d, std::uint64_t seed);

enum class Padding { ZeroPad, Reject };

// X = (D_l H) W (D_r H)^T with H the normalized Walsh-Hadamard matrix and
// D_l, D_r random sign diagonals derived from `seed`. Dimensions that are
// not powers of two are zero-padded (or rejected with Padding::Reject).
Matrix incoherence_transform(const Matrix &w, std::uint64_t seed,
                             Padding padding = Padding::ZeroPad);

// Exact inverse. `rows`/`cols` select the unpadded output size; zero means
// keep the input dimension.
Matrix inverse_incoherence_transform(const Matrix &x, std::uint64_t seed,
                                     std::size_t rows = 0,
                                     std::size_t cols = 0);

// In-place normalized fast Walsh-Hadamard transform; length must be 2^m.
void fwht(std::span<double> v);

} // namespace tcq
