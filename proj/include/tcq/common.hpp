#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tcq {

// ============================================================================
// Errors
// ============================================================================

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated preconditions on scalar parameters (k, V, L, T, group size, ...).
struct ParameterError : Error {
  using Error::Error;
};

// Shape / length mismatches.
struct DimensionError : Error {
  using Error::Error;
};

// NaN inputs, non-finite losses, parity failures.
struct NumericalError : Error {
  using Error::Error;
};

// Malformed files, JSON documents, bitstreams.
struct FormatError : Error {
  using Error::Error;
};

// Saved forward state does not belong to the (w, T, config) it is used with.
struct StaleStateError : Error {
  using Error::Error;
};

// ============================================================================
// Dense row-major matrix
// ============================================================================

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double &operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool operator==(const Matrix &) const = default;
};

// C = A * B
Matrix matmul(const Matrix &a, const Matrix &b);
// C = A^T * B
Matrix matmul_tn(const Matrix &a, const Matrix &b);
// C = A * B^T
Matrix matmul_nt(const Matrix &a, const Matrix &b);
Matrix transpose(const Matrix &a);

double frobenius_norm(const Matrix &a);
double max_abs_diff(std::span<const double> a, std::span<const double> b);

// ============================================================================
// Seeds
// ============================================================================
//
// Every random stream is derived from one user seed:
//   derive_seed(seed, stream) = splitmix64(seed ^ splitmix64(stream))
// with streams composed hierarchically (layer -> block -> sample). The
// stream tags used across the library live in `seed_stream`.

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

namespace seed_stream {
inline constexpr std::uint64_t kLeftSigns = 0x11;
inline constexpr std::uint64_t kRightSigns = 0x12;
inline constexpr std::uint64_t kTeacherWeights = 0x21;
inline constexpr std::uint64_t kCalibration = 0x22;
inline constexpr std::uint64_t kHeldout = 0x23;
inline constexpr std::uint64_t kIncoherence = 0x24;
inline constexpr std::uint64_t kMcSample = 0x31;
inline constexpr std::uint64_t kBootstrap = 0x41;
inline constexpr std::uint64_t kBenchInputs = 0x51;
inline constexpr std::uint64_t kCrystallize = 0x61;
} // namespace seed_stream

// Fills `out` with iid N(0, sigma^2) draws from a stream seeded by `seed`.
void fill_normal(std::span<double> out, std::uint64_t seed, double sigma = 1.0);

// ============================================================================
// Parallelism
// ============================================================================

// Runs fn(i) for i in [0, n) over up to `workers` threads. Each index is
// visited exactly once; callers write results by index so the reduction
// order never depends on scheduling.
void parallel_for(std::size_t n, unsigned workers,
                  const std::function<void(std::size_t)> &fn);

unsigned default_workers();

bool is_power_of_two(std::size_t n);
std::size_t next_power_of_two(std::size_t n);

} // namespace tcq
