#pragma once

#include "tcq/bcjr.hpp"

namespace tcq {

struct BenchConfig {
  CodeParams code{};
  std::size_t chunk = 16;    // blocks per chunk
  std::size_t n_chunks = 16; // chunks timed per repeat
  double temperature = 0.3;
  unsigned workers = 1; // >1 is the separately reported throughput mode
};

struct TimingStats {
  double median = 0, p10 = 0, p90 = 0; // milliseconds per chunk
};

struct BenchResult {
  BcjrImpl impl = BcjrImpl::Reference;
  std::size_t L = 0, S = 0, chunk = 0, n_repeats = 0;
  unsigned workers = 1;
  TimingStats forward, backward;
  TimingStats total; // forward + backward of the same repeat
  // first timed implementation's median / this median
  double speedup_forward = 1.0, speedup_backward = 1.0, speedup_total = 1.0;
};

struct ParityReport {
  double forward_max_abs = 0.0;
  double backward_max_rel = 0.0;
  bool ok() const;
};

// Tolerances shared with the bcjr parity contract.
inline constexpr double kForwardParityTol = 1e-7;
inline constexpr double kBackwardParityTol = 1e-6;

// Max-abs forward difference (soft codewords and marginals) and
// per-block relative backward difference between the two implementations.
ParityReport check_parity(std::span<const double> blocks,
                          std::span<const double> upstream, double T,
                          const TrellisConfig &config, std::size_t chunk);

// For every config: identical seeded inputs are fed to both
// implementations, parity is asserted (NumericalError otherwise), then each
// implementation is timed n_repeats times after `warmup` untimed passes.
// Returns the reference result followed by the fused one per config.
std::vector<BenchResult> run_bench(std::span<const BenchConfig> configs,
                                   std::size_t n_repeats, std::size_t warmup,
                                   std::uint64_t seed);

// Times the listed implementations on given inputs (no parity check),
// interleaved repeat by repeat; speedups are relative to impls[0].
std::vector<BenchResult> time_impls(std::span<const BcjrImpl> impls,
                                    const BenchConfig &cfg,
                                    std::span<const double> blocks,
                                    std::span<const double> upstream,
                                    std::size_t n_repeats, std::size_t warmup);

std::string bench_csv(std::span<const BenchResult> results);

} // namespace tcq
