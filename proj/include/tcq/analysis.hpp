#pragma once

#include "tcq/qat.hpp"

#include <functional>
#include <optional>

namespace tcq {

// ---------------------------------------------------------------------------
// Drift budget
// ---------------------------------------------------------------------------

struct DriftBudgetReport {
  double eta = 0, n_steps = 0, g_max = 0, sigma_w = 0;
  std::size_t S = 0;
  double r_voronoi = 0; // sigma_w / sqrt(2 pi S)
  double max_drift = 0; // eta * n_steps * g_max
  double ratio = 0;     // max_drift / r_voronoi
  bool feasible = false; // ratio > 1
};

double r_voronoi(double sigma_w, std::size_t S);
DriftBudgetReport drift_budget(double eta, double n_steps, double g_max,
                               double sigma_w, std::size_t S);

struct DriftTableRow {
  std::string label;
  std::string schedule;
  DriftBudgetReport report;
  std::optional<double> delta_vs_ptq; // measured hardened-loss change
};

// The four (eta, N, schedule) settings of the reference drift table at
// g_max = 1, sigma_w = 1e-2, S = 16.
std::vector<DriftTableRow> reference_drift_table();

// label,eta,n_steps,g_max,sigma_w,S,r_voronoi,max_drift,ratio,feasible,
// schedule,delta_vs_ptq
std::string drift_table_csv(std::span<const DriftTableRow> rows);

// ---------------------------------------------------------------------------
// Layer problems shared by the bracket and the exhaustive oracle
// ---------------------------------------------------------------------------

// Loss of a candidate layer given its quantized transformed-domain weights
// (flattened, padded). Called concurrently; must not mutate shared state.
using LayerLossFn = std::function<double(std::span<const double>)>;

struct LayerProblem {
  std::vector<double> x_fp; // full-precision transformed-domain weights
  ScaleTable scales;        // frozen at PTQ
  LayerLossFn loss;
};

// End-task KL on held-out inputs with every other layer at full precision.
LayerProblem make_toy_layer_problem(const ToyModel &teacher, std::size_t layer,
                                    const QatRunConfig &config,
                                    const TrellisConfig &trellis);

// Hessian-weighted quadratic 1/2 (x - x_fp)^T H (x - x_fp) with
// H = B B^T / m + lambda I built directly; x_fp iid N(0, sigma_w^2).
LayerProblem make_quadratic_problem(std::size_t n_elements,
                                    const TrellisConfig &trellis,
                                    unsigned scale_bits, std::size_t group_size,
                                    double sigma_w, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Monte Carlo bracket
// ---------------------------------------------------------------------------

inline const std::vector<double> kDefaultSigmaGrid{1e-3, 5e-3, 1e-2, 5e-2};

struct McSample {
  double sigma = 0;
  std::size_t index = 0;
  double loss = 0;
  bool moved = false; // bits differ from PTQ
};

struct McBracketResult {
  std::vector<double> sigma_grid;
  std::vector<double> per_sigma_best;
  double global_best = 0;
  double best_sigma = 0;
  double fp_loss = 0;
  double ptq_loss = 0;
  double lower_bound_on_gap = 0; // ptq_loss - global_best
  std::vector<McSample> samples; // ordered by (sigma, index)
};

// W_i = Viterbi(x_fp + delta_i), delta_i ~ N(0, sigma^2 I), scales frozen.
McBracketResult mc_bracket(const LayerProblem &problem,
                           const TrellisConfig &trellis,
                           std::span<const double> sigma_grid,
                           std::size_t n_samples, std::uint64_t seed,
                           unsigned workers = 1);

McBracketResult mc_bracket(const ToyModel &teacher, std::size_t layer_index,
                           const TrellisConfig &trellis,
                           std::span<const double> sigma_grid,
                           std::size_t n_samples, std::uint64_t seed,
                           unsigned workers = 1);

std::string mc_samples_csv(const McBracketResult &r);

// ---------------------------------------------------------------------------
// Exhaustive oracle gap
// ---------------------------------------------------------------------------

inline constexpr double kMaxOraclePaths = 1e7;

struct OracleGapResult {
  double delta_star = 0;    // ptq_loss - qat_star_loss
  double qat_star_loss = 0; // best loss over every legal code
  double ptq_loss = 0;
  double fp_loss = 0;
  double tax = 0; // ptq_loss - fp_loss
  // ||x_PTQ - x_FP||^3 with unit constant; an order-of-magnitude indicator
  double third_order_indicator = 0;
  std::size_t n_evaluated = 0;
  std::vector<double> best_weights;
  bool bounds_hold() const { return delta_star >= 0.0 && delta_star <= tax; }
};

// Enumerates every legal code of every block (2^(kL) paths per block from
// the pinned start). ParameterError when the product exceeds 1e7.
OracleGapResult oracle_gap_exhaustive(const LayerProblem &problem,
                                      const TrellisConfig &trellis,
                                      unsigned workers = 1);

OracleGapResult oracle_gap_exhaustive(const ToyModel &teacher,
                                      std::size_t layer_index,
                                      const TrellisConfig &trellis,
                                      const QatRunConfig &config = {});

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

enum class Aggregate { Mean, Perplexity };

struct BootstrapResult {
  double point = 0;
  double sigma_boot = 0;
  double ci_low = 0, ci_high = 0;
  std::size_t n_boot = 0;
  double confidence = 0;
};

inline constexpr std::size_t kDefaultBootstraps = 10000;
inline constexpr double kDefaultConfidence = 0.95;

// Resamples windows with replacement. Mean: plain mean of the values.
// Perplexity: exp of the weight-averaged per-token NLL (equal weights when
// `weights` is empty). Percentile interval, sd over resamples.
BootstrapResult bootstrap_ci(std::span<const double> values,
                             std::size_t n_boot = kDefaultBootstraps,
                             double confidence = kDefaultConfidence,
                             std::uint64_t seed = 0,
                             Aggregate aggregate = Aggregate::Mean,
                             std::span<const double> weights = {});

} // namespace tcq
