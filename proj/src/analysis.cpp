#include "tcq/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

namespace tcq {

// ===========================================================================
// Drift budget
// ===========================================================================

double r_voronoi(double sigma_w, std::size_t S) {
  return sigma_w / std::sqrt(2.0 * std::numbers::pi * static_cast<double>(S));
}

DriftBudgetReport drift_budget(double eta, double n_steps, double g_max,
                               double sigma_w, std::size_t S) {
  for (double v : {eta, n_steps, g_max, sigma_w})
    if (!(std::isfinite(v) && v > 0.0))
      throw ParameterError("drift_budget: inputs must be positive");
  if (S < 1)
    throw ParameterError("drift_budget: S must be >= 1");
  DriftBudgetReport r;
  r.eta = eta;
  r.n_steps = n_steps;
  r.g_max = g_max;
  r.sigma_w = sigma_w;
  r.S = S;
  r.r_voronoi = r_voronoi(sigma_w, S);
  r.max_drift = eta * n_steps * g_max;
  r.ratio = r.max_drift / r.r_voronoi;
  r.feasible = r.ratio > 1.0;
  return r;
}

std::vector<DriftTableRow> reference_drift_table() {
  auto row = [](std::string label, double eta, double n, std::string sched) {
    return DriftTableRow{std::move(label), std::move(sched),
                         drift_budget(eta, n, 1.0, 1e-2, 16), std::nullopt};
  };
  return {row("naive_lr2e-5_n3", 2e-5, 3, "naive"),
          row("naive_lr2e-5_n30", 2e-5, 30, "naive"),
          row("naive_lr2e-4_n10", 2e-4, 10, "naive"),
          row("skip_lr2e-4_n10", 2e-4, 10, "skip_high_t")};
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

} // namespace

std::string drift_table_csv(std::span<const DriftTableRow> rows) {
  std::ostringstream os;
  os << "label,eta,n_steps,g_max,sigma_w,S,r_voronoi,max_drift,ratio,feasible,"
        "schedule,delta_vs_ptq\n";
  for (const auto &r : rows) {
    const auto &d = r.report;
    os << r.label << ',' << fmt(d.eta) << ',' << fmt(d.n_steps) << ','
       << fmt(d.g_max) << ',' << fmt(d.sigma_w) << ',' << d.S << ','
       << fmt(d.r_voronoi) << ',' << fmt(d.max_drift) << ',' << fmt(d.ratio)
       << ',' << (d.feasible ? "true" : "false") << ',' << r.schedule << ','
       << (r.delta_vs_ptq ? fmt(*r.delta_vs_ptq) : "") << '\n';
  }
  return os.str();
}

// ===========================================================================
// Layer problems
// ===========================================================================

LayerProblem make_toy_layer_problem(const ToyModel &teacher, std::size_t layer,
                                    const QatRunConfig &config,
                                    const TrellisConfig &trellis) {
  const auto ptq = ptq_layer(teacher, layer, config, trellis);
  LayerProblem p;
  p.x_fp = ptq.geometry.to_transformed(teacher.weights[layer]).data;
  p.scales = ptq.scales;
  auto held = std::make_shared<const Matrix>(heldout_inputs(config, teacher.d_in()));
  auto teacher_logits =
      std::make_shared<const Matrix>(forward_all(teacher, *held).back());
  const auto geo = ptq.geometry;
  auto model = std::make_shared<const ToyModel>(teacher);
  p.loss = [model, layer, geo, held, teacher_logits](std::span<const double> x) {
    Matrix xm(geo.padded_rows, geo.padded_cols);
    xm.data.assign(x.begin(), x.end());
    const ToyModel student = with_layer(*model, layer, geo.from_transformed(xm));
    return mean(kl_per_sample(*teacher_logits, forward_all(student, *held).back()));
  };
  return p;
}

LayerProblem make_quadratic_problem(std::size_t n_elements,
                                    const TrellisConfig &trellis,
                                    unsigned scale_bits, std::size_t group_size,
                                    double sigma_w, std::uint64_t seed) {
  if (n_elements == 0 || n_elements % trellis.L() != 0)
    throw DimensionError("quadratic problem size must be a positive multiple of L");
  LayerProblem p;
  p.x_fp.resize(n_elements);
  fill_normal(p.x_fp, derive_seed(seed, seed_stream::kTeacherWeights), sigma_w);
  p.scales = fit_scales(p.x_fp, trellis.max_abs_emission(), scale_bits, group_size);
  const std::size_t n = n_elements, m = n;
  Matrix B(n, m);
  fill_normal(B.data, derive_seed(seed, seed_stream::kCalibration));
  auto H = std::make_shared<Matrix>(matmul_nt(B, B));
  for (auto &v : H->data)
    v /= static_cast<double>(m);
  for (std::size_t i = 0; i < n; ++i)
    (*H)(i, i) += 0.1;
  auto x_fp = std::make_shared<const std::vector<double>>(p.x_fp);
  p.loss = [H, x_fp](std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i)
      d[i] = x[i] - (*x_fp)[i];
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        row += (*H)(i, j) * d[j];
      acc += d[i] * row;
    }
    return 0.5 * acc;
  };
  return p;
}

// ===========================================================================
// Monte Carlo bracket
// ===========================================================================

McBracketResult mc_bracket(const LayerProblem &problem,
                           const TrellisConfig &trellis,
                           std::span<const double> sigma_grid,
                           std::size_t n_samples, std::uint64_t seed,
                           unsigned workers) {
  if (n_samples < 1)
    throw ParameterError("mc_bracket: n_samples must be >= 1");
  if (sigma_grid.empty())
    throw ParameterError("mc_bracket: empty sigma grid");
  for (double s : sigma_grid)
    if (!(std::isfinite(s) && s >= 0.0))
      throw ParameterError("mc_bracket: sigmas must be non-negative");

  McBracketResult r;
  r.sigma_grid.assign(sigma_grid.begin(), sigma_grid.end());
  const auto ptq = hard_quantize(problem.x_fp, problem.scales, trellis);
  r.fp_loss = problem.loss(problem.x_fp);
  r.ptq_loss = problem.loss(ptq.values);

  const std::size_t n_total = sigma_grid.size() * n_samples;
  r.samples.resize(n_total);
  const auto base = derive_seed(seed, seed_stream::kMcSample);
  parallel_for(n_total, workers, [&](std::size_t idx) {
    const std::size_t si = idx / n_samples, j = idx % n_samples;
    std::vector<double> x(problem.x_fp.size());
    fill_normal(x, derive_seed(derive_seed(base, si), j), 1.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = problem.x_fp[i] + sigma_grid[si] * x[i];
    const auto code = hard_quantize(x, problem.scales, trellis);
    r.samples[idx] = {sigma_grid[si], j, problem.loss(code.values),
                      !(code.bits == ptq.bits)};
  });

  r.per_sigma_best.assign(sigma_grid.size(), 0.0);
  r.global_best = r.samples[0].loss;
  r.best_sigma = sigma_grid[0];
  for (std::size_t si = 0; si < sigma_grid.size(); ++si) {
    double best = r.samples[si * n_samples].loss;
    for (std::size_t j = 1; j < n_samples; ++j)
      best = std::min(best, r.samples[si * n_samples + j].loss);
    r.per_sigma_best[si] = best;
    if (best < r.global_best) {
      r.global_best = best;
      r.best_sigma = sigma_grid[si];
    }
  }
  r.lower_bound_on_gap = r.ptq_loss - r.global_best;
  return r;
}

McBracketResult mc_bracket(const ToyModel &teacher, std::size_t layer_index,
                           const TrellisConfig &trellis,
                           std::span<const double> sigma_grid,
                           std::size_t n_samples, std::uint64_t seed,
                           unsigned workers) {
  QatRunConfig cfg;
  cfg.seed = seed;
  const auto problem = make_toy_layer_problem(teacher, layer_index, cfg, trellis);
  return mc_bracket(problem, trellis, sigma_grid, n_samples, seed, workers);
}

std::string mc_samples_csv(const McBracketResult &r) {
  std::ostringstream os;
  os.precision(12);
  os << "sigma,index,loss,moved\n";
  for (const auto &s : r.samples)
    os << s.sigma << ',' << s.index << ',' << s.loss << ',' << (s.moved ? 1 : 0)
       << '\n';
  return os.str();
}

// ===========================================================================
// Exhaustive oracle gap
// ===========================================================================

namespace {

// Emission sequences of every path from the pinned start, indexed by the
// path's bit pattern (first transition most significant).
std::vector<std::vector<double>> all_block_codewords(const TrellisConfig &cfg) {
  const std::size_t L = cfg.L(), k = cfg.k();
  const std::size_t n_paths = std::size_t{1} << (k * L);
  const auto &tab = cfg.tables();
  std::vector<std::vector<double>> out(n_paths, std::vector<double>(L));
  for (std::size_t p = 0; p < n_paths; ++p) {
    std::size_t s = TrellisConfig::kInitialState;
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t shift = k * (L - 1 - t);
      const std::size_t b = (p >> shift) & ((std::size_t{1} << k) - 1);
      s = tab.next(s, b);
      out[p][t] = cfg.emission()[s];
    }
  }
  return out;
}

} // namespace

OracleGapResult oracle_gap_exhaustive(const LayerProblem &problem,
                                      const TrellisConfig &trellis,
                                      unsigned workers) {
  const std::size_t L = trellis.L(), n = problem.x_fp.size();
  if (n == 0 || n % L != 0)
    throw DimensionError("oracle gap: size is not a multiple of L");
  const std::size_t blocks = n / L;
  const double log_paths_per_block =
      static_cast<double>(trellis.k() * L) * std::log(2.0);
  if (static_cast<double>(blocks) * log_paths_per_block >
      std::log(kMaxOraclePaths) + 1e-9)
    throw ParameterError("oracle gap: instance too large for enumeration");

  const auto words = all_block_codewords(trellis);
  const std::size_t P = words.size();
  std::size_t total = 1;
  for (std::size_t b = 0; b < blocks; ++b)
    total *= P;

  OracleGapResult r;
  const auto ptq = hard_quantize(problem.x_fp, problem.scales, trellis);
  r.fp_loss = problem.loss(problem.x_fp);
  r.ptq_loss = problem.loss(ptq.values);
  r.tax = r.ptq_loss - r.fp_loss;
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    sq += (ptq.values[i] - problem.x_fp[i]) * (ptq.values[i] - problem.x_fp[i]);
  r.third_order_indicator = std::pow(std::sqrt(sq), 3.0);

  std::vector<double> scale(n);
  for (std::size_t i = 0; i < n; ++i)
    scale[i] = problem.scales.element_scale(i);

  // Split the enumeration on the first block's path.
  std::vector<double> best_loss(P, INFINITY);
  std::vector<std::size_t> best_index(P, 0);
  const std::size_t per_first = total / P;
  parallel_for(P, workers, [&](std::size_t first) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < per_first; ++i) {
      std::size_t code = first * per_first + i;
      for (std::size_t b = blocks; b-- > 0;) {
        const auto &w = words[code % P];
        code /= P;
        for (std::size_t t = 0; t < L; ++t)
          x[b * L + t] = scale[b * L + t] * w[t];
      }
      const double loss = problem.loss(x);
      if (loss < best_loss[first]) {
        best_loss[first] = loss;
        best_index[first] = first * per_first + i;
      }
    }
  });
  const auto it = std::min_element(best_loss.begin(), best_loss.end());
  r.qat_star_loss = *it;
  r.delta_star = r.ptq_loss - r.qat_star_loss;
  r.n_evaluated = total;
  std::size_t code = best_index[static_cast<std::size_t>(it - best_loss.begin())];
  r.best_weights.resize(n);
  for (std::size_t b = blocks; b-- > 0;) {
    const auto &w = words[code % P];
    code /= P;
    for (std::size_t t = 0; t < L; ++t)
      r.best_weights[b * L + t] = scale[b * L + t] * w[t];
  }
  return r;
}

OracleGapResult oracle_gap_exhaustive(const ToyModel &teacher,
                                      std::size_t layer_index,
                                      const TrellisConfig &trellis,
                                      const QatRunConfig &config) {
  return oracle_gap_exhaustive(
      make_toy_layer_problem(teacher, layer_index, config, trellis), trellis,
      config.workers);
}

// ===========================================================================
// Bootstrap
// ===========================================================================

namespace {

double aggregate_of(std::span<const double> v, std::span<const double> w,
                    std::span<const std::size_t> idx, Aggregate agg) {
  double num = 0.0, den = 0.0;
  for (auto i : idx) {
    const double wi = w.empty() ? 1.0 : w[i];
    num += wi * v[i];
    den += wi;
  }
  const double m = num / den;
  return agg == Aggregate::Perplexity ? std::exp(m) : m;
}

double percentile(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

} // namespace

BootstrapResult bootstrap_ci(std::span<const double> values, std::size_t n_boot,
                             double confidence, std::uint64_t seed,
                             Aggregate aggregate,
                             std::span<const double> weights) {
  const std::size_t n = values.size();
  if (n < 2)
    throw ParameterError("bootstrap_ci: need at least two windows");
  if (n_boot < 2)
    throw ParameterError("bootstrap_ci: n_boot must be >= 2");
  if (!(confidence > 0.0 && confidence < 1.0))
    throw ParameterError("bootstrap_ci: confidence must be in (0, 1)");
  if (!weights.empty() && weights.size() != n)
    throw DimensionError("bootstrap_ci: weights must match values");
  for (double v : values)
    if (!std::isfinite(v))
      throw NumericalError("bootstrap_ci: non-finite value");
  for (double w : weights)
    if (!(std::isfinite(w) && w > 0.0))
      throw ParameterError("bootstrap_ci: weights must be positive");

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i)
    idx[i] = i;
  BootstrapResult r;
  r.n_boot = n_boot;
  r.confidence = confidence;
  r.point = aggregate_of(values, weights, idx, aggregate);

  std::mt19937_64 rng(derive_seed(seed, seed_stream::kBootstrap));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> dist(n_boot);
  for (auto &d : dist) {
    for (auto &i : idx)
      i = pick(rng);
    d = aggregate_of(values, weights, idx, aggregate);
  }
  // shifted by the first draw so identical draws give exactly zero
  const double d0 = dist[0];
  double mu = 0.0;
  for (double d : dist)
    mu += d - d0;
  mu /= static_cast<double>(n_boot);
  double var = 0.0;
  for (double d : dist)
    var += (d - d0 - mu) * (d - d0 - mu);
  r.sigma_boot = std::sqrt(var / static_cast<double>(n_boot - 1));
  std::sort(dist.begin(), dist.end());
  r.ci_low = percentile(dist, 0.5 * (1.0 - confidence));
  r.ci_high = percentile(dist, 0.5 * (1.0 + confidence));
  return r;
}

} // namespace tcq
