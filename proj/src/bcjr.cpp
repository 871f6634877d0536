#include "tcq/bcjr.hpp"

#include "tcq/viterbi.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace tcq {

std::string to_string(BcjrImpl impl) {
  return impl == BcjrImpl::Reference ? "reference" : "fused";
}

BcjrImpl bcjr_impl_from_string(const std::string &s) {
  if (s == "reference")
    return BcjrImpl::Reference;
  if (s == "fused")
    return BcjrImpl::Fused;
  throw ParameterError("unknown BCJR implementation '" + s + "'");
}

namespace {

void check_inputs(std::span<const double> w, double T,
                  const TrellisConfig &config) {
  if (!(T > 0.0) || !std::isfinite(T))
    throw ParameterError("temperature must be positive and finite");
  if (w.size() != config.L())
    throw DimensionError("block length " + std::to_string(w.size()) +
                         " != L = " + std::to_string(config.L()));
  for (double v : w)
    if (!std::isfinite(v))
      throw NumericalError("non-finite weight in block");
}

void check_saved(std::span<const double> w, double T,
                 const TrellisConfig &config, std::span<const double> upstream,
                 const SoftQuantOutput &saved) {
  check_inputs(w, T, config);
  if (upstream.size() != w.size())
    throw DimensionError("upstream gradient length mismatch");
  if (saved.saved_log_alpha.rows != w.size() ||
      saved.saved_log_alpha.cols != config.S() ||
      saved.saved_log_beta.rows != w.size() ||
      saved.saved_log_beta.cols != config.S() ||
      saved.marginals.rows != w.size() || saved.soft_codeword.size() != w.size())
    throw DimensionError("saved state has the wrong shape");
  if (saved.temperature != T ||
      saved.fingerprint != soft_state_fingerprint(w, T, config))
    throw StaleStateError(
        "saved state was produced for a different (w, T, config)");
}

// Field of state s at a site with weight w.
inline double local_field(double w, double c, double T) {
  return -site_cost(w, c) / T;
}

inline double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double acc = 0.0;
  for (double v : x)
    acc += std::exp(v - m);
  return m + std::log(acc);
}

std::vector<double> start_log_weights(const TransitionTables &tab) {
  std::vector<double> count(tab.S, 0.0);
  for (std::size_t b = 0; b < tab.n_succ; ++b)
    count[tab.next(TrellisConfig::kInitialState, b)] += 1.0;
  std::vector<double> out(tab.S);
  for (std::size_t s = 0; s < tab.S; ++s)
    out[s] = count[s] > 0.0 ? std::log(count[s]) : kLogZero;
  return out;
}

// Softmax of alpha + beta per site; fills marginals, soft codeword, log Z.
void finish_marginals(SoftQuantOutput &out, std::span<const double> emission) {
  const std::size_t L = out.saved_log_alpha.rows;
  const std::size_t S = out.saved_log_alpha.cols;
  out.marginals = Matrix(L, S);
  out.soft_codeword.assign(L, 0.0);
  std::vector<double> x(S);
  for (std::size_t t = 0; t < L; ++t) {
    double m = kLogZero;
    for (std::size_t s = 0; s < S; ++s) {
      x[s] = out.saved_log_alpha(t, s) + out.saved_log_beta(t, s);
      m = std::max(m, x[s]);
    }
    double z = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      x[s] = std::exp(x[s] - m);
      z += x[s];
    }
    double mean = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      out.marginals(t, s) = x[s] / z;
      mean += emission[s] * out.marginals(t, s);
    }
    out.soft_codeword[t] = mean;
    if (t + 1 == L)
      out.log_Z = m + std::log(z);
  }
}

} // namespace

std::uint64_t soft_state_fingerprint(std::span<const double> w, double T,
                                     const TrellisConfig &config) {
  std::uint64_t h = splitmix64(config.fingerprint() ^ std::bit_cast<std::uint64_t>(T));
  for (double v : w)
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(v));
  return h;
}

// ============================================================================
// Chain model and reference recursions
// ============================================================================

ChainModel make_chain_model(std::span<const double> w, double T,
                            const TrellisConfig &config) {
  check_inputs(w, T, config);
  const auto &tab = config.tables();
  const auto c = config.emission();

  ChainModel m;
  m.S = tab.S;
  m.log_init = start_log_weights(tab);
  m.log_final.assign(tab.S, 0.0);
  m.local_fields = Matrix(w.size(), tab.S);
  for (std::size_t t = 0; t < w.size(); ++t)
    for (std::size_t s = 0; s < tab.S; ++s)
      m.local_fields(t, s) = local_field(w[t], c[s], T);
  m.n_pred = tab.n_pred;
  m.pred = tab.pred_state;
  m.n_succ = tab.n_succ;
  m.succ = tab.succ;
  return m;
}

ChainModel reversed(const ChainModel &m) {
  ChainModel r;
  r.S = m.S;
  r.log_init = m.log_final;
  r.log_final = m.log_init;
  const std::size_t L = m.local_fields.rows;
  r.local_fields = Matrix(L, m.S);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t s = 0; s < m.S; ++s)
      r.local_fields(t, s) = m.local_fields(L - 1 - t, s);
  r.n_pred = m.n_succ;
  r.pred = m.succ;
  r.n_succ = m.n_pred;
  r.succ = m.pred;
  return r;
}

Matrix forward_messages(const ChainModel &m) {
  const std::size_t L = m.local_fields.rows, S = m.S, np = m.n_pred;
  Matrix alpha(L, S);
  for (std::size_t s = 0; s < S; ++s)
    alpha(0, s) = m.log_init[s] + m.local_fields(0, s);
  for (std::size_t t = 1; t < L; ++t) {
    std::vector<double> gathered(S * np);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t j = 0; j < np; ++j)
        gathered[s * np + j] = alpha(t - 1, m.pred[s * np + j]);
    for (std::size_t s = 0; s < S; ++s)
      alpha(t, s) = log_sum_exp({gathered.data() + s * np, np}) +
                    m.local_fields(t, s);
  }
  return alpha;
}

Matrix backward_messages(const ChainModel &m) {
  const std::size_t L = m.local_fields.rows, S = m.S, ns = m.n_succ;
  Matrix beta(L, S);
  for (std::size_t s = 0; s < S; ++s)
    beta(L - 1, s) = m.log_final[s];
  for (std::size_t t = L - 1; t-- > 0;) {
    std::vector<double> gathered(S * ns);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t j = 0; j < ns; ++j) {
        const auto n = m.succ[s * ns + j];
        gathered[s * ns + j] = m.local_fields(t + 1, n) + beta(t + 1, n);
      }
    for (std::size_t s = 0; s < S; ++s)
      beta(t, s) = log_sum_exp({gathered.data() + s * ns, ns});
  }
  return beta;
}

Matrix forward_messages(std::span<const double> w, double T,
                        const TrellisConfig &config) {
  return forward_messages(make_chain_model(w, T, config));
}

Matrix backward_messages(std::span<const double> w, double T,
                         const TrellisConfig &config) {
  return backward_messages(make_chain_model(w, T, config));
}

namespace {

SoftQuantOutput reference_forward(std::span<const double> w, double T,
                                  const TrellisConfig &config) {
  const ChainModel m = make_chain_model(w, T, config);
  SoftQuantOutput out;
  out.saved_log_alpha = forward_messages(m);
  out.saved_log_beta = backward_messages(m);
  out.temperature = T;
  out.fingerprint = soft_state_fingerprint(w, T, config);
  finish_marginals(out, config.emission());
  return out;
}

std::vector<double> reference_vjp(std::span<const double> w, double T,
                                  const TrellisConfig &config,
                                  std::span<const double> upstream,
                                  const SoftQuantOutput &saved) {
  const auto &tab = config.tables();
  const auto c = config.emission();
  const std::size_t L = w.size(), S = tab.S, np = tab.n_pred, ns = tab.n_succ;
  const Matrix &alpha = saved.saved_log_alpha;
  const Matrix &beta = saved.saved_log_beta;

  Matrix h(L, S);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t s = 0; s < S; ++s)
      h(t, s) = local_field(w[t], c[s], T);

  // Adjoint of gamma_t = alpha_t + beta_t through the site softmax.
  Matrix seed(L, S);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t s = 0; s < S; ++s)
      seed(t, s) = upstream[t] * saved.marginals(t, s) *
                   (c[s] - saved.soft_codeword[t]);

  Matrix h_bar(L, S);

  // alpha_t(s) = LSE_{p in pred(s)} alpha_{t-1}(p) + h_t(s)
  Matrix a_bar = seed;
  for (std::size_t t = L; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s)
      h_bar(t, s) += a_bar(t, s);
    if (t == 0)
      break;
    for (std::size_t s = 0; s < S; ++s) {
      const double base = alpha(t, s) - h(t, s);
      for (std::size_t j = 0; j < np; ++j) {
        const auto p = tab.pred_state[s * np + j];
        a_bar(t - 1, p) += a_bar(t, s) * std::exp(alpha(t - 1, p) - base);
      }
    }
  }

  // beta_t(s) = LSE_{n in succ(s)} h_{t+1}(n) + beta_{t+1}(n)
  Matrix b_bar = seed;
  for (std::size_t t = 0; t + 1 < L; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      const double base = beta(t, s);
      for (std::size_t j = 0; j < ns; ++j) {
        const auto n = tab.succ[s * ns + j];
        const double wgt = std::exp(h(t + 1, n) + beta(t + 1, n) - base);
        b_bar(t + 1, n) += b_bar(t, s) * wgt;
        h_bar(t + 1, n) += b_bar(t, s) * wgt;
      }
    }

  std::vector<double> g(L, 0.0);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t s = 0; s < S; ++s)
      g[t] += h_bar(t, s) * (-(w[t] - c[s]) / T);
  return g;
}

} // namespace

SoftQuantOutput soft_quantize(std::span<const double> w, double T,
                              const TrellisConfig &config, BcjrImpl impl) {
  if (impl == BcjrImpl::Fused)
    return soft_quantize_fused(w, T, config);
  check_inputs(w, T, config);
  return reference_forward(w, T, config);
}

std::vector<double> soft_quantize_vjp(std::span<const double> w, double T,
                                      const TrellisConfig &config,
                                      std::span<const double> upstream,
                                      const SoftQuantOutput &saved,
                                      BcjrImpl impl) {
  if (impl == BcjrImpl::Fused)
    return fused_vjp(w, T, config, upstream, saved);
  check_saved(w, T, config, upstream, saved);
  return reference_vjp(w, T, config, upstream, saved);
}

// ============================================================================
// Fused kernels
// ============================================================================
//
// Each log-sum-exp over a state's predecessors shares one shift M (the
// row maximum) and one exponential per source state, so a step costs S
// exponentials instead of S * n_pred. When every term of a sum sits far
// below M the shared shift would underflow; those states fall back to
// their own maximum.

namespace {

constexpr double kTinySum = 1e-250;

struct FusedScratch {
  std::vector<double> e, x, h, cur, nxt;
  explicit FusedScratch(std::size_t S) : e(S), x(S), h(S), cur(S), nxt(S) {}
};

inline void fill_fields(double w, double T, std::span<const double> c,
                        std::vector<double> &h) {
  for (std::size_t s = 0; s < c.size(); ++s)
    h[s] = local_field(w, c[s], T);
}

} // namespace

void fused_forward_chunk(std::span<const double> blocks, double T,
                         const TrellisConfig &config,
                         std::span<SoftQuantOutput> out) {
  const auto &tab = config.tables();
  const auto c = config.emission();
  const std::size_t L = config.L(), S = tab.S, np = tab.n_pred, ns = tab.n_succ;
  const std::size_t B = out.size();
  const std::uint32_t *pred = tab.pred_state.data();
  const std::uint32_t *succ = tab.succ.data();
  const std::vector<double> init = start_log_weights(tab);
  FusedScratch sc(S);

  for (std::size_t b = 0; b < B; ++b) {
    out[b].saved_log_alpha = Matrix(L, S);
    out[b].saved_log_beta = Matrix(L, S);
    out[b].temperature = T;
    out[b].fingerprint =
        soft_state_fingerprint(blocks.subspan(b * L, L), T, config);
  }

  // Forward sweep, blocks along the leading dimension.
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t b = 0; b < B; ++b) {
      fill_fields(blocks[b * L + t], T, c, sc.h);
      double *cur = out[b].saved_log_alpha.data.data() + t * S;
      if (t == 0) {
        for (std::size_t s = 0; s < S; ++s)
          cur[s] = init[s] + sc.h[s];
        continue;
      }
      const double *prev = cur - S;
      const double m = *std::max_element(prev, prev + S);
      for (std::size_t s = 0; s < S; ++s)
        sc.e[s] = std::exp(prev[s] - m);
      for (std::size_t s = 0; s < S; ++s) {
        const std::uint32_t *ps = pred + s * np;
        double acc = 0.0;
        for (std::size_t j = 0; j < np; ++j)
          acc += sc.e[ps[j]];
        if (acc > kTinySum) {
          cur[s] = m + std::log(acc) + sc.h[s];
        } else {
          double ms = kLogZero;
          for (std::size_t j = 0; j < np; ++j)
            ms = std::max(ms, prev[ps[j]]);
          double a2 = 0.0;
          for (std::size_t j = 0; j < np; ++j)
            a2 += std::exp(prev[ps[j]] - ms);
          cur[s] = ms + std::log(a2) + sc.h[s];
        }
      }
    }

  // Backward sweep.
  for (std::size_t t = L; t-- > 0;)
    for (std::size_t b = 0; b < B; ++b) {
      double *cur = out[b].saved_log_beta.data.data() + t * S;
      if (t + 1 == L) {
        std::fill(cur, cur + S, 0.0);
        continue;
      }
      const double *next = cur + S;
      fill_fields(blocks[b * L + t + 1], T, c, sc.h);
      double m = kLogZero;
      for (std::size_t n = 0; n < S; ++n) {
        sc.x[n] = sc.h[n] + next[n];
        m = std::max(m, sc.x[n]);
      }
      for (std::size_t n = 0; n < S; ++n)
        sc.e[n] = std::exp(sc.x[n] - m);
      for (std::size_t s = 0; s < S; ++s) {
        const std::uint32_t *ss = succ + s * ns;
        double acc = 0.0;
        for (std::size_t j = 0; j < ns; ++j)
          acc += sc.e[ss[j]];
        if (acc > kTinySum) {
          cur[s] = m + std::log(acc);
        } else {
          double ms = kLogZero;
          for (std::size_t j = 0; j < ns; ++j)
            ms = std::max(ms, sc.x[ss[j]]);
          double a2 = 0.0;
          for (std::size_t j = 0; j < ns; ++j)
            a2 += std::exp(sc.x[ss[j]] - ms);
          cur[s] = ms + std::log(a2);
        }
      }
    }

  for (std::size_t b = 0; b < B; ++b)
    finish_marginals(out[b], c);
}

void fused_vjp_chunk(std::span<const double> blocks, double T,
                     const TrellisConfig &config,
                     std::span<const double> upstream,
                     std::span<const SoftQuantOutput> saved,
                     std::span<double> grad) {
  const auto &tab = config.tables();
  const auto c = config.emission();
  const std::size_t L = config.L(), S = tab.S, np = tab.n_pred, ns = tab.n_succ;
  const std::uint32_t *pred = tab.pred_state.data();
  const std::uint32_t *succ = tab.succ.data();
  FusedScratch sc(S);

  for (std::size_t b = 0; b < saved.size(); ++b) {
    const double *w = blocks.data() + b * L;
    const double *u = upstream.data() + b * L;
    double *g = grad.data() + b * L;
    const SoftQuantOutput &sv = saved[b];
    const double *alpha = sv.saved_log_alpha.data.data();
    const double *beta = sv.saved_log_beta.data.data();
    const double *p = sv.marginals.data.data();
    const double *wh = sv.soft_codeword.data();
    std::fill(g, g + L, 0.0);

    auto seed_row = [&](std::size_t t, std::vector<double> &row) {
      for (std::size_t s = 0; s < S; ++s)
        row[s] = u[t] * p[t * S + s] * (c[s] - wh[t]);
    };
    auto field_grad = [&](std::size_t t, std::size_t s) {
      return -(w[t] - c[s]) / T;
    };

    // Reverse sweep through the alpha recursion.
    seed_row(L - 1, sc.cur);
    for (std::size_t t = L; t-- > 0;) {
      for (std::size_t s = 0; s < S; ++s)
        g[t] += sc.cur[s] * field_grad(t, s);
      if (t == 0)
        break;
      const double *prev = alpha + (t - 1) * S;
      const double *at = alpha + t * S;
      const double m = *std::max_element(prev, prev + S);
      for (std::size_t s = 0; s < S; ++s)
        sc.e[s] = std::exp(prev[s] - m);
      seed_row(t - 1, sc.nxt);
      fill_fields(w[t], T, c, sc.h);
      for (std::size_t s = 0; s < S; ++s) {
        const double adj = sc.cur[s];
        if (adj == 0.0)
          continue;
        const std::uint32_t *ps = pred + s * np;
        // exp(alpha_t(s) - h_t(s) - m) is the shifted predecessor sum
        double z = 0.0;
        for (std::size_t j = 0; j < np; ++j)
          z += sc.e[ps[j]];
        if (z > kTinySum) {
          const double f = adj / z;
          for (std::size_t j = 0; j < np; ++j)
            sc.nxt[ps[j]] += sc.e[ps[j]] * f;
        } else {
          const double base = at[s] - sc.h[s];
          for (std::size_t j = 0; j < np; ++j)
            sc.nxt[ps[j]] += adj * std::exp(prev[ps[j]] - base);
        }
      }
      std::swap(sc.cur, sc.nxt);
    }

    // Forward sweep through the beta recursion.
    seed_row(0, sc.cur);
    for (std::size_t t = 0; t + 1 < L; ++t) {
      const double *next = beta + (t + 1) * S;
      const double *bt = beta + t * S;
      fill_fields(w[t + 1], T, c, sc.h);
      double m = kLogZero;
      for (std::size_t n = 0; n < S; ++n) {
        sc.x[n] = sc.h[n] + next[n];
        m = std::max(m, sc.x[n]);
      }
      for (std::size_t n = 0; n < S; ++n)
        sc.e[n] = std::exp(sc.x[n] - m);
      seed_row(t + 1, sc.nxt);
      double gt = 0.0;
      for (std::size_t s = 0; s < S; ++s) {
        const double adj = sc.cur[s];
        if (adj == 0.0)
          continue;
        const std::uint32_t *ss = succ + s * ns;
        double z = 0.0;
        for (std::size_t j = 0; j < ns; ++j)
          z += sc.e[ss[j]];
        if (z > kTinySum) {
          const double f = adj / z;
          for (std::size_t j = 0; j < ns; ++j) {
            const auto n = ss[j];
            const double contrib = sc.e[n] * f;
            sc.nxt[n] += contrib;
            gt += contrib * field_grad(t + 1, n);
          }
        } else {
          const double base = bt[s];
          for (std::size_t j = 0; j < ns; ++j) {
            const auto n = ss[j];
            const double contrib = adj * std::exp(sc.x[n] - base);
            sc.nxt[n] += contrib;
            gt += contrib * field_grad(t + 1, n);
          }
        }
      }
      g[t + 1] += gt;
      std::swap(sc.cur, sc.nxt);
    }
  }
}

SoftQuantOutput soft_quantize_fused(std::span<const double> w, double T,
                                    const TrellisConfig &config) {
  check_inputs(w, T, config);
  SoftQuantOutput out;
  fused_forward_chunk(w, T, config, {&out, 1});
  return out;
}

std::vector<double> fused_vjp(std::span<const double> w, double T,
                              const TrellisConfig &config,
                              std::span<const double> upstream,
                              const SoftQuantOutput &saved) {
  check_saved(w, T, config, upstream, saved);
  std::vector<double> g(w.size());
  fused_vjp_chunk(w, T, config, upstream, {&saved, 1}, g);
  return g;
}

// ============================================================================
// STE variant
// ============================================================================

std::vector<double> SteOutput::vjp(std::span<const double> upstream) const {
  return soft_quantize_vjp(w, saved.temperature, *config, upstream, saved,
                           impl);
}

SteOutput ste_quantize(std::span<const double> w, double T,
                       const TrellisConfig &config, BcjrImpl impl) {
  SteOutput out;
  out.saved = soft_quantize(w, T, config, impl);
  out.codeword = viterbi_encode(w, config).codeword;
  out.w.assign(w.begin(), w.end());
  out.config = std::make_shared<const TrellisConfig>(config);
  out.impl = impl;
  return out;
}

// ============================================================================
// Batches
// ============================================================================

namespace {

std::size_t block_count(std::span<const double> blocks,
                        const TrellisConfig &config) {
  if (blocks.size() % config.L() != 0)
    throw DimensionError("batch size is not a multiple of L");
  return blocks.size() / config.L();
}

} // namespace

std::vector<SoftQuantOutput>
soft_quantize_batch(std::span<const double> blocks, double T,
                    const TrellisConfig &config, const BatchOptions &opt) {
  const std::size_t n = block_count(blocks, config), L = config.L();
  const std::size_t chunk = std::max<std::size_t>(opt.chunk, 1);
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  std::vector<SoftQuantOutput> out(n);
  parallel_for(n_chunks, opt.workers, [&](std::size_t ci) {
    const std::size_t lo = ci * chunk, hi = std::min(n, lo + chunk);
    for (std::size_t b = lo; b < hi; ++b)
      check_inputs(blocks.subspan(b * L, L), T, config);
    if (opt.impl == BcjrImpl::Fused) {
      fused_forward_chunk(blocks.subspan(lo * L, (hi - lo) * L), T, config,
                          std::span(out).subspan(lo, hi - lo));
    } else {
      for (std::size_t b = lo; b < hi; ++b)
        out[b] = reference_forward(blocks.subspan(b * L, L), T, config);
    }
  });
  return out;
}

std::vector<double> soft_quantize_vjp_batch(
    std::span<const double> blocks, double T, const TrellisConfig &config,
    std::span<const double> upstream, std::span<const SoftQuantOutput> saved,
    const BatchOptions &opt) {
  const std::size_t n = block_count(blocks, config), L = config.L();
  if (upstream.size() != blocks.size() || saved.size() != n)
    throw DimensionError("vjp batch: upstream/saved size mismatch");
  const std::size_t chunk = std::max<std::size_t>(opt.chunk, 1);
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  std::vector<double> grad(blocks.size());
  parallel_for(n_chunks, opt.workers, [&](std::size_t ci) {
    const std::size_t lo = ci * chunk, hi = std::min(n, lo + chunk);
    for (std::size_t b = lo; b < hi; ++b)
      check_saved(blocks.subspan(b * L, L), T, config,
                  upstream.subspan(b * L, L), saved[b]);
    if (opt.impl == BcjrImpl::Fused) {
      fused_vjp_chunk(blocks.subspan(lo * L, (hi - lo) * L), T, config,
                      upstream.subspan(lo * L, (hi - lo) * L),
                      saved.subspan(lo, hi - lo),
                      std::span(grad).subspan(lo * L, (hi - lo) * L));
    } else {
      for (std::size_t b = lo; b < hi; ++b) {
        auto g = reference_vjp(blocks.subspan(b * L, L), T, config,
                               upstream.subspan(b * L, L), saved[b]);
        std::copy(g.begin(), g.end(), grad.begin() + b * L);
      }
    }
  });
  return grad;
}

} // namespace tcq
