#pragma once

#include "tcq/trellis.hpp"

namespace tcq {

/**
 * Finite-temperature trellis quantizer.
 *
 * Paths s_{1:L} (with s_0 pinned to the start state) are weighted by
 *
 *   p_T(s_{1:L} | w) ∝ exp(-(1/T) Σ_t ½ (w_t - c(s_t))^2) · 1[legal],
 *
 * a chain with local fields h_t(s) = -(w_t - c(s))^2 / (2T). Forward and
 * backward messages are carried in the log domain; the soft codeword is
 * the posterior mean of c(s_t) at every site.
 *
 * Two implementations share one contract:
 *   - Reference: per-step gather into a temporary, row-wise log-sum-exp,
 *     then add; easy to audit.
 *   - Fused: one pass over (state, predecessor) with an inline
 *     log-sum-exp, fields recomputed on the fly, chunks of blocks laid out
 *     along a leading dimension, no per-step temporaries.
 */

enum class BcjrImpl { Reference, Fused };

std::string to_string(BcjrImpl impl);
BcjrImpl bcjr_impl_from_string(const std::string &s);

// Log-weight of illegal transitions. Finite so that log-sum-exp needs no
// branches for -inf; never survives into a probability.
inline constexpr double kLogZero = -1e30;

struct SoftQuantOutput {
  std::vector<double> soft_codeword; // L
  Matrix marginals;                  // L x S, p_T(s_t = s | w)
  double log_Z = 0.0;
  Matrix saved_log_alpha; // L x S
  Matrix saved_log_beta;  // L x S
  double temperature = 0.0;
  std::uint64_t fingerprint = 0; // of (config, T, w)
};

// Fingerprint binding saved state to its inputs.
std::uint64_t soft_state_fingerprint(std::span<const double> w, double T,
                                     const TrellisConfig &config);

// ============================================================================
// Generic chain
// ============================================================================

// A chain over sites 1..L with S states. log_init weights s_1, log_final
// weights s_L, and transitions are the 0/1 adjacency given by pred/succ.
// The trellis quantizer is one instance; reversal gives another.
struct ChainModel {
  std::size_t S = 0;
  std::vector<double> log_init;  // S
  std::vector<double> log_final; // S
  Matrix local_fields;           // L x S
  std::size_t n_pred = 0;
  std::vector<std::uint32_t> pred; // S x n_pred
  std::size_t n_succ = 0;
  std::vector<std::uint32_t> succ; // S x n_succ
};

ChainModel make_chain_model(std::span<const double> w, double T,
                            const TrellisConfig &config);

// Sites reversed, transitions transposed, init and final swapped.
ChainModel reversed(const ChainModel &m);

// log alpha_t(s): all prefixes ending in s at site t, including h_t(s).
Matrix forward_messages(const ChainModel &m);
// log beta_t(s): all suffixes after site t, starting from s at site t.
Matrix backward_messages(const ChainModel &m);

Matrix forward_messages(std::span<const double> w, double T,
                        const TrellisConfig &config);
Matrix backward_messages(std::span<const double> w, double T,
                         const TrellisConfig &config);

// ============================================================================
// Soft quantizer
// ============================================================================

SoftQuantOutput soft_quantize(std::span<const double> w, double T,
                              const TrellisConfig &config,
                              BcjrImpl impl = BcjrImpl::Reference);

// g_tau = Σ_t upstream_t ∂ŵ_t/∂w_tau, by a reverse sweep through both
// message recursions; per-step softmax weights are recomputed from the
// saved messages.
std::vector<double> soft_quantize_vjp(std::span<const double> w, double T,
                                      const TrellisConfig &config,
                                      std::span<const double> upstream,
                                      const SoftQuantOutput &saved,
                                      BcjrImpl impl = BcjrImpl::Reference);

SoftQuantOutput soft_quantize_fused(std::span<const double> w, double T,
                                    const TrellisConfig &config);
std::vector<double> fused_vjp(std::span<const double> w, double T,
                              const TrellisConfig &config,
                              std::span<const double> upstream,
                              const SoftQuantOutput &saved);

// Hard Viterbi forward value; gradients from the temperature-T relaxation.
struct SteOutput {
  std::vector<double> codeword;
  SoftQuantOutput saved;

  std::vector<double> vjp(std::span<const double> upstream) const;

  // Inputs retained for the backward pass.
  std::vector<double> w;
  std::shared_ptr<const TrellisConfig> config;
  BcjrImpl impl = BcjrImpl::Reference;
};

SteOutput ste_quantize(std::span<const double> w, double T,
                       const TrellisConfig &config,
                       BcjrImpl impl = BcjrImpl::Reference);

// ============================================================================
// Chunked batches
// ============================================================================

struct BatchOptions {
  BcjrImpl impl = BcjrImpl::Reference;
  std::size_t chunk = 16; // blocks per chunk
  unsigned workers = 1;   // chunks processed concurrently
};

// `blocks` holds n*L values, block-major.
std::vector<SoftQuantOutput>
soft_quantize_batch(std::span<const double> blocks, double T,
                    const TrellisConfig &config, const BatchOptions &opt = {});

std::vector<double> soft_quantize_vjp_batch(
    std::span<const double> blocks, double T, const TrellisConfig &config,
    std::span<const double> upstream, std::span<const SoftQuantOutput> saved,
    const BatchOptions &opt = {});

// Fused kernels over one chunk of blocks. Outputs must be sized by the
// caller (the batch entry points do this).
void fused_forward_chunk(std::span<const double> blocks, double T,
                         const TrellisConfig &config,
                         std::span<SoftQuantOutput> out);
void fused_vjp_chunk(std::span<const double> blocks, double T,
                     const TrellisConfig &config,
                     std::span<const double> upstream,
                     std::span<const SoftQuantOutput> saved,
                     std::span<double> grad);

} // namespace tcq
