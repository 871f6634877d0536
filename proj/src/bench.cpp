#include "tcq/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace tcq {

namespace {

using Clock = std::chrono::steady_clock;

TimingStats summarize(std::vector<double> ms) {
  std::sort(ms.begin(), ms.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(ms.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, ms.size() - 1);
    return ms[lo] + (pos - static_cast<double>(lo)) * (ms[hi] - ms[lo]);
  };
  return {q(0.5), q(0.1), q(0.9)};
}

} // namespace

bool ParityReport::ok() const {
  return forward_max_abs <= kForwardParityTol &&
         backward_max_rel <= kBackwardParityTol;
}

ParityReport check_parity(std::span<const double> blocks,
                          std::span<const double> upstream, double T,
                          const TrellisConfig &config, std::size_t chunk) {
  const std::size_t L = config.L();
  const std::size_t n = blocks.size() / L;
  const BatchOptions ref{BcjrImpl::Reference, chunk, 1};
  const BatchOptions fus{BcjrImpl::Fused, chunk, 1};
  const auto a = soft_quantize_batch(blocks, T, config, ref);
  const auto b = soft_quantize_batch(blocks, T, config, fus);
  const auto ga = soft_quantize_vjp_batch(blocks, T, config, upstream, a, ref);
  const auto gb = soft_quantize_vjp_batch(blocks, T, config, upstream, b, fus);
  ParityReport r;
  for (std::size_t i = 0; i < n; ++i) {
    r.forward_max_abs = std::max(
        {r.forward_max_abs, max_abs_diff(a[i].soft_codeword, b[i].soft_codeword),
         max_abs_diff(a[i].marginals.data, b[i].marginals.data)});
    double diff = 0, scale = 0;
    for (std::size_t t = 0; t < L; ++t) {
      diff = std::max(diff, std::abs(ga[i * L + t] - gb[i * L + t]));
      scale = std::max(scale, std::abs(ga[i * L + t]));
    }
    if (diff > 0)
      r.backward_max_rel = std::max(r.backward_max_rel,
                                    diff / std::max(scale, 1e-300));
  }
  return r;
}

namespace {

struct Sample {
  double forward_ms, backward_ms;
};

Sample time_once(BcjrImpl impl, const BenchConfig &cfg,
                 const TrellisConfig &trellis, std::span<const double> blocks,
                 std::span<const double> upstream) {
  const BatchOptions opt{impl, cfg.chunk, cfg.workers};
  const double T = cfg.temperature;
  const auto t0 = Clock::now();
  const auto saved = soft_quantize_batch(blocks, T, trellis, opt);
  const auto t1 = Clock::now();
  const auto g = soft_quantize_vjp_batch(blocks, T, trellis, upstream, saved, opt);
  const auto t2 = Clock::now();
  if (g.size() != blocks.size())
    throw NumericalError("bench: gradient size mismatch");
  const double per_chunk = static_cast<double>(cfg.n_chunks);
  return {std::chrono::duration<double, std::milli>(t1 - t0).count() / per_chunk,
          std::chrono::duration<double, std::milli>(t2 - t1).count() / per_chunk};
}

// Times each listed implementation, interleaving them repeat by repeat so
// slow drifts in machine load hit all of them alike.
std::vector<BenchResult> time_interleaved(std::span<const BcjrImpl> impls,
                                          const BenchConfig &cfg,
                                          std::span<const double> blocks,
                                          std::span<const double> upstream,
                                          std::size_t n_repeats,
                                          std::size_t warmup) {
  const auto trellis = build_trellis(cfg.code);
  std::vector<std::vector<double>> fwd(impls.size()), bwd(impls.size()),
      tot(impls.size());
  for (std::size_t r = 0; r < warmup + n_repeats; ++r)
    for (std::size_t i = 0; i < impls.size(); ++i) {
      const auto smp = time_once(impls[i], cfg, trellis, blocks, upstream);
      if (r < warmup)
        continue;
      fwd[i].push_back(smp.forward_ms);
      bwd[i].push_back(smp.backward_ms);
      tot[i].push_back(smp.forward_ms + smp.backward_ms);
    }
  std::vector<BenchResult> out(impls.size());
  for (std::size_t i = 0; i < impls.size(); ++i) {
    auto &res = out[i];
    res.impl = impls[i];
    res.L = trellis.L();
    res.S = trellis.S();
    res.chunk = cfg.chunk;
    res.n_repeats = n_repeats;
    res.workers = cfg.workers;
    res.forward = summarize(std::move(fwd[i]));
    res.backward = summarize(std::move(bwd[i]));
    res.total = summarize(std::move(tot[i]));
  }
  for (auto &res : out) {
    res.speedup_forward = out[0].forward.median / res.forward.median;
    res.speedup_backward = out[0].backward.median / res.backward.median;
    res.speedup_total = out[0].total.median / res.total.median;
  }
  return out;
}

} // namespace

std::vector<BenchResult> time_impls(std::span<const BcjrImpl> impls,
                                    const BenchConfig &cfg,
                                    std::span<const double> blocks,
                                    std::span<const double> upstream,
                                    std::size_t n_repeats, std::size_t warmup) {
  if (impls.empty())
    throw ParameterError("bench: no implementations to time");
  return time_interleaved(impls, cfg, blocks, upstream, n_repeats, warmup);
}

std::vector<BenchResult> run_bench(std::span<const BenchConfig> configs,
                                   std::size_t n_repeats, std::size_t warmup,
                                   std::uint64_t seed) {
  if (n_repeats < 5)
    throw ParameterError("bench: n_repeats must be >= 5");
  if (warmup < 1)
    throw ParameterError("bench: warmup must be >= 1");
  std::vector<BenchResult> out;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const auto &cfg = configs[c];
    if (cfg.chunk < 1 || cfg.n_chunks < 1)
      throw ParameterError("bench: chunk and n_chunks must be >= 1");
    const auto trellis = build_trellis(cfg.code);
    const std::size_t n = cfg.chunk * cfg.n_chunks * trellis.L();
    const auto input_seed =
        derive_seed(derive_seed(seed, seed_stream::kBenchInputs), c);
    std::vector<double> blocks(n), upstream(n);
    fill_normal(blocks, input_seed);
    fill_normal(upstream, derive_seed(input_seed, 1));

    const auto parity = check_parity(blocks, upstream, cfg.temperature, trellis,
                                     cfg.chunk);
    if (!parity.ok()) {
      std::ostringstream msg;
      msg << "bench: parity failure (forward " << parity.forward_max_abs
          << ", backward rel " << parity.backward_max_rel << ")";
      throw NumericalError(msg.str());
    }
    const BcjrImpl impls[] = {BcjrImpl::Reference, BcjrImpl::Fused};
    for (auto &r : time_interleaved(impls, cfg, blocks, upstream, n_repeats, warmup))
      out.push_back(r);
  }
  return out;
}

std::string bench_csv(std::span<const BenchResult> results) {
  std::ostringstream os;
  os << "impl,L,S,chunk,forward_ms,backward_ms,forward_p10,forward_p90,"
        "backward_p10,backward_p90,total_ms,speedup_forward,speedup_backward,"
        "speedup_total,workers,n_repeats\n";
  os.precision(6);
  for (const auto &r : results)
    os << to_string(r.impl) << ',' << r.L << ',' << r.S << ',' << r.chunk << ','
       << r.forward.median << ',' << r.backward.median << ',' << r.forward.p10
       << ',' << r.forward.p90 << ',' << r.backward.p10 << ',' << r.backward.p90
       << ',' << r.total.median << ',' << r.speedup_forward << ','
       << r.speedup_backward << ',' << r.speedup_total << ','
       << r.workers << ',' << r.n_repeats << '\n';
  return os.str();
}

} // namespace tcq
