#include "doctest.h"
#include "oracles.hpp"

#include "tcq/bcjr.hpp"
#include "tcq/viterbi.hpp"

#include <cmath>
#include <random>

using namespace tcq;

namespace {

struct Tiny {
  std::size_t L;
  unsigned k, V;
};

TrellisConfig random_tiny(std::mt19937_64 &rng, std::size_t max_L = 6) {
  const std::size_t L = 1 + rng() % max_L;
  const unsigned k = 1 + rng() % 2;
  const unsigned V = k == 2 ? 0 : rng() % 2; // S <= 4
  return build_trellis(L, k, V, rng());
}

// Relative error with an absolute floor for entries that are ~0.
double rel_err(double got, double want) {
  return std::abs(got - want) /
         std::max({std::abs(got), std::abs(want), 1e-6});
}

std::vector<double> finite_difference_vjp(std::span<const double> w, double T,
                                          const TrellisConfig &cfg,
                                          std::span<const double> u,
                                          double h = 1e-5) {
  std::vector<double> g(w.size());
  std::vector<double> wp(w.begin(), w.end());
  for (std::size_t i = 0; i < w.size(); ++i) {
    wp[i] = w[i] + h;
    const auto plus = soft_quantize(wp, T, cfg).soft_codeword;
    wp[i] = w[i] - h;
    const auto minus = soft_quantize(wp, T, cfg).soft_codeword;
    wp[i] = w[i];
    double acc = 0.0;
    for (std::size_t t = 0; t < w.size(); ++t)
      acc += u[t] * (plus[t] - minus[t]) / (2 * h);
    g[i] = acc;
  }
  return g;
}

} // namespace

TEST_CASE("forward base case: single site") {
  const auto cfg = build_trellis(1, 2, 2, 9);
  const std::vector<double> w{0.3};
  const double T = 0.7;
  const auto a = forward_messages(w, T, cfg);
  for (std::uint32_t s = 0; s < cfg.S(); ++s) {
    bool reachable = false;
    for (std::uint32_t b = 0; b < 4; ++b)
      reachable |= cfg.tables().next(0, b) == s;
    if (reachable) {
      const double want = -0.5 * (w[0] - cfg.emission()[s]) *
                          (w[0] - cfg.emission()[s]) / T;
      CHECK(a(0, s) == doctest::Approx(want).epsilon(1e-14));
    } else {
      CHECK(a(0, s) <= kLogZero / 2);
    }
  }
  const auto b = backward_messages(w, T, cfg);
  for (std::uint32_t s = 0; s < cfg.S(); ++s)
    CHECK(b(0, s) == 0.0);
}

TEST_CASE("messages match prefix/suffix enumeration") {
  std::mt19937_64 rng(10);
  SUBCASE("L=3, S=2, T=1") {
    const auto cfg = build_trellis(3, 1, 0, 4);
    const auto w = oracle::random_block(rng, 3);
    const auto a = forward_messages(w, 1.0, cfg);
    const auto b = backward_messages(w, 1.0, cfg);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::uint32_t s = 0; s < 2; ++s) {
        CHECK(std::abs(a(t, s) - static_cast<double>(oracle::prefix_log_sum(
                                     w, 1.0, cfg, t, s))) < 1e-12);
        CHECK(std::abs(b(t, s) - static_cast<double>(oracle::suffix_log_sum(
                                     w, 1.0, cfg, t, s))) < 1e-12);
      }
  }
  SUBCASE("random tiny instances") {
    for (int rep = 0; rep < 40; ++rep) {
      const auto cfg = random_tiny(rng, 5);
      const double T = 0.2 + (rng() % 100) / 50.0;
      const auto w = oracle::random_block(rng, cfg.L());
      const auto a = forward_messages(w, T, cfg);
      const auto b = backward_messages(w, T, cfg);
      for (std::size_t t = 0; t < cfg.L(); ++t)
        for (std::uint32_t s = 0; s < cfg.S(); ++s) {
          const auto pa = oracle::prefix_log_sum(w, T, cfg, t, s);
          if (std::isinf(pa))
            CHECK(a(t, s) <= kLogZero / 2);
          else
            CHECK(std::abs(a(t, s) - static_cast<double>(pa)) < 1e-11);
          CHECK(std::abs(b(t, s) - static_cast<double>(oracle::suffix_log_sum(
                                       w, T, cfg, t, s))) < 1e-11);
        }
    }
  }
}

TEST_CASE("reversing the chain swaps forward and backward messages") {
  std::mt19937_64 rng(11);
  const auto cfg = build_trellis(7, 2, 2, 8);
  const auto w = oracle::random_block(rng, cfg.L());
  const auto m = make_chain_model(w, 0.4, cfg);
  const auto r = reversed(m);
  const auto a = forward_messages(m), b = backward_messages(m);
  const auto ra = forward_messages(r), rb = backward_messages(r);
  const std::size_t L = cfg.L();
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t s = 0; s < cfg.S(); ++s) {
      CHECK(ra(L - 1 - t, s) ==
            doctest::Approx(b(t, s) + m.local_fields(t, s)).epsilon(1e-12));
      if (a(t, s) > kLogZero / 2)
        CHECK(rb(L - 1 - t, s) ==
              doctest::Approx(a(t, s) - m.local_fields(t, s)).epsilon(1e-12));
    }
}

TEST_CASE("transfer-matrix products reproduce the log-domain recursion") {
  std::mt19937_64 rng(12);
  const auto cfg = build_trellis(12, 2, 2, 21);
  const auto w = oracle::random_block(rng, cfg.L(), 0.5);
  const double T = 1.0;
  const std::size_t S = cfg.S();
  // Dense transfer matrix Tm[s'][s] = 1[s' -> s].
  Matrix Tm(S, S);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t b = 0; b < cfg.tables().n_succ; ++b)
      Tm(s, cfg.tables().next(s, b)) = 1.0;
  std::vector<double> v(S, 0.0);
  v[0] = 1.0; // s_0
  const auto a = forward_messages(w, T, cfg);
  for (std::size_t t = 0; t < cfg.L(); ++t) {
    std::vector<double> nv(S, 0.0);
    for (std::size_t sp = 0; sp < S; ++sp)
      for (std::size_t s = 0; s < S; ++s)
        nv[s] += v[sp] * Tm(sp, s);
    for (std::size_t s = 0; s < S; ++s) {
      const double d = w[t] - cfg.emission()[s];
      nv[s] *= std::exp(-0.5 * d * d / T);
    }
    v = nv;
    for (std::size_t s = 0; s < S; ++s)
      if (v[s] > 0)
        CHECK(std::abs(std::exp(a(t, s)) - v[s]) <= 1e-8 * v[s]);
  }
}

TEST_CASE("soft_quantize matches exhaustive Boltzmann marginals") {
  std::mt19937_64 rng(13);
  const auto cfg = build_trellis(4, 1, 1, 6); // L=4, S=4
  const auto w = oracle::random_block(rng, 4);
  const auto out = soft_quantize(w, 0.5, cfg);
  const auto ex = oracle::exhaustive(w, 0.5, cfg);
  CHECK(std::abs(out.log_Z - static_cast<double>(ex.log_Z)) < 1e-10);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(std::abs(out.soft_codeword[t] - static_cast<double>(ex.soft[t])) < 1e-10);
    for (std::size_t s = 0; s < 4; ++s)
      CHECK(std::abs(out.marginals(t, s) -
                     static_cast<double>(ex.marginals[t][s])) < 1e-10);
  }
}

TEST_CASE("high temperature approaches path-counting marginals") {
  std::mt19937_64 rng(14);
  const auto cfg = build_trellis(5, 1, 1, 2);
  const auto w = oracle::random_block(rng, 5);
  const auto out = soft_quantize(w, 1e8, cfg);
  const auto paths = oracle::all_paths(cfg);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::uint32_t s = 0; s < cfg.S(); ++s) {
      double count = 0;
      for (const auto &p : paths)
        count += p[t] == s;
      CHECK(std::abs(out.marginals(t, s) - count / paths.size()) < 1e-6);
    }
}

TEST_CASE("soft codeword crystallizes onto the Viterbi codeword") {
  std::mt19937_64 rng(15);
  const auto cfg = build_trellis(16, 2, 2, 3);
  int tested = 0;
  while (tested < 20) {
    const auto w = oracle::random_block(rng, cfg.L());
    if (viterbi_margin(w, cfg) <= 20 * 1e-4)
      continue;
    ++tested;
    const auto hard = viterbi_encode(w, cfg).codeword;
    const auto soft = soft_quantize(w, 1e-4, cfg).soft_codeword;
    CHECK(max_abs_diff(soft, hard) <= 1e-6);
  }
}

TEST_CASE("soft codeword is a convex combination of emissions") {
  std::mt19937_64 rng(16);
  const auto cfg = build_trellis(16, 2, 2, 3);
  const double lo = cfg.quantiles().front(), hi = cfg.quantiles().back();
  for (double T : {0.01, 0.3, 5.0}) {
    const auto path_w = viterbi_encode(oracle::random_block(rng, 16), cfg).codeword;
    for (double v : soft_quantize(path_w, T, cfg).soft_codeword) {
      CHECK(v >= lo);
      CHECK(v <= hi);
    }
  }
}

TEST_CASE("output invariants over random instances") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 500; ++rep) {
    const auto cfg = build_trellis(1 + rng() % 16, 1 + rng() % 2, rng() % 3, rng());
    const double T = std::pow(10.0, -3.0 + 4.0 * (rng() % 1000) / 1000.0);
    const auto w = oracle::random_block(rng, cfg.L());
    const auto out = soft_quantize(w, T, cfg);
    for (std::size_t t = 0; t < cfg.L(); ++t) {
      double sum = 0, mean = 0, z_t = -1e300;
      for (std::size_t s = 0; s < cfg.S(); ++s) {
        const double p = out.marginals(t, s);
        REQUIRE(p >= 0.0);
        REQUIRE(p <= 1.0);
        sum += p;
        mean += cfg.emission()[s] * p;
        const double x = out.saved_log_alpha(t, s) + out.saved_log_beta(t, s);
        z_t = std::max(z_t, x);
      }
      double acc = 0;
      for (std::size_t s = 0; s < cfg.S(); ++s)
        acc += std::exp(out.saved_log_alpha(t, s) + out.saved_log_beta(t, s) - z_t);
      z_t += std::log(acc);
      CHECK(std::abs(sum - 1.0) <= 1e-10);
      CHECK(std::abs(mean - out.soft_codeword[t]) <= 1e-12);
      CHECK(std::abs(z_t - out.log_Z) <= 1e-8 * std::max(1.0, std::abs(out.log_Z)));
    }
  }
}

TEST_CASE("illegal-transition sentinel never reaches probabilities") {
  const auto cfg = build_trellis(4, 1, 3, 2); // first sites cannot reach most states
  const std::vector<double> w{0.1, -0.2, 0.3, 0.0};
  const auto out = soft_quantize(w, 0.05, cfg);
  for (std::uint32_t s = 0; s < cfg.S(); ++s) {
    if (s == cfg.tables().next(0, 0) || s == cfg.tables().next(0, 1))
      continue;
    CHECK(out.marginals(0, s) <= 1e-200);
  }
}

TEST_CASE("vjp: zero upstream gives zero gradient") {
  std::mt19937_64 rng(18);
  const auto cfg = build_trellis(16, 2, 2, 3);
  const auto w = oracle::random_block(rng, 16);
  const auto out = soft_quantize(w, 0.3, cfg);
  const std::vector<double> zero(16, 0.0);
  for (auto impl : {BcjrImpl::Reference, BcjrImpl::Fused})
    for (double g : soft_quantize_vjp(w, 0.3, cfg, zero, out, impl))
      CHECK(g == 0.0);
}

TEST_CASE("vjp matches central finite differences") {
  std::mt19937_64 rng(19);
  const auto cfg = build_trellis(4, 1, 1, 12); // L=4, S=4
  for (double T : {0.1, 0.5, 1.0})
    for (int rep = 0; rep < 10; ++rep) {
      const auto w = oracle::random_block(rng, 4);
      const auto u = oracle::random_block(rng, 4);
      const auto out = soft_quantize(w, T, cfg);
      const auto g = soft_quantize_vjp(w, T, cfg, u, out);
      const auto fd = finite_difference_vjp(w, T, cfg, u);
      for (std::size_t i = 0; i < 4; ++i)
        CHECK(rel_err(g[i], fd[i]) <= 1e-5);
    }
}

TEST_CASE("vjp matches the exhaustive covariance identity") {
  std::mt19937_64 rng(20);
  for (int rep = 0; rep < 60; ++rep) {
    const auto cfg = rep < 20 ? build_trellis(3, 1, 0, rng()) : random_tiny(rng, 4);
    const double T = 0.1 + (rng() % 100) / 50.0;
    const auto w = oracle::random_block(rng, cfg.L());
    const auto u = oracle::random_block(rng, cfg.L());
    const auto ex = oracle::exhaustive(w, T, cfg);
    const auto out = soft_quantize(w, T, cfg);
    for (auto impl : {BcjrImpl::Reference, BcjrImpl::Fused}) {
      const auto g = soft_quantize_vjp(w, T, cfg, u, out, impl);
      for (std::size_t tau = 0; tau < cfg.L(); ++tau) {
        long double want = 0;
        for (std::size_t t = 0; t < cfg.L(); ++t)
          want += u[t] * ex.jacobian[t][tau];
        CHECK(std::abs(g[tau] - static_cast<double>(want)) <= 1e-9);
      }
    }
  }
}

TEST_CASE("fused and reference agree") {
  std::mt19937_64 rng(21);
  for (auto [k, V, topo] : {std::tuple{2u, 2u, Topology::ShiftRegister},
                            std::tuple{1u, 3u, Topology::ShiftRegister},
                            std::tuple{4u, 0u, Topology::FullyConnected}}) {
    const auto cfg = build_trellis(16, k, V, 4, topo);
    for (double T : {1e-4, 0.05, 1.0, 10.0})
      for (int rep = 0; rep < 20; ++rep) {
        const auto w = oracle::random_block(rng, 16, 1.5);
        const auto u = oracle::random_block(rng, 16);
        const auto ref = soft_quantize(w, T, cfg, BcjrImpl::Reference);
        const auto fus = soft_quantize(w, T, cfg, BcjrImpl::Fused);
        CHECK(max_abs_diff(ref.soft_codeword, fus.soft_codeword) <= 1e-7);
        CHECK(max_abs_diff(ref.marginals.data, fus.marginals.data) <= 1e-7);
        const auto gr = soft_quantize_vjp(w, T, cfg, u, ref, BcjrImpl::Reference);
        const auto gf = soft_quantize_vjp(w, T, cfg, u, fus, BcjrImpl::Fused);
        double num = 0, den = 0;
        for (std::size_t i = 0; i < 16; ++i) {
          num = std::max(num, std::abs(gr[i] - gf[i]));
          den = std::max(den, std::abs(gr[i]));
        }
        CHECK(num <= 1e-6 * std::max(den, 1e-300));
      }
  }
  SUBCASE("zero block") {
    const auto cfg = build_trellis(16, 2, 2, 4);
    const std::vector<double> z(16, 0.0);
    const auto ref = soft_quantize(z, 0.2, cfg, BcjrImpl::Reference);
    const auto fus = soft_quantize(z, 0.2, cfg, BcjrImpl::Fused);
    CHECK(max_abs_diff(ref.soft_codeword, fus.soft_codeword) <= 1e-15);
    CHECK(ref.fingerprint == fus.fingerprint);
  }
}

TEST_CASE("batched entry points equal per-block calls") {
  std::mt19937_64 rng(22);
  const auto cfg = build_trellis(16, 2, 2, 4);
  const auto blocks = oracle::random_block(rng, 16 * 37);
  const auto up = oracle::random_block(rng, 16 * 37);
  for (auto impl : {BcjrImpl::Reference, BcjrImpl::Fused}) {
    BatchOptions opt{impl, 8, 2};
    const auto outs = soft_quantize_batch(blocks, 0.3, cfg, opt);
    const auto grad = soft_quantize_vjp_batch(blocks, 0.3, cfg, up, outs, opt);
    for (std::size_t b = 0; b < 37; ++b) {
      const auto w = std::span(blocks).subspan(b * 16, 16);
      const auto one = soft_quantize(w, 0.3, cfg, impl);
      CHECK(one.soft_codeword == outs[b].soft_codeword);
      const auto g = soft_quantize_vjp(w, 0.3, cfg,
                                       std::span(up).subspan(b * 16, 16), one, impl);
      CHECK(max_abs_diff(g, std::span(grad).subspan(b * 16, 16)) == 0.0);
    }
  }
}

TEST_CASE("ste_quantize: hard forward, soft backward") {
  std::mt19937_64 rng(23);
  const auto cfg = build_trellis(16, 2, 2, 4);
  for (int rep = 0; rep < 100; ++rep) {
    const auto w = oracle::random_block(rng, 16);
    const auto ste = ste_quantize(w, 0.2, cfg);
    CHECK(ste.codeword == viterbi_encode(w, cfg).codeword);
    const auto u = oracle::random_block(rng, 16);
    CHECK(ste.vjp(u) == soft_quantize_vjp(w, 0.2, cfg, u, ste.saved));
  }
  int tested = 0;
  while (tested < 10) {
    const auto w = oracle::random_block(rng, 16);
    if (viterbi_margin(w, cfg) <= 20 * 1e-4)
      continue;
    ++tested;
    const auto ste = ste_quantize(w, 1e-4, cfg);
    CHECK(max_abs_diff(ste.codeword, soft_quantize(w, 1e-4, cfg).soft_codeword) <= 1e-6);
  }
}

TEST_CASE("error paths") {
  const auto cfg = build_trellis(4, 1, 1, 1);
  const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
  CHECK_THROWS_AS(soft_quantize(w, 0.0, cfg), ParameterError);
  CHECK_THROWS_AS(soft_quantize(w, -1.0, cfg), ParameterError);
  CHECK_THROWS_AS(soft_quantize(w, 0.0, cfg, BcjrImpl::Fused), ParameterError);
  const std::vector<double> bad{0.1, std::nan(""), 0.3, 0.4};
  CHECK_THROWS_AS(soft_quantize(bad, 1.0, cfg), NumericalError);
  CHECK_THROWS_AS(forward_messages(w, 0.0, cfg), ParameterError);

  const auto out = soft_quantize(w, 0.5, cfg);
  const std::vector<double> u{1, 1, 1, 1};
  CHECK_THROWS_AS(soft_quantize_vjp(w, 0.6, cfg, u, out), StaleStateError);
  const std::vector<double> w2{0.1, 0.2, 0.3, 0.5};
  CHECK_THROWS_AS(soft_quantize_vjp(w2, 0.5, cfg, u, out), StaleStateError);
  CHECK_THROWS_AS(soft_quantize_vjp(w, 0.5, build_trellis(4, 1, 1, 2), u, out),
                  StaleStateError);
  const std::vector<double> short_u{1, 1};
  CHECK_THROWS_AS(soft_quantize_vjp(w, 0.5, cfg, short_u, out), DimensionError);
  CHECK_THROWS_AS(fused_vjp(w, 0.5, cfg, short_u, out), DimensionError);
}
