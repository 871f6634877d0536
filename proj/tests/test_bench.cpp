#include "doctest.h"

#include "tcq/bench.hpp"

#include <cmath>

using namespace tcq;

namespace {

std::vector<double> inputs(std::size_t n, std::uint64_t seed) {
  std::vector<double> v(n);
  fill_normal(v, seed);
  return v;
}

} // namespace

TEST_CASE("reference and fused kernels agree on bench inputs") {
  const auto trellis = build_trellis(16, 2, 2, 0);
  const auto blocks = inputs(16 * 32, 1);
  const auto up = inputs(16 * 32, 2);
  for (double T : {1.0, 0.3, 0.02}) {
    const auto p = check_parity(blocks, up, T, trellis, 8);
    CHECK(p.ok());
    CHECK(p.forward_max_abs <= kForwardParityTol);
    CHECK(p.backward_max_rel <= kBackwardParityTol);
  }
}

TEST_CASE("bench results carry consistent speedups") {
  BenchConfig cfg;
  cfg.n_chunks = 2;
  const std::vector<BenchConfig> configs{cfg};
  const auto r = run_bench(configs, 5, 1, 3);
  REQUIRE(r.size() == 2);
  CHECK(r[0].impl == BcjrImpl::Reference);
  CHECK(r[1].impl == BcjrImpl::Fused);
  CHECK(r[0].speedup_total == 1.0);
  CHECK(r[1].speedup_forward == doctest::Approx(r[0].forward.median / r[1].forward.median));
  CHECK(r[1].speedup_backward == doctest::Approx(r[0].backward.median / r[1].backward.median));
  CHECK(r[1].speedup_total == doctest::Approx(r[0].total.median / r[1].total.median));
  for (const auto &x : r) {
    CHECK(x.L == 16);
    CHECK(x.S == 16);
    CHECK(x.n_repeats == 5);
    CHECK(x.forward.p10 <= x.forward.median);
    CHECK(x.forward.median <= x.forward.p90);
    CHECK(x.total.median > 0.0);
  }
  const auto csv = bench_csv(r);
  CHECK(csv.rfind("impl,L,S,chunk,forward_ms,backward_ms,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("timing an implementation against itself gives a speedup near one") {
  BenchConfig cfg;
  cfg.n_chunks = 4;
  const auto blocks = inputs(16 * 16 * 4, 5);
  const auto up = inputs(16 * 16 * 4, 6);
  const std::vector<BcjrImpl> impls{BcjrImpl::Reference, BcjrImpl::Reference};
  const auto r = time_impls(impls, cfg, blocks, up, 9, 1);
  REQUIRE(r.size() == 2);
  CHECK(r[1].speedup_total >= 0.5);
  CHECK(r[1].speedup_total <= 2.0);
}

TEST_CASE("bench argument validation") {
  BenchConfig cfg;
  cfg.n_chunks = 1;
  const std::vector<BenchConfig> configs{cfg};
  CHECK_THROWS_AS(run_bench(configs, 4, 1, 0), ParameterError);
  CHECK_THROWS_AS(run_bench(configs, 5, 0, 0), ParameterError);
}
