#include "doctest.h"

#include "tcq/serialization.hpp"

#include <cmath>

using namespace tcq;

TEST_CASE("exponential schedule endpoints are exact") {
  for (std::size_t n : {1, 3, 10, 1000}) {
    const AnnealSchedule s{1.0, 0.02, n, ScheduleKind::ExponentialNaive};
    CHECK(temperature_at(s, 0) == 1.0);
    CHECK(temperature_at(s, n) == 0.02);
  }
}

TEST_CASE("skip-high-T midpoint value") {
  const AnnealSchedule s{0.3, 0.05, 10, ScheduleKind::ExponentialSkipHighT};
  // 0.3 * (0.05 / 0.3)^0.5, evaluated in Python with mpmath
  CHECK(std::abs(temperature_at(s, 5) - 0.1224744871391589) < 1e-15);
}

TEST_CASE("schedules are monotone and geometric") {
  for (auto kind : {ScheduleKind::ExponentialNaive, ScheduleKind::ExponentialSkipHighT}) {
    const double T0 = kind == ScheduleKind::ExponentialNaive ? 1.0 : 0.3;
    const AnnealSchedule s{T0, 1e-3, 40, kind};
    const auto g = temperature_grid(s);
    REQUIRE(g.size() == 41);
    const double ratio = g[1] / g[0];
    for (std::size_t t = 0; t + 1 < g.size(); ++t) {
      CHECK(g[t + 1] <= g[t]);
      CHECK(std::abs(g[t + 1] / g[t] - ratio) <= 1e-12);
    }
  }
  const AnnealSchedule c{0.5, 0.5, 7, ScheduleKind::Constant};
  for (double T : temperature_grid(c))
    CHECK(T == 0.5);
  const AnnealSchedule c2{0.5, 0.1, 7, ScheduleKind::Constant};
  CHECK(temperature_at(c2, 7) == 0.5);
}

TEST_CASE("schedule validation") {
  CHECK_THROWS_AS(temperature_at({1.0, 0.02, 10, ScheduleKind::ExponentialNaive}, 11),
                  ParameterError);
  CHECK_THROWS_AS(validate(AnnealSchedule{0.1, 0.2, 10, ScheduleKind::ExponentialNaive}),
                  ParameterError);
  CHECK_THROWS_AS(validate(AnnealSchedule{1.0, 0.02, 0, ScheduleKind::ExponentialNaive}),
                  ParameterError);
  CHECK_THROWS_AS(validate(AnnealSchedule{0.0, 0.0, 1, ScheduleKind::Constant}),
                  ParameterError);
  CHECK_THROWS_AS(validate(AnnealSchedule{1.0, 0.02, 10, ScheduleKind::ExponentialSkipHighT}),
                  ParameterError);
  CHECK_THROWS_AS(
      validate(AnnealSchedule{0.3 + 1e-9, 0.02, 10, ScheduleKind::ExponentialSkipHighT}),
      ParameterError);
  CHECK_NOTHROW(
      validate(AnnealSchedule{0.3 + 1e-13, 0.02, 10, ScheduleKind::ExponentialSkipHighT}));
  CHECK(naive_schedule(0.02, 10).T0 == 1.0);
  CHECK(skip_high_t_schedule(0.02, 10).T0 == 0.3);
}

TEST_CASE("schedule JSON round trip and errors") {
  const AnnealSchedule s{0.3, 0.05, 12, ScheduleKind::ExponentialSkipHighT};
  CHECK(schedule_from_json(to_json(s)) == s);
  CHECK(schedule_from_json(parse_json(to_json(s).dump())) == s);
  CHECK_THROWS_AS(schedule_from_json(parse_json(R"({"T0": 1, "Tend": 0.1})")),
                  FormatError);
  CHECK_THROWS_AS(schedule_from_json(parse_json(R"({"kind": "log"})")), ParameterError);
  CHECK_THROWS_AS(schedule_from_json(parse_json(R"({"n_steps": -3})")), FormatError);
  CHECK_THROWS_AS(schedule_from_json(parse_json(R"({"T0": "hot"})")), FormatError);
  CHECK_THROWS_AS(parse_json("{not json"), FormatError);
}
