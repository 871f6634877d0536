#include "tcq/schedule.hpp"

#include "tcq/common.hpp"

#include <cmath>

namespace tcq {

std::string to_string(ScheduleKind k) {
  switch (k) {
  case ScheduleKind::ExponentialNaive:
    return "exponential_naive";
  case ScheduleKind::ExponentialSkipHighT:
    return "exponential_skip_high_t";
  case ScheduleKind::Constant:
    return "constant";
  }
  throw ParameterError("unknown schedule kind");
}

ScheduleKind schedule_kind_from_string(const std::string &s) {
  if (s == "exponential_naive")
    return ScheduleKind::ExponentialNaive;
  if (s == "exponential_skip_high_t")
    return ScheduleKind::ExponentialSkipHighT;
  if (s == "constant")
    return ScheduleKind::Constant;
  throw ParameterError("unknown schedule kind: " + s);
}

void validate(const AnnealSchedule &s) {
  if (!(std::isfinite(s.T0) && s.T0 > 0.0))
    throw ParameterError("schedule: T0 must be positive");
  if (!(std::isfinite(s.T_end) && s.T_end > 0.0))
    throw ParameterError("schedule: T_end must be positive");
  if (s.T_end > s.T0)
    throw ParameterError("schedule: T_end must not exceed T0");
  if (s.n_steps < 1)
    throw ParameterError("schedule: n_steps must be >= 1");
  if (s.kind == ScheduleKind::ExponentialSkipHighT &&
      s.T0 > kSkipHighTMaxT0 + 1e-12)
    throw ParameterError("schedule: skip-high-T requires T0 <= 0.3");
}

double temperature_at(const AnnealSchedule &s, std::size_t t) {
  validate(s);
  if (t > s.n_steps)
    throw ParameterError("schedule: step index out of range");
  if (s.kind == ScheduleKind::Constant || t == 0)
    return s.T0;
  if (t == s.n_steps)
    return s.T_end;
  const double frac = static_cast<double>(t) / static_cast<double>(s.n_steps);
  return s.T0 * std::pow(s.T_end / s.T0, frac);
}

std::vector<double> temperature_grid(const AnnealSchedule &s) {
  std::vector<double> out(s.n_steps + 1);
  for (std::size_t t = 0; t <= s.n_steps; ++t)
    out[t] = temperature_at(s, t);
  return out;
}

AnnealSchedule naive_schedule(double T_end, std::size_t n_steps) {
  return {1.0, T_end, n_steps, ScheduleKind::ExponentialNaive};
}

AnnealSchedule skip_high_t_schedule(double T_end, std::size_t n_steps) {
  return {kSkipHighTMaxT0, T_end, n_steps, ScheduleKind::ExponentialSkipHighT};
}

} // namespace tcq
