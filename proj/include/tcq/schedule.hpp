#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace tcq {

enum class ScheduleKind { ExponentialNaive, ExponentialSkipHighT, Constant };

std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string &s);

// Largest T0 accepted for ExponentialSkipHighT.
inline constexpr double kSkipHighTMaxT0 = 0.3;

struct AnnealSchedule {
  double T0 = 1.0;
  double T_end = 0.02;
  std::size_t n_steps = 10;
  ScheduleKind kind = ScheduleKind::ExponentialNaive;

  bool operator==(const AnnealSchedule &) const = default;
};

// Throws ParameterError unless 0 < T_end <= T0, n_steps >= 1, and a
// skip-high-T schedule starts at T0 <= 0.3.
void validate(const AnnealSchedule &s);

// T0 * (T_end / T0)^(t / n_steps) for t in [0, n_steps]; t == 0 and
// t == n_steps return T0 and T_end exactly. Constant schedules return T0.
double temperature_at(const AnnealSchedule &s, std::size_t t);

// Temperatures for t = 0..n_steps.
std::vector<double> temperature_grid(const AnnealSchedule &s);

AnnealSchedule naive_schedule(double T_end, std::size_t n_steps);
AnnealSchedule skip_high_t_schedule(double T_end, std::size_t n_steps);

} // namespace tcq
