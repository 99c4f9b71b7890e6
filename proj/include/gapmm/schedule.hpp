#pragma once

#include <string>

namespace gapmm {

/// value(t) = scale / (offset + t)^exponent for t >= 1. exponent == 0 is a
/// constant schedule.
struct PowerSchedule {
  double scale = 1.0;
  double offset = 0.0;
  double exponent = 0.0;

  double value(int t) const;

  static PowerSchedule constant(double value) { return {value, 0.0, 0.0}; }
};

enum class ScheduleVerdict {
  kAccepted,
  kAcceptedWithWarning,
  kRejected,
};

const char* to_string(ScheduleVerdict verdict);

struct ScheduleCheck {
  ScheduleVerdict verdict = ScheduleVerdict::kAccepted;
  std::string message;
};

/// Step sizes need sum alpha_t = inf and sum alpha_t^2 < inf: accepted for
/// exponents in (0.5, 1]. Constants are accepted with a warning.
ScheduleCheck validate_step_schedule(const PowerSchedule& alpha);

/// Reduction factors need sum rho_t < inf: accepted for exponents > 1.
/// Constants are accepted with a warning.
ScheduleCheck validate_reduction_schedule(const PowerSchedule& rho);

/// Worst verdict of the two checks; messages are joined.
ScheduleCheck validate_schedules(const PowerSchedule& alpha, const PowerSchedule& rho);

}  // namespace gapmm
