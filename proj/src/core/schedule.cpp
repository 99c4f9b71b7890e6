#include "gapmm/schedule.hpp"

#include <cmath>

#include "gapmm/error.hpp"

namespace gapmm {

double PowerSchedule::value(int t) const {
  if (exponent == 0.0) return scale;
  return scale / std::pow(offset + t, exponent);
}

const char* to_string(ScheduleVerdict verdict) {
  switch (verdict) {
    case ScheduleVerdict::kAccepted: return "accepted";
    case ScheduleVerdict::kAcceptedWithWarning: return "accepted-with-warning";
    case ScheduleVerdict::kRejected: return "rejected";
  }
  return "unknown";
}

namespace {

ScheduleCheck basic_checks(const PowerSchedule& s, const char* name) {
  if (!(s.scale > 0.0) || !std::isfinite(s.scale)) {
    return {ScheduleVerdict::kRejected, std::string(name) + ": scale must be positive"};
  }
  if (s.exponent != 0.0 && !(s.offset > -1.0)) {
    return {ScheduleVerdict::kRejected, std::string(name) + ": offset + t must stay positive"};
  }
  if (s.exponent < 0.0) {
    return {ScheduleVerdict::kRejected, std::string(name) + ": schedule grows without bound"};
  }
  return {};
}

}  // namespace

ScheduleCheck validate_step_schedule(const PowerSchedule& alpha) {
  if (auto c = basic_checks(alpha, "alpha"); c.verdict == ScheduleVerdict::kRejected) return c;
  const double p = alpha.exponent;
  if (p == 0.0) {
    return {ScheduleVerdict::kAcceptedWithWarning,
            "alpha: constant step size, sum alpha_t^2 diverges"};
  }
  if (p <= 0.5) {
    return {ScheduleVerdict::kRejected, "alpha: sum alpha_t^2 diverges for exponent <= 1/2"};
  }
  if (p > 1.0) {
    return {ScheduleVerdict::kRejected, "alpha: sum alpha_t converges for exponent > 1"};
  }
  return {};
}

ScheduleCheck validate_reduction_schedule(const PowerSchedule& rho) {
  if (auto c = basic_checks(rho, "rho"); c.verdict == ScheduleVerdict::kRejected) return c;
  const double q = rho.exponent;
  if (q == 0.0) {
    return {ScheduleVerdict::kAcceptedWithWarning, "rho: constant reduction, sum rho_t diverges"};
  }
  if (q <= 1.0) {
    return {ScheduleVerdict::kRejected, "rho: sum rho_t diverges for exponent <= 1"};
  }
  return {};
}

ScheduleCheck validate_schedules(const PowerSchedule& alpha, const PowerSchedule& rho) {
  const ScheduleCheck a = validate_step_schedule(alpha);
  const ScheduleCheck r = validate_reduction_schedule(rho);
  ScheduleCheck out;
  out.verdict = static_cast<int>(a.verdict) >= static_cast<int>(r.verdict) ? a.verdict : r.verdict;
  out.message = a.message;
  if (!r.message.empty()) out.message += (out.message.empty() ? "" : "; ") + r.message;
  return out;
}

}  // namespace gapmm
