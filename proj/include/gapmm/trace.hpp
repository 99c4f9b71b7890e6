#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "gapmm/types.hpp"

namespace gapmm {

inline constexpr double kNotRecorded = std::numeric_limits<double>::quiet_NaN();

enum class TraceStatus {
  kCompleted,
  kConverged,
  kStationarityReached,
  kAborted,
};

const char* to_string(TraceStatus status);

enum TraceFlag : std::uint32_t {
  kFlagNone = 0,
  kFlagSkippedStep = 1u << 0,
  kFlagCriterionUnreachable = 1u << 1,
  kFlagStationarity = 1u << 2,
  kFlagDescentViolation = 1u << 3,
};

/// One accepted outer iteration t. Latents are indexed as in the drivers:
/// upper = Jbar(theta^(t-1), u^(t)), lower = Jlow(theta^(t-1), l^(t)) (or the
/// exact J), c_t = Jbar(theta^(t-2), u^(t-1)) - lower.
struct TraceRecord {
  int t = 0;
  double upper = kNotRecorded;
  double lower = kNotRecorded;
  double c_t = kNotRecorded;
  double gap = kNotRecorded;
  double grad_norm = kNotRecorded;
  long passes = 0;  // inference passes spent in this iteration, all attempts
  double step_norm = kNotRecorded;

  int accepted_passes = 0;
  std::vector<int> tried_passes;
  double objective_after = kNotRecorded;  // exact J(theta^(t)) when available
  std::uint32_t flags = kFlagNone;
};

/// Full-dataset evaluation taken at the end of an epoch.
struct EpochRecord {
  int epoch = 0;
  int iterations = 0;
  double upper = kNotRecorded;
  double lower = kNotRecorded;
  long passes = 0;
};

struct RunTrace {
  std::string driver;
  double initial_upper = kNotRecorded;  // Jbar(theta^(-1), u^(0))
  double lipschitz = kNotRecorded;
  double eta = kNotRecorded;
  double rho = kNotRecorded;
  std::vector<TraceRecord> records;
  std::vector<EpochRecord> epochs;
  ParamVector theta;
  TraceStatus status = TraceStatus::kCompleted;
  std::string diagnostic;
  long peak_live_term_latents = 0;
  int descent_violations = 0;

  long total_passes() const;
};

/// Column header of the per-iteration CSV.
inline constexpr const char* kTraceCsvHeader = "t,upper,lower,c_t,gap,grad_norm,passes,step_norm";
inline constexpr const char* kEpochCsvHeader = "epoch,iterations,upper,lower,passes";

/// Shortest round-trip decimal, independent of the global locale.
std::string format_double(double value);

void write_trace_csv(const RunTrace& trace, std::ostream& out);
void write_epoch_csv(const RunTrace& trace, std::ostream& out);
std::string trace_csv(const RunTrace& trace);

void save_trace_csv(const RunTrace& trace, const std::string& path);
void save_epoch_csv(const RunTrace& trace, const std::string& path);

}  // namespace gapmm
