#include "gapmm/trace.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "gapmm/error.hpp"

namespace gapmm {

const char* to_string(TraceStatus status) {
  switch (status) {
    case TraceStatus::kCompleted: return "completed";
    case TraceStatus::kConverged: return "converged";
    case TraceStatus::kStationarityReached: return "stationarity-reached";
    case TraceStatus::kAborted: return "aborted";
  }
  return "unknown";
}

long RunTrace::total_passes() const {
  long total = 0;
  for (const auto& r : records) total += r.passes;
  return total;
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_trace_csv(const RunTrace& trace, std::ostream& out) {
  out << kTraceCsvHeader << '\n';
  for (const auto& r : trace.records) {
    out << r.t << ',' << format_double(r.upper) << ',' << format_double(r.lower) << ','
        << format_double(r.c_t) << ',' << format_double(r.gap) << ','
        << format_double(r.grad_norm) << ',' << r.passes << ',' << format_double(r.step_norm)
        << '\n';
  }
}

void write_epoch_csv(const RunTrace& trace, std::ostream& out) {
  out << kEpochCsvHeader << '\n';
  for (const auto& e : trace.epochs) {
    out << e.epoch << ',' << e.iterations << ',' << format_double(e.upper) << ','
        << format_double(e.lower) << ',' << e.passes << '\n';
  }
}

std::string trace_csv(const RunTrace& trace) {
  std::ostringstream os;
  write_trace_csv(trace, os);
  return os.str();
}

namespace {
template <typename Writer>
void save_with(const std::string& path, Writer&& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  writer(out);
  out.flush();
  if (!out) fail(ErrorCode::kIo, "failed writing '" + path + "'");
}
}  // namespace

void save_trace_csv(const RunTrace& trace, const std::string& path) {
  save_with(path, [&](std::ostream& os) { write_trace_csv(trace, os); });
}

void save_epoch_csv(const RunTrace& trace, const std::string& path) {
  save_with(path, [&](std::ostream& os) { write_epoch_csv(trace, os); });
}

}  // namespace gapmm
