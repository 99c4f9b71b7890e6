#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gapmm {

/// A per-iteration CSV as text cells. The first column is the iteration key.
struct TraceTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

TraceTable read_trace_table(std::istream& in, const std::string& name = "<stream>");
TraceTable load_trace_table(const std::string& path);

struct LabeledTrace {
  std::string instance;
  std::string strategy;
  TraceTable table;
};

/// "<instance>__<strategy>.csv" splits at the last "__"; otherwise the stem is
/// the instance and the strategy is empty.
LabeledTrace label_from_path(const std::string& path);

struct TidyRow {
  std::string instance;
  std::string strategy;
  std::string t;
  std::string metric;
  std::string value;

  bool operator<(const TidyRow& o) const;
  bool operator==(const TidyRow& o) const;
};

inline constexpr const char* kTidyCsvHeader = "instance,strategy,t,metric,value";

/// One output row per metric cell of every input. All inputs must share the
/// same header, otherwise kSchemaMismatch. Cell text is copied verbatim.
std::vector<TidyRow> merge_traces(const std::vector<LabeledTrace>& traces);

void write_tidy_csv(const std::vector<TidyRow>& rows, std::ostream& out);

/// Loads, merges and writes; returns the number of data rows written.
std::size_t export_traces(const std::vector<std::string>& paths, const std::string& out_path);

}  // namespace gapmm
