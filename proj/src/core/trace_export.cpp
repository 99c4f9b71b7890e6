#include "gapmm/trace_export.hpp"

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <tuple>

#include "gapmm/error.hpp"

namespace gapmm {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  return cells;
}

std::string join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
  return s;
}

}  // namespace

TraceTable read_trace_table(std::istream& in, const std::string& name) {
  TraceTable table;
  std::string line;
  long number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (table.header.empty()) {
      table.header = std::move(cells);
      continue;
    }
    if (cells.size() != table.header.size()) {
      fail(ErrorCode::kSchemaMismatch, name + ":" + std::to_string(number) + ": " +
                                           std::to_string(cells.size()) + " cells, header has " +
                                           std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(cells));
  }
  if (table.header.size() < 2) {
    fail(ErrorCode::kSchemaMismatch, name + ": needs a key column and at least one metric");
  }
  return table;
}

TraceTable load_trace_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  return read_trace_table(in, path);
}

LabeledTrace label_from_path(const std::string& path) {
  LabeledTrace out;
  const std::string stem = std::filesystem::path(path).stem().string();
  const std::size_t cut = stem.rfind("__");
  if (cut == std::string::npos) {
    out.instance = stem;
  } else {
    out.instance = stem.substr(0, cut);
    out.strategy = stem.substr(cut + 2);
  }
  out.table = load_trace_table(path);
  return out;
}

bool TidyRow::operator<(const TidyRow& o) const {
  return std::tie(instance, strategy, t, metric, value) <
         std::tie(o.instance, o.strategy, o.t, o.metric, o.value);
}

bool TidyRow::operator==(const TidyRow& o) const {
  return std::tie(instance, strategy, t, metric, value) ==
         std::tie(o.instance, o.strategy, o.t, o.metric, o.value);
}

std::vector<TidyRow> merge_traces(const std::vector<LabeledTrace>& traces) {
  std::vector<TidyRow> out;
  if (traces.empty()) return out;
  const std::vector<std::string>& header = traces.front().table.header;
  for (const auto& trace : traces) {
    if (trace.table.header != header) {
      fail(ErrorCode::kSchemaMismatch, "columns of '" + trace.instance + "/" + trace.strategy +
                                           "' (" + join(trace.table.header) +
                                           ") differ from (" + join(header) + ")");
    }
    for (const auto& row : trace.table.rows) {
      for (std::size_t c = 1; c < header.size(); ++c) {
        out.push_back({trace.instance, trace.strategy, row[0], header[c], row[c]});
      }
    }
  }
  return out;
}

void write_tidy_csv(const std::vector<TidyRow>& rows, std::ostream& out) {
  out << kTidyCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.instance << ',' << r.strategy << ',' << r.t << ',' << r.metric << ',' << r.value
        << '\n';
  }
}

std::size_t export_traces(const std::vector<std::string>& paths, const std::string& out_path) {
  std::vector<LabeledTrace> traces;
  for (const auto& p : paths) traces.push_back(label_from_path(p));
  const std::vector<TidyRow> rows = merge_traces(traces);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + out_path + "' for writing");
  write_tidy_csv(rows, out);
  out.flush();
  if (!out) fail(ErrorCode::kIo, "failed writing '" + out_path + "'");
  return rows.size();
}

}  // namespace gapmm
