#pragma once

// Plain CSV for panels and tables. Files written here start with a comment
// line "# schema: <name>/<version>"; readers skip any leading '#' lines.

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mfsv/model.hpp"

namespace mfsv::csv {

inline constexpr int schema_version = 1;

struct Table {
  std::vector<std::string> header;
  Matrix values;
  std::string schema;  // empty when the file carries none
};

namespace detail {

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

inline Table parse(std::istream& in, const std::string& source = "<stream>") {
  Table t;
  std::string line;
  long line_no = 0;
  std::vector<double> cells;
  long rows = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = detail::trim(line);
    if (view.empty()) continue;
    if (view.front() == '#') {
      if (!have_header) {
        const auto pos = view.find("schema:");
        if (pos != std::string_view::npos) t.schema = std::string(detail::trim(view.substr(pos + 7)));
      }
      continue;
    }
    const auto fields = detail::split(view);
    if (!have_header) {
      for (auto f : fields) t.header.emplace_back(detail::trim(f));
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size())
      throw Error(ErrorCode::parse_error, source + ":" + std::to_string(line_no) + ": expected " +
                                              std::to_string(t.header.size()) + " fields, got " +
                                              std::to_string(fields.size()));
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto f = detail::trim(fields[c]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || ptr != f.data() + f.size())
        throw Error(ErrorCode::parse_error, source + ":" + std::to_string(line_no) + ": column " +
                                                std::to_string(c + 1) + " is not a number: '" +
                                                std::string(f) + "'");
      if (!std::isfinite(v))
        throw Error(ErrorCode::parse_error, source + ":" + std::to_string(line_no) + ": column " +
                                                std::to_string(c + 1) + " is not finite");
      cells.push_back(v);
    }
    ++rows;
  }
  if (!have_header) throw Error(ErrorCode::parse_error, source + ": missing header row");
  const auto cols = static_cast<long>(t.header.size());
  t.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      cells.data(), rows, cols);
  return t;
}

inline Table read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
  return parse(in, path);
}

inline std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void write(std::ostream& out, const std::string& schema, const std::vector<std::string>& header,
                  const Matrix& values) {
  if (static_cast<long>(header.size()) != values.cols())
    throw Error(ErrorCode::invalid_dimensions, "header width does not match the table");
  out << "# schema: " << schema << "/" << schema_version << "\n";
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << "\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) out << (c ? "," : "") << format_number(values(r, c));
    out << "\n";
  }
}

/// Table with pre-formatted cells (mixed text and numbers).
inline void write_rows(std::ostream& out, const std::string& schema, const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows) {
  out << "# schema: " << schema << "/" << schema_version << "\n";
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw Error(ErrorCode::invalid_dimensions, "row width does not match the header");
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
    out << "\n";
  }
}

inline void write_file(const std::string& path, const std::string& schema,
                       const std::vector<std::string>& header, const Matrix& values) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path);
  write(out, schema, header, values);
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path);
}

/// Column means and standard deviations used by standardize.
struct Scaling {
  Vector mean;
  Vector sd;
};

/// Per-column demeaning and unit-variance scaling (population variance).
inline Matrix standardize(const Matrix& y, Scaling* scaling = nullptr) {
  const Vector mean = y.colwise().mean();
  Matrix out = y.rowwise() - mean.transpose();
  Vector sd = (out.colwise().squaredNorm() / static_cast<double>(y.rows())).cwiseSqrt();
  for (Eigen::Index c = 0; c < sd.size(); ++c)
    if (!(sd(c) > 0.0)) throw Error(ErrorCode::invalid_argument, "column " + std::to_string(c + 1) + " is constant");
  out = out * sd.cwiseInverse().asDiagonal();
  if (scaling) *scaling = {mean, sd};
  return out;
}

struct IngestWarning {
  std::string message;
};

/// Reads a return panel; warns when T < 100.
inline ReturnPanel ingest(const std::string& path, bool standardize_columns,
                          std::vector<IngestWarning>* warnings = nullptr, Scaling* scaling = nullptr) {
  auto t = read(path);
  if (t.values.rows() < 100 && warnings)
    warnings->push_back({path + ": only " + std::to_string(t.values.rows()) + " rows (T < 100)"});
  Matrix y = standardize_columns ? standardize(t.values, scaling) : t.values;
  return ReturnPanel(std::move(y), std::move(t.header));
}

}  // namespace mfsv::csv
