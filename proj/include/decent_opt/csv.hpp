#pragma once

#include <Eigen/Dense>

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "decent_opt/errors.hpp"

namespace decent_opt::csv {

// 17 significant digits round-trips every double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Shortest string that parses back to v.
inline std::string format_short(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos
                                           ? std::string_view::npos
                                           : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(const std::string& token) {
  if (token.empty()) throw InvalidInput("empty numeric field");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end != token.c_str() + token.size() || errno == ERANGE)
    throw InvalidInput("not a number: '" + token + "'");
  return v;
}

inline void write_row(std::ostream& os, const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    if (j) os << ',';
    os << format_double(row(j));
  }
  os << '\n';
}

inline void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) write_row(os, m.row(i));
}

inline std::string matrix_to_string(const Eigen::MatrixXd& m) {
  std::ostringstream os;
  write_matrix(os, m);
  return os.str();
}

// Parses rows of comma-separated decimals; blank lines are skipped.
inline Eigen::MatrixXd parse_matrix(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> row;
    for (const auto& tok : split(line, ',')) row.push_back(parse_double(tok));
    if (!rows.empty() && row.size() != rows.front().size())
      throw InvalidInput("ragged CSV matrix");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline Eigen::MatrixXd read_matrix_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  return parse_matrix(in);
}

// Writes through a temporary sibling and renames, so readers never observe
// a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write " + tmp.string());
    out << content;
    if (!out) throw InvalidInput("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace decent_opt::csv
