#include "csv_io.hpp"

#include "sbss/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sbss::csv {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  Table table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split(line, ',');
    for (auto& f : fields) f = trim(f);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw ParseError("expected " + std::to_string(table.header.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw ParseError("empty file " + path.string());
  return table;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.empty() || std::filesystem::is_directory(path)) {
    throw IoError("not a writable file path: '" + path.string() + "'");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

double parse_double(const std::string& field, std::size_t row, std::size_t column) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError("non-numeric cell '" + field + "'", row, column);
  }
  if (!std::isfinite(value)) throw ParseError("non-finite cell '" + field + "'", row, column);
  return value;
}

void check_label(const std::string& label) {
  if (label.find_first_of(",\n\r") != std::string::npos) {
    throw IoError("label '" + label + "' contains a separator");
  }
}

}  // namespace sbss::csv
