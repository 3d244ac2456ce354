#pragma once

// Minimal CSV reader/writer shared by the file formats in this library.
// Fields are plain: no quoting, no embedded commas or newlines.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace sbss::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Throws IoError when the file cannot be opened, ParseError on ragged rows.
Table read(const std::filesystem::path& path);

// Writes atomically enough for our purposes: opens, writes, checks the stream.
void write_text(const std::filesystem::path& path, const std::string& text);

// Parses a field as double; ParseError carries 1-based row/column.
double parse_double(const std::string& field, std::size_t row, std::size_t column);

std::vector<std::string> split(const std::string& line, char sep);
std::string trim(const std::string& s);

// Rejects labels that would break the schema.
void check_label(const std::string& label);

}  // namespace sbss::csv
