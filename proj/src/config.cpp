#include "sbss/config.hpp"

#include "csv_io.hpp"
#include "sbss/errors.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace sbss::config {

Entries parse(const std::string& text) {
  Entries out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = csv::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", lineno);
    std::string key = csv::trim(line.substr(0, eq));
    std::string value = csv::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", lineno);
    if (!out.emplace(key, value).second) throw ParseError("duplicate key '" + key + "'", lineno);
  }
  return out;
}

Entries load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

double to_double(const std::string& key, const std::string& value) {
  try {
    return csv::parse_double(value, 0, 0);
  } catch (const ParseError&) {
    throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
  }
}

long to_integer(const std::string& key, const std::string& value) {
  long v = 0;
  const char* first = value.data();
  const char* last = first + value.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) {
    throw ConfigError("'" + key + "' expects an integer, got '" + value + "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + value + "'");
}

std::vector<std::string> to_list(const std::string& value, char sep) {
  std::vector<std::string> out;
  if (csv::trim(value).empty()) return out;
  for (auto& f : csv::split(value, sep)) out.push_back(csv::trim(f));
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& f : to_list(value)) out.push_back(to_double(key, f));
  return out;
}

}  // namespace sbss::config
