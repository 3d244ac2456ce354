#pragma once

// Flat `key = value` configuration text shared by scene and pipeline configs.
// '#' starts a comment; blank lines are ignored; keys are unique.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sbss::config {

using Entries = std::map<std::string, std::string>;

// ParseError (with the 1-based line) on a line without '=', an empty key or
// a repeated key.
Entries parse(const std::string& text);
Entries load(const std::filesystem::path& path);

double to_double(const std::string& key, const std::string& value);
long to_integer(const std::string& key, const std::string& value);
bool to_bool(const std::string& key, const std::string& value);
// Comma-separated fields, trimmed; empty text gives an empty list.
std::vector<std::string> to_list(const std::string& value, char sep = ',');
std::vector<double> to_doubles(const std::string& key, const std::string& value);

}  // namespace sbss::config
