#pragma once

// Flat "key=value" text: one pair per line, '#' starts a comment, blank lines ignored.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace pffnet {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string& text, const std::string& source = "<text>");
KeyValues read_key_value_file(const std::string& path);
std::string format_key_values(const KeyValues& kv);

// Last value for key, or nullptr.
const std::string* find_value(const KeyValues& kv, const std::string& key);

// Strict parsers; ConfigError names `what` on failure.
std::size_t parse_size(const std::string& text, const std::string& what);
double parse_double(const std::string& text, const std::string& what);
bool parse_bool(const std::string& text, const std::string& what);
std::uint64_t parse_u64(const std::string& text, const std::string& what);

std::vector<std::string> split(const std::string& text, char sep);
std::string trim(const std::string& text);

// Round-trippable decimal form of a double.
std::string format_double(double v);

}  // namespace pffnet
