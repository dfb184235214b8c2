#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace isp {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses `key = value` lines. Blank lines and `#` comments (full-line or
/// trailing) are skipped. Duplicate keys and lines without `=` are errors.
KeyValues parse_key_values(std::string_view text);

/// One `key = value` line per entry, LF terminated, in the given order.
std::string format_key_values(const KeyValues& entries);

/// Shortest round-trip decimal for a double (17 significant digits).
std::string format_double(double value);

double parse_double(const std::string& key, const std::string& value);
long long parse_int(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

}  // namespace isp
