#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace spbuf {

/// Shortest round-trip decimal form (locale independent, so CSVs are byte-stable).
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_number(std::uint64_t v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Splits one CSV line on commas (no quoting; all our files are numeric).
std::vector<std::string_view> split_csv_line(std::string_view line);

/// Strict numeric parse of a whole field; throws ConfigError naming `what`.
double parse_double(std::string_view field, std::string_view what);
std::uint64_t parse_uint(std::string_view field, std::string_view what);

}  // namespace spbuf
