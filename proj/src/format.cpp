#include "spbuf/format.hpp"

#include <string>

#include "spbuf/errors.hpp"

namespace spbuf {

std::vector<std::string_view> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

double parse_double(std::string_view field, std::string_view what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ConfigError("cannot parse " + std::string(what) + " from '" + std::string(field) + "'");
  }
  return v;
}

std::uint64_t parse_uint(std::string_view field, std::string_view what) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ConfigError("cannot parse " + std::string(what) + " from '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace spbuf
