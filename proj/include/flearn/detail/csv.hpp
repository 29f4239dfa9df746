#pragma once

// Small CSV/number helpers shared by the report writers. Doubles are printed
// with std::to_chars (shortest form that round-trips exactly), which keeps
// emitted tables byte-reproducible and losslessly re-parseable.

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "flearn/errors.hpp"

namespace flearn::detail {

inline std::string format_double(double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view text, const char* what, int line_no) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " value \"" +
                     std::string(text) + "\"");
  }
  return value;
}

inline long parse_long(std::string_view text, const char* what, int line_no) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " value \"" +
                     std::string(text) + "\"");
  }
  return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

}  // namespace flearn::detail
