#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace polyglot {

inline constexpr double kDefaultAnswerTolerance = 1e-9;

// Trim, lowercase, and collapse internal whitespace runs to one space.
inline std::string normalize_answer(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (unsigned char ch : raw) {
    if (std::isspace(ch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

// Accepts [+-]?(digits[.digits*] | .digits). No exponent form.
inline std::optional<double> parse_decimal(std::string_view text) {
  if (text.empty()) return std::nullopt;
  std::size_t i = 0;
  if (text[i] == '+' || text[i] == '-') ++i;
  std::size_t int_digits = 0;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
    ++i;
    ++int_digits;
  }
  std::size_t frac_digits = 0;
  if (i < text.size() && text[i] == '.') {
    ++i;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
      ++i;
      ++frac_digits;
    }
  }
  if (i != text.size() || int_digits + frac_digits == 0) return std::nullopt;

  std::string_view body = text;
  bool negative = false;
  if (body.front() == '+' || body.front() == '-') {
    negative = body.front() == '-';
    body.remove_prefix(1);
  }
  std::string buffer(body);
  if (buffer.front() == '.') buffer.insert(buffer.begin(), '0');
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(buffer.data(), buffer.data() + buffer.size(), value);
  if (ec != std::errc() || ptr != buffer.data() + buffer.size()) return std::nullopt;
  return negative ? -value : value;
}

// Both arguments are expected to be normalized already.
inline bool answers_match(std::string_view lhs, std::string_view rhs,
                          double tolerance = kDefaultAnswerTolerance) {
  auto lnum = parse_decimal(lhs);
  auto rnum = parse_decimal(rhs);
  if (lnum && rnum) return std::fabs(*lnum - *rnum) <= tolerance;
  return lhs == rhs;
}

// Shortest round-trip decimal representation without exponent ("0.8", "3").
inline std::string format_number(double value) {
  if (value == 0.0) return "0";
  char buffer[512];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value, std::chars_format::fixed);
  if (ec != std::errc()) return std::to_string(value);
  return std::string(buffer, ptr);
}

}  // namespace polyglot
