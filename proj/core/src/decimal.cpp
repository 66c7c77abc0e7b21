#include "mpq/decimal.hpp"

#include <cctype>

#include "mpq/error.hpp"

namespace mpq {

Tenths Tenths::parse(std::string_view text) {
  auto bad = [&]() -> Tenths {
    fail(ErrorKind::kParse, "not a decimal number: '" + std::string(text) + "'");
  };
  std::size_t i = 0;
  while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  std::size_t end = text.size();
  while (end > i && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  if (i == end) return bad();

  bool negative = false;
  if (text[i] == '+' || text[i] == '-') {
    negative = text[i] == '-';
    ++i;
  }
  std::int64_t whole = 0;
  bool any_digit = false;
  while (i < end && std::isdigit(static_cast<unsigned char>(text[i]))) {
    whole = whole * 10 + (text[i] - '0');
    if (whole > 1'000'000'000'000LL) return bad();
    any_digit = true;
    ++i;
  }
  std::int64_t tenths = whole * 10;
  if (i < end && text[i] == '.') {
    ++i;
    int frac_digits = 0;
    bool round_up = false;
    while (i < end && std::isdigit(static_cast<unsigned char>(text[i]))) {
      const int d = text[i] - '0';
      if (frac_digits == 0) tenths += d;
      if (frac_digits == 1) round_up = d >= 5;  // half away from zero on magnitude
      ++frac_digits;
      any_digit = true;
      ++i;
    }
    if (round_up) ++tenths;
  }
  if (!any_digit || i != end) return bad();
  return Tenths(negative ? -tenths : tenths);
}

std::string Tenths::to_string() const {
  const std::int64_t mag = value_ < 0 ? -value_ : value_;
  std::string out = value_ < 0 ? "-" : "";
  out += std::to_string(mag / 10);
  out += '.';
  out += static_cast<char>('0' + mag % 10);
  return out;
}

Tenths midpoint(Tenths a, Tenths b) {
  const std::int64_t sum = a.raw() + b.raw();
  const std::int64_t mag = (sum < 0 ? -sum : sum);
  const std::int64_t half = (mag + 1) / 2;
  return Tenths::from_raw(sum < 0 ? -half : half);
}

}  // namespace mpq
