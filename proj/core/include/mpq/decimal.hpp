#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace mpq {

/// Fixed-point decimal with one fractional digit, stored as an integer count
/// of tenths. Utilization percentages are summed and compared in this
/// representation so results do not depend on floating-point accumulation.
class Tenths {
 public:
  constexpr Tenths() = default;
  static constexpr Tenths from_raw(std::int64_t tenths) { return Tenths(tenths); }

  /// Parses "30.8", "-1", "100.0", "12.34" (extra digits round half away
  /// from zero). Throws Error(kParse) on anything else.
  static Tenths parse(std::string_view text);

  constexpr std::int64_t raw() const { return value_; }
  double to_double() const { return static_cast<double>(value_) / 10.0; }

  /// Always one fractional digit: "30.8", "0.0", "-1.5".
  std::string to_string() const;

  constexpr Tenths& operator+=(Tenths o) {
    value_ += o.value_;
    return *this;
  }
  constexpr Tenths& operator-=(Tenths o) {
    value_ -= o.value_;
    return *this;
  }
  friend constexpr Tenths operator+(Tenths a, Tenths b) { return Tenths(a.value_ + b.value_); }
  friend constexpr Tenths operator-(Tenths a, Tenths b) { return Tenths(a.value_ - b.value_); }
  friend constexpr auto operator<=>(Tenths, Tenths) = default;

 private:
  constexpr explicit Tenths(std::int64_t v) : value_(v) {}
  std::int64_t value_ = 0;
};

/// Mean of two tenths values, rounded half away from zero back to tenths.
Tenths midpoint(Tenths a, Tenths b);

}  // namespace mpq
