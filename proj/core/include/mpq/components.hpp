#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "mpq/decimal.hpp"

namespace mpq {

/// FPGA resource classes, in serialization order.
enum class ResourceKind : std::uint8_t { kLuts, kDram, kBram, kDsps };
inline constexpr std::size_t kResourceCount = 4;
inline constexpr std::array<ResourceKind, kResourceCount> kAllResources = {
    ResourceKind::kLuts, ResourceKind::kDram, ResourceKind::kBram, ResourceKind::kDsps};

/// Profiled model components. The first ten are the key components in
/// pipeline order; the last three are interconnect/buffering overheads that
/// never receive a user bitwidth.
enum class ComponentId : std::uint8_t {
  kLInput,
  kAddPe,
  kMha,
  kAddMha,
  kBnMha,
  kFfn,
  kAddFfn,
  kBnFfn,
  kGap,
  kLOutput,
  kOModel,
  kOEncoderLayer,
  kOMiddleware,
};
inline constexpr std::size_t kKeyComponentCount = 10;
inline constexpr std::size_t kComponentCount = 13;

constexpr std::size_t index_of(ComponentId c) { return static_cast<std::size_t>(c); }
constexpr std::size_t index_of(ResourceKind r) { return static_cast<std::size_t>(r); }
constexpr ComponentId component_at(std::size_t i) { return static_cast<ComponentId>(i); }
constexpr bool is_overhead(ComponentId c) { return index_of(c) >= kKeyComponentCount; }

/// Canonical upper-case names ("L_INPUT", "O_MIDDLEWARE").
std::string_view name_of(ComponentId c);
/// Lower-case names used in files ("luts", "dram", "bram", "dsps").
std::string_view name_of(ResourceKind r);
/// Case-insensitive; also accepts '-' for '_'.
std::optional<ComponentId> parse_component(std::string_view name);
std::optional<ResourceKind> parse_resource(std::string_view name);

/// The bitwidths a component may be quantized to.
inline constexpr std::array<int, 3> kBitwidths = {4, 6, 8};
constexpr bool is_supported_bitwidth(int b) { return b == 4 || b == 6 || b == 8; }
/// 0, 1, 2 for 4, 6, 8 bits.
constexpr std::size_t bitwidth_slot(int b) { return static_cast<std::size_t>((b - 4) / 2); }

/// Utilization percentages for the four resource kinds. Values may exceed
/// 100, which signals an infeasible design.
struct ResourceVector {
  std::array<Tenths, kResourceCount> values{};

  Tenths& operator[](ResourceKind r) { return values[index_of(r)]; }
  Tenths operator[](ResourceKind r) const { return values[index_of(r)]; }
  Tenths luts() const { return values[0]; }
  Tenths dram() const { return values[1]; }
  Tenths bram() const { return values[2]; }
  Tenths dsps() const { return values[3]; }

  ResourceVector& operator+=(const ResourceVector& o) {
    for (std::size_t i = 0; i < kResourceCount; ++i) values[i] += o.values[i];
    return *this;
  }
  friend ResourceVector operator+(ResourceVector a, const ResourceVector& b) { return a += b; }
  friend ResourceVector operator-(ResourceVector a, const ResourceVector& b) {
    for (std::size_t i = 0; i < kResourceCount; ++i) a.values[i] -= b.values[i];
    return a;
  }
  friend bool operator==(const ResourceVector&, const ResourceVector&) = default;
};

/// One bitwidth in {4,6,8} per key component, in pipeline order.
class BitwidthCombination {
 public:
  BitwidthCombination() { bits_.fill(8); }
  /// Throws Error(kValidation) unless exactly ten values, each in {4,6,8}.
  explicit BitwidthCombination(std::span<const int> bits);
  static BitwidthCombination uniform(int bitwidth);
  /// "6,8,6,8,6,6,8,8,8,8" (whitespace tolerated).
  static BitwidthCombination parse(std::string_view text);

  int operator[](ComponentId c) const { return bits_[index_of(c)]; }
  int operator[](std::size_t i) const { return bits_[i]; }
  const std::array<std::uint8_t, kKeyComponentCount>& bits() const { return bits_; }

  /// Sum of the ten bitwidths, the search score.
  int sum() const;
  int max_bitwidth() const;
  std::string to_string() const;

  friend auto operator<=>(const BitwidthCombination&, const BitwidthCombination&) = default;
  friend bool operator==(const BitwidthCombination&, const BitwidthCombination&) = default;

 private:
  std::array<std::uint8_t, kKeyComponentCount> bits_{};
};

}  // namespace mpq
