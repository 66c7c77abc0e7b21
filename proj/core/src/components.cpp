#include "mpq/components.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <vector>

#include "mpq/error.hpp"

namespace mpq {
namespace {

constexpr std::array<std::string_view, kComponentCount> kComponentNames = {
    "L_INPUT", "ADD_PE",  "MHA", "ADD_MHA", "BN_MHA",          "FFN",          "ADD_FFN",
    "BN_FFN",  "GAP",     "L_OUTPUT", "O_MODEL", "O_ENCODER_LAYER", "O_MIDDLEWARE"};

constexpr std::array<std::string_view, kResourceCount> kResourceNames = {"luts", "dram", "bram",
                                                                         "dsps"};

std::string normalize(std::string_view s, bool upper) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    if (ch == '-') ch = '_';
    out.push_back(static_cast<char>(upper ? std::toupper(static_cast<unsigned char>(ch))
                                          : std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

}  // namespace

std::string_view name_of(ComponentId c) { return kComponentNames[index_of(c)]; }
std::string_view name_of(ResourceKind r) { return kResourceNames[index_of(r)]; }

std::optional<ComponentId> parse_component(std::string_view name) {
  const std::string key = normalize(name, true);
  for (std::size_t i = 0; i < kComponentCount; ++i) {
    if (kComponentNames[i] == key) return component_at(i);
  }
  return std::nullopt;
}

std::optional<ResourceKind> parse_resource(std::string_view name) {
  const std::string key = normalize(name, false);
  for (std::size_t i = 0; i < kResourceCount; ++i) {
    if (kResourceNames[i] == key) return static_cast<ResourceKind>(i);
  }
  return std::nullopt;
}

BitwidthCombination::BitwidthCombination(std::span<const int> bits) {
  if (bits.size() != kKeyComponentCount) {
    fail(ErrorKind::kValidation, "bitwidth combination needs exactly 10 values, got " +
                                     std::to_string(bits.size()));
  }
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!is_supported_bitwidth(bits[i])) {
      fail(ErrorKind::kValidation, "bitwidth " + std::to_string(bits[i]) + " for " +
                                       std::string(name_of(component_at(i))) +
                                       " is not one of 4, 6, 8");
    }
    bits_[i] = static_cast<std::uint8_t>(bits[i]);
  }
}

BitwidthCombination BitwidthCombination::uniform(int bitwidth) {
  std::array<int, kKeyComponentCount> bits{};
  bits.fill(bitwidth);
  return BitwidthCombination(bits);
}

BitwidthCombination BitwidthCombination::parse(std::string_view text) {
  std::vector<int> values;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    std::string_view field = text.substr(pos, comma - pos);
    while (!field.empty() && std::isspace(static_cast<unsigned char>(field.front())))
      field.remove_prefix(1);
    while (!field.empty() && std::isspace(static_cast<unsigned char>(field.back())))
      field.remove_suffix(1);
    int v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
      fail(ErrorKind::kParse, "bad bitwidth '" + std::string(field) + "' in combination '" +
                                  std::string(text) + "'");
    }
    values.push_back(v);
    pos = comma + 1;
  }
  return BitwidthCombination(values);
}

int BitwidthCombination::sum() const {
  int s = 0;
  for (auto b : bits_) s += b;
  return s;
}

int BitwidthCombination::max_bitwidth() const {
  return *std::max_element(bits_.begin(), bits_.end());
}

std::string BitwidthCombination::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(bits_[i]);
  }
  return out;
}

}  // namespace mpq
