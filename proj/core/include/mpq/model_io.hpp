#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mpq/dataset.hpp"
#include "mpq/quantized_model.hpp"
#include "mpq/transformer.hpp"

namespace mpq {

inline constexpr int kModelFileVersion = 1;

/// Normalization the model was trained with.
struct Preprocessing {
  std::vector<std::string> columns;
  std::size_t target_index = 0;
  MinMaxScaler scaler;
};

struct ModelFile {
  std::variant<FloatModel, QuantizedModel> model;
  std::optional<Preprocessing> preprocessing;
  /// Combination a float model was trained for under QAT.
  std::optional<BitwidthCombination> qat_combo;

  bool quantized() const { return std::holds_alternative<QuantizedModel>(model); }
  const ModelConfig& config() const;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws Error(kParse) on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// JSON envelope: version, config, kind, combo, tensors (shape, dtype,
/// base64 little-endian data, quant), plus junction parameters, QAT ranges
/// and preprocessing when present.
std::string serialize_model(const ModelFile& file);
/// Throws Error(kParse) for bad JSON, Error(kVersion) for an unknown version
/// and Error(kSchema) naming the offending field.
ModelFile parse_model(std::string_view json_text);

void save_model(const std::string& path, const ModelFile& file);
ModelFile load_model(const std::string& path);

}  // namespace mpq
