#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mpq/components.hpp"

namespace mpq {

enum class QuantScheme : std::uint8_t { kAsymmetric, kSymmetric };

/// Affine quantization: real = scale * (q - zero_point).
struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  int bitwidth = 8;
  bool is_signed = true;
  QuantScheme scheme = QuantScheme::kAsymmetric;

  std::int32_t qmin() const {
    return is_signed ? -(std::int32_t{1} << (bitwidth - 1)) : 0;
  }
  std::int32_t qmax() const {
    return is_signed ? (std::int32_t{1} << (bitwidth - 1)) - 1 : (std::int32_t{1} << bitwidth) - 1;
  }
  /// Throws Error(kValidation) when the invariants do not hold.
  void validate() const;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Round half away from zero, the rounding mode used everywhere.
double round_half_away(double v);

/// Asymmetric parameters covering [min(values, 0), max(values, 0)].
/// A degenerate (all-zero) range yields scale 1 and zero_point = qmin.
/// Throws Error(kValidation) for empty input and Error(kNumeric) for NaN/Inf.
QuantParams calibrate_asymmetric(std::span<const double> values, int bitwidth, bool is_signed);
/// Same rule from an explicit observed range.
QuantParams calibrate_range(double lo, double hi, int bitwidth, bool is_signed);

/// Symmetric bias parameters: scale = x.scale * w.scale, zero point 0,
/// bitwidth = x.bitwidth + w.bitwidth + 2 (accumulator guard bits).
QuantParams derive_bias_params(const QuantParams& x, const QuantParams& w);

std::int32_t quantize_value(double v, const QuantParams& p);
double dequantize_value(std::int32_t q, const QuantParams& p);
/// quantize_value followed by dequantize_value.
double fake_quantize_value(double v, const QuantParams& p);

struct QuantizedTensor {
  std::vector<std::int32_t> data;
  std::vector<std::size_t> shape;
  QuantParams params;
};

QuantizedTensor quantize(std::span<const double> values, std::vector<std::size_t> shape,
                         const QuantParams& params);
std::vector<double> dequantize(const QuantizedTensor& t);

/// Fixed-point representation of a positive real ratio:
/// ratio ~= multiplier * 2^-shift with 2^30 <= multiplier < 2^31.
struct Requantizer {
  std::int32_t multiplier = std::int32_t{1} << 30;
  int shift = 30;

  double ratio() const;
  friend bool operator==(const Requantizer&, const Requantizer&) = default;
};

/// Throws Error(kValidation) unless s_in, s_out > 0 and the ratio is within
/// [2^-32, 2^31).
Requantizer make_requantizer(double s_in, double s_out);
Requantizer make_requantizer(double ratio);

/// round(acc * multiplier * 2^-shift), half away from zero, integers only.
std::int64_t apply_multiplier(std::int64_t acc, const Requantizer& r);
/// apply_multiplier + zero point, saturated to the output range.
std::int32_t requantize(std::int64_t acc, const Requantizer& r, std::int32_t out_zero_point,
                        int out_bitwidth, bool out_signed = true);
std::int32_t requantize(std::int64_t acc, const Requantizer& r, const QuantParams& out);

/// Bitwidths of one key component after cascading.
struct ComponentPlan {
  /// Width of the main-path input, inherited from the predecessor.
  int input_bitwidth = 8;
  /// Second operand of a two-input add (skip branch or positional table).
  std::optional<int> second_input_bitwidth;
  std::optional<int> weight_bitwidth;
  int output_bitwidth = 8;
  /// input + weight + 2 where the component has a bias.
  std::optional<int> bias_bitwidth;

  friend bool operator==(const ComponentPlan&, const ComponentPlan&) = default;
};

/// Per-component widths for a combination, following the model dataflow:
/// input -> L_INPUT -> ADD_PE(+PE) -> MHA -> ADD_MHA(+skip from ADD_PE) ->
/// BN_MHA -> FFN -> ADD_FFN(+skip from BN_MHA) -> BN_FFN -> GAP -> L_OUTPUT.
/// The raw model input is quantized at combo[L_INPUT]. Sub-layers inside MHA
/// and FFN after the first projection run at the component's own width.
struct CascadePlan {
  BitwidthCombination combo;
  int model_input_bitwidth = 8;
  std::array<ComponentPlan, kKeyComponentCount> components{};

  const ComponentPlan& operator[](ComponentId c) const { return components[index_of(c)]; }
};

CascadePlan plan_cascade(const BitwidthCombination& combo);

}  // namespace mpq
