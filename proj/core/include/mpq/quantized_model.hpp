#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "mpq/quantization.hpp"
#include "mpq/transformer.hpp"

namespace mpq {

struct QuantizedLinear {
  QuantizedTensor weight;  // in x out, asymmetric
  QuantizedTensor bias;    // 1 x out, symmetric at input scale * weight scale
  Requantizer out;
};

/// Two-input add; each addend is rescaled onto the output grid.
struct QuantizedAdd {
  Requantizer lhs;
  Requantizer rhs;
};

/// Batch norm folded to y = x * scale + shift per feature.
struct QuantizedBatchNorm {
  QuantizedTensor scale;
  QuantizedTensor shift;
  Requantizer out;
};

struct QuantizedModel {
  ModelConfig config;
  CascadePlan plan;
  std::array<QuantParams, kJunctionCount> junctions{};

  QuantizedLinear l_input;
  QuantizedTensor pe;
  QuantizedAdd add_pe;
  QuantizedLinear wq, wk, wv, wo;
  Requantizer scores;   // s_q * s_k / (sqrt(d_model) * s_scores)
  Requantizer softmax;  // score LSB to Q16 log2 units
  Requantizer context;  // s_p * s_v / s_context
  QuantizedAdd add_mha;
  QuantizedBatchNorm bn_mha;
  QuantizedLinear ffn1, ffn2;
  QuantizedAdd add_ffn;
  QuantizedBatchNorm bn_ffn;
  Requantizer gap;  // s_f / (n * s_gap)
  QuantizedLinear l_output;

  const QuantParams& params(Junction j) const { return junctions[index_of(j)]; }
  QuantParams probability_params() const;
  Calibration calibration() const;

  /// Visits every integer tensor with its file name.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("l_input.weight", self.l_input.weight);
    f("l_input.bias", self.l_input.bias);
    f("pe", self.pe);
    f("mha.wq.weight", self.wq.weight);
    f("mha.wq.bias", self.wq.bias);
    f("mha.wk.weight", self.wk.weight);
    f("mha.wk.bias", self.wk.bias);
    f("mha.wv.weight", self.wv.weight);
    f("mha.wv.bias", self.wv.bias);
    f("mha.wo.weight", self.wo.weight);
    f("mha.wo.bias", self.wo.bias);
    f("bn_mha.scale", self.bn_mha.scale);
    f("bn_mha.shift", self.bn_mha.shift);
    f("ffn.w1.weight", self.ffn1.weight);
    f("ffn.w1.bias", self.ffn1.bias);
    f("ffn.w2.weight", self.ffn2.weight);
    f("ffn.w2.bias", self.ffn2.bias);
    f("bn_ffn.scale", self.bn_ffn.scale);
    f("bn_ffn.shift", self.bn_ffn.shift);
    f("l_output.weight", self.l_output.weight);
    f("l_output.bias", self.l_output.bias);
  }
};

/// Quantizes `model` under `combo` with the given activation ranges.
/// Throws Error(kInternal) if a 32-bit accumulator could overflow.
QuantizedModel quantize_model(const FloatModel& model, const BitwidthCombination& combo,
                              const ActivationRanges& ranges);
/// Collects ranges with an EVAL float forward over `calibration_windows`
/// first. Throws Error(kValidation) if there are none.
QuantizedModel quantize_model(const FloatModel& model, const BitwidthCombination& combo,
                              const std::vector<Matrix>& calibration_windows);

/// Recomputes every requantizer from the stored parameters. Used after
/// loading integer tensors from disk.
void rebuild_requantizers(QuantizedModel& qm);

/// Quantizes stacked windows at the model's input parameters.
QuantizedTensor quantize_input(const QuantizedModel& qm, const Matrix& x);

/// Integer-only forward over stacked windows; returns the dequantized output,
/// one row per window. Windows are split across `threads` workers; results do
/// not depend on the split.
Matrix forward_integer(const QuantizedModel& qm, const QuantizedTensor& x_q,
                       std::size_t threads = 1);

}  // namespace mpq
