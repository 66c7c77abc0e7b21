#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "mpq/components.hpp"
#include "mpq/matrix.hpp"
#include "mpq/quantization.hpp"

namespace mpq {

/// Shape of the single-encoder-layer forecaster. One attention head; the
/// FFN expands to 4 * d_model.
struct ModelConfig {
  std::size_t seq_len = 12;
  std::size_t input_dim = 1;
  std::size_t d_model = 64;
  std::size_t output_dim = 1;

  std::size_t ffn_dim() const { return 4 * d_model; }
  static constexpr std::size_t heads() { return 1; }
  /// Throws Error(kValidation) for zero dimensions.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LinearParams {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

struct BatchNormParams {
  Matrix gamma;         // 1 x d
  Matrix beta;          // 1 x d
  Matrix running_mean;  // 1 x d
  Matrix running_var;   // 1 x d
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Quantization points of the forward pass, in dataflow order. Each carries
/// its own activation parameters in a calibrated model.
enum class Junction : std::uint8_t {
  kInput,      // raw model input
  kLInput,     // input projection output
  kAddPe,      // embedding + positional table
  kQuery,
  kKey,
  kValue,
  kScores,     // Q K^T / sqrt(d_model)
  kContext,    // softmax(scores) V
  kMhaOut,     // output projection of attention
  kAddMha,
  kBnMha,
  kFfnHidden,  // ReLU output, unsigned
  kFfnOut,
  kAddFfn,
  kBnFfn,
  kGap,
  kLOutput,
};
inline constexpr std::size_t kJunctionCount = 17;

std::string_view name_of(Junction j);
std::optional<Junction> parse_junction(std::string_view name);
constexpr Junction junction_at(std::size_t i) { return static_cast<Junction>(i); }
constexpr std::size_t index_of(Junction j) { return static_cast<std::size_t>(j); }
/// Component whose bitwidth governs the junction.
ComponentId owner_of(Junction j);
/// Unsigned range after ReLU; signed everywhere else.
bool junction_is_signed(Junction j);
int junction_bitwidth(const CascadePlan& plan, Junction j);

/// Observed activation range per junction (min, max).
using ActivationRanges = std::array<std::optional<std::pair<double, double>>, kJunctionCount>;
/// Activation quantization parameters per junction.
using Calibration = std::array<std::optional<QuantParams>, kJunctionCount>;

/// Builds per-junction parameters from ranges at the widths `plan` assigns.
/// Throws Error(kValidation) naming the first junction without a range.
Calibration calibration_from_ranges(const ActivationRanges& ranges, const CascadePlan& plan);

/// Parameters of the attention probabilities: unsigned, zero point 0,
/// scale 1 / (2^b - 1).
QuantParams probability_params(int bitwidth);

struct FloatModel {
  ModelConfig config;
  LinearParams l_input;
  Matrix pe;  // seq_len x d_model, fixed sinusoidal table
  LinearParams wq, wk, wv, wo;
  BatchNormParams bn_mha;
  LinearParams ffn1, ffn2;
  BatchNormParams bn_ffn;
  LinearParams l_output;
  /// Frozen EMA activation ranges from quantization-aware training.
  std::optional<ActivationRanges> qat_ranges;

  enum class Role { kTrainable, kBuffer, kConstant };

  /// Visits every tensor with its file name ("mha.wq.weight") and role.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("l_input.weight", self.l_input.weight, Role::kTrainable);
    f("l_input.bias", self.l_input.bias, Role::kTrainable);
    f("pe", self.pe, Role::kConstant);
    f("mha.wq.weight", self.wq.weight, Role::kTrainable);
    f("mha.wq.bias", self.wq.bias, Role::kTrainable);
    f("mha.wk.weight", self.wk.weight, Role::kTrainable);
    f("mha.wk.bias", self.wk.bias, Role::kTrainable);
    f("mha.wv.weight", self.wv.weight, Role::kTrainable);
    f("mha.wv.bias", self.wv.bias, Role::kTrainable);
    f("mha.wo.weight", self.wo.weight, Role::kTrainable);
    f("mha.wo.bias", self.wo.bias, Role::kTrainable);
    f("bn_mha.gamma", self.bn_mha.gamma, Role::kTrainable);
    f("bn_mha.beta", self.bn_mha.beta, Role::kTrainable);
    f("bn_mha.running_mean", self.bn_mha.running_mean, Role::kBuffer);
    f("bn_mha.running_var", self.bn_mha.running_var, Role::kBuffer);
    f("ffn.w1.weight", self.ffn1.weight, Role::kTrainable);
    f("ffn.w1.bias", self.ffn1.bias, Role::kTrainable);
    f("ffn.w2.weight", self.ffn2.weight, Role::kTrainable);
    f("ffn.w2.bias", self.ffn2.bias, Role::kTrainable);
    f("bn_ffn.gamma", self.bn_ffn.gamma, Role::kTrainable);
    f("bn_ffn.beta", self.bn_ffn.beta, Role::kTrainable);
    f("bn_ffn.running_mean", self.bn_ffn.running_mean, Role::kBuffer);
    f("bn_ffn.running_var", self.bn_ffn.running_var, Role::kBuffer);
    f("l_output.weight", self.l_output.weight, Role::kTrainable);
    f("l_output.bias", self.l_output.bias, Role::kTrainable);
  }
  template <class F>
  void for_each_tensor(F&& f) { visit(*this, f); }
  template <class F>
  void for_each_tensor(F&& f) const { visit(*this, f); }

  /// All-zero tensors with the shapes `config` implies (BN variance 1).
  static FloatModel zeros(const ModelConfig& config);
};

/// Standard sinusoidal table: sin at even columns, cos at odd columns.
Matrix positional_encoding(std::size_t seq_len, std::size_t d_model);

/// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights, zero biases, identity
/// batch norm, sinusoidal positions. Deterministic in `seed`.
FloatModel init_model(const ModelConfig& config, std::uint64_t seed);

enum class ForwardMode { kTrain, kEval };

/// Per-feature affine map equivalent to batch norm in EVAL mode:
/// y = x * scale + shift.
struct FoldedBatchNorm {
  Matrix scale;  // 1 x d
  Matrix shift;  // 1 x d
};
FoldedBatchNorm fold_batch_norm(const BatchNormParams& bn);

struct BatchNormCache {
  Matrix xhat;
  Matrix inv_std;     // 1 x d
  Matrix batch_mean;  // 1 x d, TRAIN only
  Matrix batch_var;   // 1 x d, biased, TRAIN only
};

/// Everything backward() needs. Row blocks of `seq_len` rows belong to one
/// window. Weights are the ones actually used (fake-quantized under QAT).
/// Masks hold 1 where a straight-through gradient passes; an empty mask
/// passes everything.
struct ForwardCache {
  ForwardMode mode = ForwardMode::kEval;
  std::size_t batch = 0;
  Matrix x, l_in, embed, q, k, v;
  Matrix probs;       // float softmax, (B*n) x n
  Matrix probs_used;  // what multiplied V
  Matrix context, mha_out, a_pre, a, h, ffn_out, f_pre, f, g, y;
  BatchNormCache bn_mha, bn_ffn;
  LinearParams l_input_w, wq_w, wk_w, wv_w, wo_w, ffn1_w, ffn2_w, l_output_w;
  std::array<std::vector<std::uint8_t>, kJunctionCount> masks;
  /// Masks over fake-quantized weights and biases, keyed by tensor order
  /// l_input, wq, wk, wv, wo, ffn1, ffn2, l_output (weight, bias each).
  std::array<std::vector<std::uint8_t>, 16> param_masks;
};

struct ForwardResult {
  Matrix y;  // batch x output_dim
  ForwardCache cache;
};

/// Stacks windows (each seq_len x input_dim) into one (B*seq_len) x input_dim
/// matrix.
Matrix stack_windows(const std::vector<Matrix>& windows);

/// Float forward over a batch given as stacked windows. TRAIN uses batch
/// statistics in batch norm; EVAL uses running statistics. The model is not
/// modified; running-statistic updates are the trainer's job.
ForwardResult forward_float(const FloatModel& model, const Matrix& x, ForwardMode mode);

/// Called at every junction with the raw (pre-quantization) activation.
/// Returning parameters fake-quantizes that junction.
using JunctionHook = std::function<std::optional<QuantParams>(Junction, const Matrix&)>;

struct FakeQuantOptions {
  /// Widths of weights, biases and fixed tensors. Null disables all weight
  /// quantization.
  const CascadePlan* plan = nullptr;
  JunctionHook hook;
  /// Fold batch norm into a quantized per-feature affine (EVAL only).
  bool fold_batch_norm = true;
};

/// Shared forward used by the float, fake-quant and QAT paths.
ForwardResult forward_with(const FloatModel& model, const Matrix& x, ForwardMode mode,
                           const FakeQuantOptions& opts);

/// EVAL-mode forward with quantize/dequantize inserted at every junction
/// `plan` quantizes, mirroring the integer pipeline. Throws Error(kValidation)
/// naming the first junction missing from `calibration`.
ForwardResult forward_fake_quant(const FloatModel& model, const CascadePlan& plan,
                                 const Calibration& calibration, const Matrix& x);

/// Runs EVAL forward over `windows` and returns the global min/max seen at
/// every junction.
ActivationRanges observe_ranges(const FloatModel& model, const std::vector<Matrix>& windows,
                                std::size_t batch_size = 256);

}  // namespace mpq
