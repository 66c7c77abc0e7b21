#include "mpq/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "mpq/error.hpp"
#include "mpq/integer_softmax.hpp"

namespace mpq {
namespace {

constexpr std::array<std::string_view, kJunctionCount> kJunctionNames = {
    "input",   "l_input", "add_pe",  "mha.q",      "mha.k",   "mha.v",
    "mha.scores", "mha.context", "mha.out", "add_mha", "bn_mha", "ffn.hidden",
    "ffn.out", "add_ffn", "bn_ffn",  "gap",        "l_output"};

LinearParams make_linear(std::size_t in, std::size_t out) {
  return LinearParams{Matrix(in, out), Matrix(1, out)};
}

BatchNormParams make_bn(std::size_t d) {
  return BatchNormParams{Matrix(1, d, 1.0), Matrix(1, d), Matrix(1, d), Matrix(1, d, 1.0)};
}

void init_linear(LinearParams& p, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(p.weight.rows()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : p.weight.values()) w = dist(rng);
  p.bias.fill(0.0);
}

// Fake quantization of one tensor in place, recording the pass-through mask.
void fake_quantize(Matrix& m, const QuantParams& p, std::vector<std::uint8_t>* mask) {
  const double lo = p.qmin();
  const double hi = p.qmax();
  if (mask != nullptr) mask->assign(m.size(), 1);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double q = round_half_away(m[i] / p.scale) + p.zero_point;
    if (q < lo || q > hi) {
      if (mask != nullptr) (*mask)[i] = 0;
    }
    m[i] = p.scale * (std::clamp(q, lo, hi) - p.zero_point);
  }
}

struct ForwardState {
  const FloatModel& model;
  ForwardMode mode;
  const FakeQuantOptions& opts;
  ForwardCache& cache;

  std::optional<QuantParams> quantize_activation(Junction j, Matrix& m) {
    if (!opts.hook) return std::nullopt;
    auto params = opts.hook(j, m);
    if (params) fake_quantize(m, *params, &cache.masks[index_of(j)]);
    return params;
  }

  // Effective weights for a linear layer: fake-quantized when a plan is set.
  // The bias follows the symmetric rule at input scale * weight scale.
  LinearParams effective(const LinearParams& src, int weight_bits,
                         const std::optional<QuantParams>& input_params, std::size_t mask_slot) {
    LinearParams out = src;
    if (opts.plan == nullptr) return out;
    const auto wp = calibrate_asymmetric(src.weight.values(), weight_bits, true);
    fake_quantize(out.weight, wp, &cache.param_masks[mask_slot]);
    if (input_params) {
      const auto bp = derive_bias_params(*input_params, wp);
      fake_quantize(out.bias, bp, &cache.param_masks[mask_slot + 1]);
    }
    return out;
  }

  // Residual add; under fake quantization each addend is rounded onto the
  // output grid separately before the integer-style sum.
  Matrix add(Junction j, const Matrix& a, const Matrix& b, std::optional<QuantParams>& params) {
    Matrix sum(a.rows(), a.cols());
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = a[i] + b[i];
    params.reset();
    if (!opts.hook) return sum;
    params = opts.hook(j, sum);
    if (!params) return sum;
    const auto& p = *params;
    auto& mask = cache.masks[index_of(j)];
    mask.assign(sum.size(), 1);
    const double lo = p.qmin();
    const double hi = p.qmax();
    for (std::size_t i = 0; i < sum.size(); ++i) {
      const double q =
          round_half_away(a[i] / p.scale) + round_half_away(b[i] / p.scale) + p.zero_point;
      if (q < lo || q > hi) mask[i] = 0;
      sum[i] = p.scale * (std::clamp(q, lo, hi) - p.zero_point);
    }
    return sum;
  }

  Matrix batch_norm(const BatchNormParams& bn, const Matrix& x, BatchNormCache& bc,
                    Junction j, int own_bits, const std::optional<QuantParams>& input_params,
                    std::optional<QuantParams>& params) {
    const std::size_t rows = x.rows();
    const std::size_t d = x.cols();
    Matrix y(rows, d);
    if (mode == ForwardMode::kEval && opts.plan != nullptr && opts.fold_batch_norm) {
      // Quantized per-feature affine, same arithmetic as the integer path.
      auto folded = fold_batch_norm(bn);
      const auto sp = calibrate_asymmetric(folded.scale.values(), own_bits, true);
      fake_quantize(folded.scale, sp, nullptr);
      if (input_params) fake_quantize(folded.shift, derive_bias_params(*input_params, sp), nullptr);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) y(r, c) = x(r, c) * folded.scale[c] + folded.shift[c];
      bc.xhat = Matrix();
      params = quantize_activation(j, y);
      return y;
    }
    bc.inv_std.assign_zero(1, d);
    bc.xhat.assign_zero(rows, d);
    if (mode == ForwardMode::kTrain) {
      bc.batch_mean.assign_zero(1, d);
      bc.batch_var.assign_zero(1, d);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) bc.batch_mean[c] += x(r, c);
      for (std::size_t c = 0; c < d; ++c) bc.batch_mean[c] /= static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = x(r, c) - bc.batch_mean[c];
          bc.batch_var[c] += diff * diff;
        }
      for (std::size_t c = 0; c < d; ++c) {
        bc.batch_var[c] /= static_cast<double>(rows);
        bc.inv_std[c] = 1.0 / std::sqrt(bc.batch_var[c] + kBatchNormEps);
      }
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c)
          bc.xhat(r, c) = (x(r, c) - bc.batch_mean[c]) * bc.inv_std[c];
    } else {
      for (std::size_t c = 0; c < d; ++c)
        bc.inv_std[c] = 1.0 / std::sqrt(bn.running_var[c] + kBatchNormEps);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c)
          bc.xhat(r, c) = (x(r, c) - bn.running_mean[c]) * bc.inv_std[c];
    }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) y(r, c) = bc.xhat(r, c) * bn.gamma[c] + bn.beta[c];
    params = quantize_activation(j, y);
    return y;
  }

  int bits(ComponentId c) const { return opts.plan ? opts.plan->combo[c] : 0; }
};

}  // namespace

void ModelConfig::validate() const {
  if (seq_len == 0 || input_dim == 0 || d_model == 0 || output_dim == 0) {
    fail(ErrorKind::kValidation, "model dimensions must be positive");
  }
}

std::string_view name_of(Junction j) { return kJunctionNames[index_of(j)]; }

std::optional<Junction> parse_junction(std::string_view name) {
  for (std::size_t i = 0; i < kJunctionCount; ++i) {
    if (kJunctionNames[i] == name) return junction_at(i);
  }
  return std::nullopt;
}

ComponentId owner_of(Junction j) {
  switch (j) {
    case Junction::kInput:
    case Junction::kLInput:
      return ComponentId::kLInput;
    case Junction::kAddPe:
      return ComponentId::kAddPe;
    case Junction::kQuery:
    case Junction::kKey:
    case Junction::kValue:
    case Junction::kScores:
    case Junction::kContext:
    case Junction::kMhaOut:
      return ComponentId::kMha;
    case Junction::kAddMha:
      return ComponentId::kAddMha;
    case Junction::kBnMha:
      return ComponentId::kBnMha;
    case Junction::kFfnHidden:
    case Junction::kFfnOut:
      return ComponentId::kFfn;
    case Junction::kAddFfn:
      return ComponentId::kAddFfn;
    case Junction::kBnFfn:
      return ComponentId::kBnFfn;
    case Junction::kGap:
      return ComponentId::kGap;
    case Junction::kLOutput:
      return ComponentId::kLOutput;
  }
  return ComponentId::kLInput;
}

bool junction_is_signed(Junction j) { return j != Junction::kFfnHidden; }

int junction_bitwidth(const CascadePlan& plan, Junction j) {
  if (j == Junction::kInput) return plan.model_input_bitwidth;
  return plan.combo[owner_of(j)];
}

Calibration calibration_from_ranges(const ActivationRanges& ranges, const CascadePlan& plan) {
  Calibration out;
  for (std::size_t i = 0; i < kJunctionCount; ++i) {
    const auto j = junction_at(i);
    if (!ranges[i]) {
      fail(ErrorKind::kValidation, "no calibration range for junction '" + std::string(name_of(j)) + "'");
    }
    out[i] = calibrate_range(ranges[i]->first, ranges[i]->second, junction_bitwidth(plan, j),
                             junction_is_signed(j));
  }
  return out;
}

QuantParams probability_params(int bitwidth) {
  QuantParams p;
  p.bitwidth = bitwidth;
  p.is_signed = false;
  p.zero_point = 0;
  p.scale = 1.0 / (std::ldexp(1.0, bitwidth) - 1.0);
  return p;
}

FloatModel FloatModel::zeros(const ModelConfig& config) {
  config.validate();
  FloatModel m;
  m.config = config;
  const std::size_t d = config.d_model;
  m.l_input = make_linear(config.input_dim, d);
  m.pe = Matrix(config.seq_len, d);
  m.wq = make_linear(d, d);
  m.wk = make_linear(d, d);
  m.wv = make_linear(d, d);
  m.wo = make_linear(d, d);
  m.bn_mha = make_bn(d);
  m.ffn1 = make_linear(d, config.ffn_dim());
  m.ffn2 = make_linear(config.ffn_dim(), d);
  m.bn_ffn = make_bn(d);
  m.l_output = make_linear(d, config.output_dim);
  return m;
}

Matrix positional_encoding(std::size_t seq_len, std::size_t d_model) {
  Matrix pe(seq_len, d_model);
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double exponent = static_cast<double>(i - i % 2) / static_cast<double>(d_model);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

FloatModel init_model(const ModelConfig& config, std::uint64_t seed) {
  FloatModel m = FloatModel::zeros(config);
  std::mt19937_64 rng(seed);
  for (auto* p : {&m.l_input, &m.wq, &m.wk, &m.wv, &m.wo, &m.ffn1, &m.ffn2, &m.l_output}) {
    init_linear(*p, rng);
  }
  m.pe = positional_encoding(config.seq_len, config.d_model);
  return m;
}

FoldedBatchNorm fold_batch_norm(const BatchNormParams& bn) {
  const std::size_t d = bn.gamma.cols();
  FoldedBatchNorm out{Matrix(1, d), Matrix(1, d)};
  for (std::size_t c = 0; c < d; ++c) {
    out.scale[c] = bn.gamma[c] / std::sqrt(bn.running_var[c] + kBatchNormEps);
    out.shift[c] = bn.beta[c] - bn.running_mean[c] * out.scale[c];
  }
  return out;
}

Matrix stack_windows(const std::vector<Matrix>& windows) {
  if (windows.empty()) return Matrix();
  const std::size_t n = windows.front().rows();
  const std::size_t m = windows.front().cols();
  Matrix out(n * windows.size(), m);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b].rows() != n || windows[b].cols() != m) {
      fail(ErrorKind::kValidation, "windows in a batch must share one shape");
    }
    std::copy(windows[b].values().begin(), windows[b].values().end(), out.row(b * n).begin());
  }
  return out;
}

ForwardResult forward_with(const FloatModel& model, const Matrix& x, ForwardMode mode,
                           const FakeQuantOptions& opts) {
  const auto& cfg = model.config;
  const std::size_t n = cfg.seq_len;
  const std::size_t d = cfg.d_model;
  if (x.cols() != cfg.input_dim || x.rows() == 0 || x.rows() % n != 0) {
    fail(ErrorKind::kValidation, "input of shape " + std::to_string(x.rows()) + "x" +
                                     std::to_string(x.cols()) + " does not match seq_len " +
                                     std::to_string(n) + ", input_dim " +
                                     std::to_string(cfg.input_dim));
  }
  ForwardResult result;
  auto& c = result.cache;
  c.mode = mode;
  c.batch = x.rows() / n;
  const std::size_t batch = c.batch;
  ForwardState st{model, mode, opts, c};
  using C = ComponentId;

  c.x = x;
  auto in_p = st.quantize_activation(Junction::kInput, c.x);

  // Input projection and positional encoding.
  c.l_input_w = st.effective(model.l_input, st.bits(C::kLInput), in_p, 0);
  matmul(c.x, c.l_input_w.weight, c.l_in, &c.l_input_w.bias);
  st.quantize_activation(Junction::kLInput, c.l_in);

  Matrix pe = model.pe;
  if (opts.plan != nullptr) {
    fake_quantize(pe, calibrate_asymmetric(pe.values(), st.bits(C::kAddPe), true), nullptr);
  }
  Matrix pe_tiled(batch * n, d);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy(pe.values().begin(), pe.values().end(), pe_tiled.row(b * n).begin());
  std::optional<QuantParams> embed_p;
  c.embed = st.add(Junction::kAddPe, c.l_in, pe_tiled, embed_p);

  // Single-head self-attention.
  c.wq_w = st.effective(model.wq, st.bits(C::kMha), embed_p, 2);
  c.wk_w = st.effective(model.wk, st.bits(C::kMha), embed_p, 4);
  c.wv_w = st.effective(model.wv, st.bits(C::kMha), embed_p, 6);
  matmul(c.embed, c.wq_w.weight, c.q, &c.wq_w.bias);
  matmul(c.embed, c.wk_w.weight, c.k, &c.wk_w.bias);
  matmul(c.embed, c.wv_w.weight, c.v, &c.wv_w.bias);
  st.quantize_activation(Junction::kQuery, c.q);
  st.quantize_activation(Junction::kKey, c.k);
  st.quantize_activation(Junction::kValue, c.v);

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix scores(batch * n, n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto qi = c.q.row(b * n + i);
      for (std::size_t j = 0; j < n; ++j) {
        const auto kj = c.k.row(b * n + j);
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) s += qi[t] * kj[t];
        scores(b * n + i, j) = s * inv_sqrt_d;
      }
    }
  }
  const auto scores_p = st.quantize_activation(Junction::kScores, scores);

  c.probs.assign_zero(batch * n, n);
  for (std::size_t r = 0; r < batch * n; ++r) {
    const auto s = scores.row(r);
    const double mx = *std::max_element(s.begin(), s.end());
    double sum = 0.0;
    auto p = c.probs.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = std::exp(s[j] - mx);
      sum += p[j];
    }
    for (std::size_t j = 0; j < n; ++j) p[j] /= sum;
  }
  c.probs_used = c.probs;
  if (scores_p) {
    // Same fixed-point softmax the integer path runs.
    const auto to_log2 = softmax_requantizer(scores_p->scale);
    const int prob_bits = st.bits(C::kMha) > 0 ? st.bits(C::kMha) : scores_p->bitwidth;
    const double levels = std::ldexp(1.0, prob_bits) - 1.0;
    std::vector<std::int32_t> qs(n);
    for (std::size_t r = 0; r < batch * n; ++r) {
      const auto s = scores.row(r);
      for (std::size_t j = 0; j < n; ++j) qs[j] = quantize_value(s[j], *scores_p);
      const auto qp = integer_softmax(qs, to_log2, prob_bits);
      auto out = c.probs_used.row(r);
      for (std::size_t j = 0; j < n; ++j) out[j] = qp[j] / levels;
    }
  }

  c.context.assign_zero(batch * n, d);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      auto out = c.context.row(b * n + i);
      const auto p = c.probs_used.row(b * n + i);
      for (std::size_t j = 0; j < n; ++j) {
        const auto vj = c.v.row(b * n + j);
        for (std::size_t t = 0; t < d; ++t) out[t] += p[j] * vj[t];
      }
    }
  }
  auto ctx_p = st.quantize_activation(Junction::kContext, c.context);

  c.wo_w = st.effective(model.wo, st.bits(C::kMha), ctx_p, 8);
  matmul(c.context, c.wo_w.weight, c.mha_out, &c.wo_w.bias);
  st.quantize_activation(Junction::kMhaOut, c.mha_out);

  std::optional<QuantParams> add_mha_p;
  std::optional<QuantParams> bn_mha_p;
  c.a_pre = st.add(Junction::kAddMha, c.mha_out, c.embed, add_mha_p);
  c.a = st.batch_norm(model.bn_mha, c.a_pre, c.bn_mha, Junction::kBnMha, st.bits(C::kBnMha),
                      add_mha_p, bn_mha_p);

  // Feed-forward block.
  c.ffn1_w = st.effective(model.ffn1, st.bits(C::kFfn), bn_mha_p, 10);
  matmul(c.a, c.ffn1_w.weight, c.h, &c.ffn1_w.bias);
  {
    // ReLU mask goes into the hidden junction mask so backward has one mask.
    std::vector<std::uint8_t> relu(c.h.size());
    for (std::size_t i = 0; i < c.h.size(); ++i) {
      relu[i] = c.h[i] > 0.0 ? 1 : 0;
      if (!relu[i]) c.h[i] = 0.0;
    }
    auto hidden_p = st.quantize_activation(Junction::kFfnHidden, c.h);
    auto& mask = c.masks[index_of(Junction::kFfnHidden)];
    if (hidden_p) {
      for (std::size_t i = 0; i < mask.size(); ++i) mask[i] &= relu[i];
    } else {
      mask = std::move(relu);
    }
    c.ffn2_w = st.effective(model.ffn2, st.bits(C::kFfn), hidden_p, 12);
  }
  matmul(c.h, c.ffn2_w.weight, c.ffn_out, &c.ffn2_w.bias);
  st.quantize_activation(Junction::kFfnOut, c.ffn_out);

  std::optional<QuantParams> add_ffn_p;
  std::optional<QuantParams> bn_ffn_p;
  c.f_pre = st.add(Junction::kAddFfn, c.ffn_out, c.a, add_ffn_p);
  c.f = st.batch_norm(model.bn_ffn, c.f_pre, c.bn_ffn, Junction::kBnFfn, st.bits(C::kBnFfn),
                      add_ffn_p, bn_ffn_p);

  // Global average pooling over time, then the output projection.
  c.g.assign_zero(batch, d);
  for (std::size_t b = 0; b < batch; ++b) {
    auto gb = c.g.row(b);
    for (std::size_t i = 0; i < n; ++i) {
      const auto fr = c.f.row(b * n + i);
      for (std::size_t t = 0; t < d; ++t) gb[t] += fr[t];
    }
    for (std::size_t t = 0; t < d; ++t) gb[t] /= static_cast<double>(n);
  }
  auto gap_p = st.quantize_activation(Junction::kGap, c.g);

  c.l_output_w = st.effective(model.l_output, st.bits(C::kLOutput), gap_p, 14);
  matmul(c.g, c.l_output_w.weight, c.y, &c.l_output_w.bias);
  st.quantize_activation(Junction::kLOutput, c.y);

  result.y = c.y;
  return result;
}

ForwardResult forward_float(const FloatModel& model, const Matrix& x, ForwardMode mode) {
  return forward_with(model, x, mode, FakeQuantOptions{});
}

ForwardResult forward_fake_quant(const FloatModel& model, const CascadePlan& plan,
                                 const Calibration& calibration, const Matrix& x) {
  for (std::size_t i = 0; i < kJunctionCount; ++i) {
    if (!calibration[i]) {
      fail(ErrorKind::kValidation,
           "missing calibration for junction '" + std::string(name_of(junction_at(i))) + "'");
    }
  }
  FakeQuantOptions opts;
  opts.plan = &plan;
  opts.fold_batch_norm = true;
  opts.hook = [&](Junction j, const Matrix&) { return calibration[index_of(j)]; };
  return forward_with(model, x, ForwardMode::kEval, opts);
}

ActivationRanges observe_ranges(const FloatModel& model, const std::vector<Matrix>& windows,
                                std::size_t batch_size) {
  if (windows.empty()) fail(ErrorKind::kValidation, "calibration data is empty");
  ActivationRanges ranges;
  FakeQuantOptions opts;
  opts.hook = [&](Junction j, const Matrix& m) -> std::optional<QuantParams> {
    auto& r = ranges[index_of(j)];
    for (double v : m.values()) {
      if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "non-finite activation at " + std::string(name_of(j)));
      if (!r) r = std::make_pair(v, v);
      r->first = std::min(r->first, v);
      r->second = std::max(r->second, v);
    }
    return std::nullopt;
  };
  batch_size = std::max<std::size_t>(1, batch_size);
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const std::size_t end = std::min(windows.size(), start + batch_size);
    std::vector<Matrix> chunk(windows.begin() + static_cast<std::ptrdiff_t>(start),
                              windows.begin() + static_cast<std::ptrdiff_t>(end));
    forward_with(model, stack_windows(chunk), ForwardMode::kEval, opts);
  }
  return ranges;
}

}  // namespace mpq
