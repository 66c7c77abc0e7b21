#include "mpq/quantized_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "mpq/error.hpp"
#include "mpq/integer_softmax.hpp"

namespace mpq {
namespace {

using C = ComponentId;

std::vector<std::size_t> shape_of(const Matrix& m) { return {m.rows(), m.cols()}; }

// Largest |q - zero_point| any value under `p` can take.
std::int64_t span_of(const QuantParams& p) {
  return static_cast<std::int64_t>(p.qmax()) - p.qmin();
}

void check_accumulator(std::string_view what, std::int64_t fan_in, std::int64_t a, std::int64_t b,
                       std::int64_t bias) {
  const std::int64_t bound = fan_in * a * b + bias;
  if (bound >= (std::int64_t{1} << 31)) {
    fail(ErrorKind::kInternal, std::string(what) + " accumulator bound " + std::to_string(bound) +
                                   " exceeds 32 bits");
  }
}

QuantizedLinear quantize_linear(std::string_view what, const LinearParams& p, int weight_bits,
                                const QuantParams& in, const QuantParams& out) {
  QuantizedLinear q;
  const auto wp = calibrate_asymmetric(p.weight.values(), weight_bits, true);
  q.weight = quantize(p.weight.values(), shape_of(p.weight), wp);
  q.bias = quantize(p.bias.values(), shape_of(p.bias), derive_bias_params(in, wp));
  q.out = make_requantizer(in.scale * wp.scale, out.scale);
  check_accumulator(what, static_cast<std::int64_t>(p.weight.rows()), span_of(in), span_of(wp),
                    q.bias.params.qmax());
  return q;
}

QuantizedBatchNorm quantize_batch_norm(const BatchNormParams& bn, int bits, const QuantParams& in,
                                       const QuantParams& out) {
  const auto folded = fold_batch_norm(bn);
  QuantizedBatchNorm q;
  const auto sp = calibrate_asymmetric(folded.scale.values(), bits, true);
  q.scale = quantize(folded.scale.values(), shape_of(folded.scale), sp);
  q.shift = quantize(folded.shift.values(), shape_of(folded.shift), derive_bias_params(in, sp));
  q.out = make_requantizer(in.scale * sp.scale, out.scale);
  return q;
}

QuantizedAdd make_add(const QuantParams& lhs, const QuantParams& rhs, const QuantParams& out) {
  return QuantizedAdd{make_requantizer(lhs.scale, out.scale), make_requantizer(rhs.scale, out.scale)};
}

// Row-major integer matrix for intermediate activations.
struct IMat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> v;

  IMat() = default;
  IMat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c) {}
  std::int32_t& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  std::int32_t operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

IMat linear(const IMat& x, std::int32_t zx, const QuantizedLinear& l, const QuantParams& out) {
  const std::size_t in = l.weight.shape[0];
  const std::size_t cols = l.weight.shape[1];
  const std::int32_t zw = l.weight.params.zero_point;
  IMat y(x.rows, cols);
  std::vector<std::int32_t> acc(cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    std::copy(l.bias.data.begin(), l.bias.data.end(), acc.begin());
    for (std::size_t k = 0; k < in; ++k) {
      const std::int32_t xv = x(r, k) - zx;
      if (xv == 0) continue;
      const std::int32_t* w = l.weight.data.data() + k * cols;
      for (std::size_t c = 0; c < cols; ++c) acc[c] += xv * (w[c] - zw);
    }
    for (std::size_t c = 0; c < cols; ++c) y(r, c) = requantize(acc[c], l.out, out);
  }
  return y;
}

IMat add(const IMat& a, std::int32_t za, const IMat& b, std::int32_t zb, const QuantizedAdd& op,
         const QuantParams& out) {
  IMat y(a.rows, a.cols);
  const std::int64_t lo = out.qmin();
  const std::int64_t hi = out.qmax();
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const std::int64_t s = apply_multiplier(a.v[i] - za, op.lhs) +
                           apply_multiplier(b.v[i] - zb, op.rhs) + out.zero_point;
    y.v[i] = static_cast<std::int32_t>(std::clamp(s, lo, hi));
  }
  return y;
}

IMat batch_norm(const IMat& x, std::int32_t zx, const QuantizedBatchNorm& bn,
                const QuantParams& out) {
  IMat y(x.rows, x.cols);
  const std::int32_t zg = bn.scale.params.zero_point;
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) {
      const std::int64_t acc =
          static_cast<std::int64_t>(x(r, c) - zx) * (bn.scale.data[c] - zg) + bn.shift.data[c];
      y(r, c) = requantize(acc, bn.out, out);
    }
  }
  return y;
}

// Runs windows [begin, end) of x_q and writes their outputs into `y`.
void run_windows(const QuantizedModel& qm, const QuantizedTensor& x_q, std::size_t begin,
                 std::size_t end, Matrix& y) {
  const auto& cfg = qm.config;
  const std::size_t n = cfg.seq_len;
  const std::size_t d = cfg.d_model;
  const std::size_t m = cfg.input_dim;
  const auto P = [&](Junction j) -> const QuantParams& { return qm.params(j); };
  const auto Z = [&](Junction j) { return qm.params(j).zero_point; };
  const auto prob_bits = qm.plan.combo[C::kMha];

  for (std::size_t w = begin; w < end; ++w) {
    IMat x(n, m);
    std::copy_n(x_q.data.begin() + static_cast<std::ptrdiff_t>(w * n * m), n * m, x.v.begin());

    IMat l_in = linear(x, Z(Junction::kInput), qm.l_input, P(Junction::kLInput));
    IMat pe(n, d);
    pe.v = qm.pe.data;
    IMat embed = add(l_in, Z(Junction::kLInput), pe, qm.pe.params.zero_point, qm.add_pe,
                     P(Junction::kAddPe));

    IMat q = linear(embed, Z(Junction::kAddPe), qm.wq, P(Junction::kQuery));
    IMat k = linear(embed, Z(Junction::kAddPe), qm.wk, P(Junction::kKey));
    IMat v = linear(embed, Z(Junction::kAddPe), qm.wv, P(Junction::kValue));

    IMat scores(n, n);
    const std::int32_t zq = Z(Junction::kQuery);
    const std::int32_t zk = Z(Junction::kKey);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        std::int32_t acc = 0;
        for (std::size_t t = 0; t < d; ++t) acc += (q(i, t) - zq) * (k(j, t) - zk);
        scores(i, j) = requantize(acc, qm.scores, P(Junction::kScores));
      }
    }

    IMat context(n, d);
    const std::int32_t zv = Z(Junction::kValue);
    std::vector<std::int32_t> acc(d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = integer_softmax(
          std::span<const std::int32_t>(scores.v.data() + i * n, n), qm.softmax, prob_bits);
      std::fill(acc.begin(), acc.end(), 0);
      for (std::size_t j = 0; j < n; ++j) {
        if (p[j] == 0) continue;
        for (std::size_t t = 0; t < d; ++t) acc[t] += p[j] * (v(j, t) - zv);
      }
      for (std::size_t t = 0; t < d; ++t) context(i, t) = requantize(acc[t], qm.context, P(Junction::kContext));
    }

    IMat mha_out = linear(context, Z(Junction::kContext), qm.wo, P(Junction::kMhaOut));
    IMat a_pre = add(mha_out, Z(Junction::kMhaOut), embed, Z(Junction::kAddPe), qm.add_mha,
                     P(Junction::kAddMha));
    IMat a = batch_norm(a_pre, Z(Junction::kAddMha), qm.bn_mha, P(Junction::kBnMha));

    // ReLU is the unsigned clamp of the hidden requantization.
    IMat h = linear(a, Z(Junction::kBnMha), qm.ffn1, P(Junction::kFfnHidden));
    IMat ffn_out = linear(h, Z(Junction::kFfnHidden), qm.ffn2, P(Junction::kFfnOut));
    IMat f_pre = add(ffn_out, Z(Junction::kFfnOut), a, Z(Junction::kBnMha), qm.add_ffn,
                     P(Junction::kAddFfn));
    IMat f = batch_norm(f_pre, Z(Junction::kAddFfn), qm.bn_ffn, P(Junction::kBnFfn));

    IMat g(1, d);
    const std::int32_t zf = Z(Junction::kBnFfn);
    for (std::size_t t = 0; t < d; ++t) {
      std::int32_t sum = 0;
      for (std::size_t i = 0; i < n; ++i) sum += f(i, t) - zf;
      g(0, t) = requantize(sum, qm.gap, P(Junction::kGap));
    }

    IMat out = linear(g, Z(Junction::kGap), qm.l_output, P(Junction::kLOutput));
    for (std::size_t c = 0; c < out.cols; ++c) y(w, c) = dequantize_value(out(0, c), P(Junction::kLOutput));
  }
}

}  // namespace

QuantParams QuantizedModel::probability_params() const {
  return mpq::probability_params(plan.combo[C::kMha]);
}

Calibration QuantizedModel::calibration() const {
  Calibration c;
  for (std::size_t i = 0; i < kJunctionCount; ++i) c[i] = junctions[i];
  return c;
}

void rebuild_requantizers(QuantizedModel& qm) {
  const auto P = [&](Junction j) -> const QuantParams& { return qm.params(j); };
  const auto relink = [](QuantizedLinear& l, const QuantParams& in, const QuantParams& out) {
    l.out = make_requantizer(in.scale * l.weight.params.scale, out.scale);
  };
  relink(qm.l_input, P(Junction::kInput), P(Junction::kLInput));
  qm.add_pe = make_add(P(Junction::kLInput), qm.pe.params, P(Junction::kAddPe));
  relink(qm.wq, P(Junction::kAddPe), P(Junction::kQuery));
  relink(qm.wk, P(Junction::kAddPe), P(Junction::kKey));
  relink(qm.wv, P(Junction::kAddPe), P(Junction::kValue));
  const double sqrt_d = std::sqrt(static_cast<double>(qm.config.d_model));
  qm.scores = make_requantizer(P(Junction::kQuery).scale * P(Junction::kKey).scale /
                               (sqrt_d * P(Junction::kScores).scale));
  qm.softmax = softmax_requantizer(P(Junction::kScores).scale);
  qm.context = make_requantizer(qm.probability_params().scale * P(Junction::kValue).scale,
                                P(Junction::kContext).scale);
  relink(qm.wo, P(Junction::kContext), P(Junction::kMhaOut));
  qm.add_mha = make_add(P(Junction::kMhaOut), P(Junction::kAddPe), P(Junction::kAddMha));
  qm.bn_mha.out = make_requantizer(P(Junction::kAddMha).scale * qm.bn_mha.scale.params.scale,
                                   P(Junction::kBnMha).scale);
  relink(qm.ffn1, P(Junction::kBnMha), P(Junction::kFfnHidden));
  relink(qm.ffn2, P(Junction::kFfnHidden), P(Junction::kFfnOut));
  qm.add_ffn = make_add(P(Junction::kFfnOut), P(Junction::kBnMha), P(Junction::kAddFfn));
  qm.bn_ffn.out = make_requantizer(P(Junction::kAddFfn).scale * qm.bn_ffn.scale.params.scale,
                                   P(Junction::kBnFfn).scale);
  qm.gap = make_requantizer(P(Junction::kBnFfn).scale /
                            (static_cast<double>(qm.config.seq_len) * P(Junction::kGap).scale));
  relink(qm.l_output, P(Junction::kGap), P(Junction::kLOutput));
}

QuantizedModel quantize_model(const FloatModel& model, const BitwidthCombination& combo,
                              const ActivationRanges& ranges) {
  model.config.validate();
  QuantizedModel qm;
  qm.config = model.config;
  qm.plan = plan_cascade(combo);
  const auto calibration = calibration_from_ranges(ranges, qm.plan);
  for (std::size_t i = 0; i < kJunctionCount; ++i) qm.junctions[i] = *calibration[i];
  const auto P = [&](Junction j) -> const QuantParams& { return qm.params(j); };

  qm.l_input = quantize_linear("l_input", model.l_input, combo[C::kLInput], P(Junction::kInput),
                               P(Junction::kLInput));
  qm.pe = quantize(model.pe.values(), shape_of(model.pe),
                   calibrate_asymmetric(model.pe.values(), combo[C::kAddPe], true));
  qm.wq = quantize_linear("mha.wq", model.wq, combo[C::kMha], P(Junction::kAddPe), P(Junction::kQuery));
  qm.wk = quantize_linear("mha.wk", model.wk, combo[C::kMha], P(Junction::kAddPe), P(Junction::kKey));
  qm.wv = quantize_linear("mha.wv", model.wv, combo[C::kMha], P(Junction::kAddPe), P(Junction::kValue));
  qm.wo = quantize_linear("mha.wo", model.wo, combo[C::kMha], P(Junction::kContext), P(Junction::kMhaOut));
  qm.bn_mha = quantize_batch_norm(model.bn_mha, combo[C::kBnMha], P(Junction::kAddMha), P(Junction::kBnMha));
  qm.ffn1 = quantize_linear("ffn.w1", model.ffn1, combo[C::kFfn], P(Junction::kBnMha),
                            P(Junction::kFfnHidden));
  qm.ffn2 = quantize_linear("ffn.w2", model.ffn2, combo[C::kFfn], P(Junction::kFfnHidden),
                            P(Junction::kFfnOut));
  qm.bn_ffn = quantize_batch_norm(model.bn_ffn, combo[C::kBnFfn], P(Junction::kAddFfn), P(Junction::kBnFfn));
  qm.l_output = quantize_linear("l_output", model.l_output, combo[C::kLOutput], P(Junction::kGap),
                                P(Junction::kLOutput));

  const auto n = static_cast<std::int64_t>(qm.config.seq_len);
  const auto d = static_cast<std::int64_t>(qm.config.d_model);
  check_accumulator("mha.scores", d, span_of(P(Junction::kQuery)), span_of(P(Junction::kKey)), 0);
  check_accumulator("mha.context", n, qm.probability_params().qmax(), span_of(P(Junction::kValue)), 0);
  check_accumulator("gap", n, span_of(P(Junction::kBnFfn)), 1, 0);
  rebuild_requantizers(qm);
  return qm;
}

QuantizedModel quantize_model(const FloatModel& model, const BitwidthCombination& combo,
                              const std::vector<Matrix>& calibration_windows) {
  if (calibration_windows.empty()) fail(ErrorKind::kValidation, "calibration data is empty");
  return quantize_model(model, combo, observe_ranges(model, calibration_windows));
}

QuantizedTensor quantize_input(const QuantizedModel& qm, const Matrix& x) {
  if (x.cols() != qm.config.input_dim || x.rows() == 0 || x.rows() % qm.config.seq_len != 0) {
    fail(ErrorKind::kValidation, "input shape does not match the model");
  }
  return quantize(x.values(), shape_of(x), qm.params(Junction::kInput));
}

Matrix forward_integer(const QuantizedModel& qm, const QuantizedTensor& x_q, std::size_t threads) {
  const auto& cfg = qm.config;
  if (x_q.params != qm.params(Junction::kInput)) {
    fail(ErrorKind::kValidation, "input quantization parameters do not match the model");
  }
  const std::size_t per_window = cfg.seq_len * cfg.input_dim;
  if (x_q.data.empty() || x_q.data.size() % per_window != 0) {
    fail(ErrorKind::kValidation, "quantized input size is not a whole number of windows");
  }
  const std::size_t windows = x_q.data.size() / per_window;
  Matrix y(windows, cfg.output_dim);
  threads = std::clamp<std::size_t>(threads, 1, windows);
  if (threads == 1) {
    run_windows(qm, x_q, 0, windows, y);
    return y;
  }
  std::vector<std::thread> workers;
  const std::size_t chunk = (windows + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(windows, begin + chunk);
    if (begin >= end) break;
    workers.emplace_back([&, begin, end] { run_windows(qm, x_q, begin, end, y); });
  }
  for (auto& w : workers) w.join();
  return y;
}

}  // namespace mpq
