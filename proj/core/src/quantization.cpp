#include "mpq/quantization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mpq/error.hpp"

namespace mpq {
namespace {
__extension__ typedef __int128 int128;
}  // namespace

void QuantParams::validate() const {
  if (!(scale > 0) || !std::isfinite(scale)) {
    fail(ErrorKind::kValidation, "quantization scale must be positive and finite");
  }
  if (bitwidth < 2 || bitwidth > 30) {
    fail(ErrorKind::kValidation, "quantization bitwidth " + std::to_string(bitwidth) + " unsupported");
  }
  if (scheme == QuantScheme::kSymmetric && zero_point != 0) {
    fail(ErrorKind::kValidation, "symmetric quantization requires zero_point == 0");
  }
  if (zero_point < qmin() || zero_point > qmax()) {
    fail(ErrorKind::kValidation, "zero_point " + std::to_string(zero_point) +
                                     " outside representable range");
  }
}

double round_half_away(double v) { return std::round(v); }

QuantParams calibrate_range(double lo, double hi, int bitwidth, bool is_signed) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    fail(ErrorKind::kNumeric, "cannot calibrate a non-finite range");
  }
  if (lo > hi) std::swap(lo, hi);
  QuantParams p;
  p.bitwidth = bitwidth;
  p.is_signed = is_signed;
  p.scheme = QuantScheme::kAsymmetric;
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  const double levels = static_cast<double>(p.qmax()) - static_cast<double>(p.qmin());
  if (hi == lo) {
    p.scale = 1.0;
    p.zero_point = p.qmin();
    return p;
  }
  p.scale = (hi - lo) / levels;
  // qmin - lo / scale, written without the division round trip.
  const double zp = static_cast<double>(p.qmin()) - lo * levels / (hi - lo);
  p.zero_point = static_cast<std::int32_t>(
      std::clamp(round_half_away(zp), static_cast<double>(p.qmin()), static_cast<double>(p.qmax())));
  return p;
}

QuantParams calibrate_asymmetric(std::span<const double> values, int bitwidth, bool is_signed) {
  if (values.empty()) fail(ErrorKind::kValidation, "cannot calibrate an empty tensor");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "cannot calibrate NaN or Inf values");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return calibrate_range(lo, hi, bitwidth, is_signed);
}

QuantParams derive_bias_params(const QuantParams& x, const QuantParams& w) {
  QuantParams p;
  p.scale = x.scale * w.scale;
  p.zero_point = 0;
  p.bitwidth = x.bitwidth + w.bitwidth + 2;
  p.is_signed = true;
  p.scheme = QuantScheme::kSymmetric;
  return p;
}

std::int32_t quantize_value(double v, const QuantParams& p) {
  const double q = round_half_away(v / p.scale) + static_cast<double>(p.zero_point);
  return static_cast<std::int32_t>(
      std::clamp(q, static_cast<double>(p.qmin()), static_cast<double>(p.qmax())));
}

double dequantize_value(std::int32_t q, const QuantParams& p) {
  return p.scale * static_cast<double>(static_cast<std::int64_t>(q) - p.zero_point);
}

double fake_quantize_value(double v, const QuantParams& p) {
  return dequantize_value(quantize_value(v, p), p);
}

QuantizedTensor quantize(std::span<const double> values, std::vector<std::size_t> shape,
                         const QuantParams& params) {
  if (shape.empty()) shape.push_back(values.size());
  std::size_t count = 1;
  for (auto d : shape) count *= d;
  if (count != values.size()) {
    fail(ErrorKind::kValidation, "shape holds " + std::to_string(count) + " elements, got " +
                                     std::to_string(values.size()));
  }
  QuantizedTensor t;
  t.params = params;
  t.shape = std::move(shape);
  t.data.reserve(values.size());
  for (double v : values) t.data.push_back(quantize_value(v, params));
  return t;
}

std::vector<double> dequantize(const QuantizedTensor& t) {
  std::vector<double> out;
  out.reserve(t.data.size());
  for (auto q : t.data) out.push_back(dequantize_value(q, t.params));
  return out;
}

double Requantizer::ratio() const { return std::ldexp(static_cast<double>(multiplier), -shift); }

Requantizer make_requantizer(double ratio) {
  if (!(ratio > 0) || !std::isfinite(ratio)) {
    fail(ErrorKind::kValidation, "requantization ratio must be positive and finite");
  }
  int exponent = 0;
  const double mantissa = std::frexp(ratio, &exponent);  // ratio = mantissa * 2^exponent
  auto m = static_cast<std::int64_t>(std::llround(mantissa * 2147483648.0));
  if (m == (std::int64_t{1} << 31)) {
    m >>= 1;
    ++exponent;
  }
  const int shift = 31 - exponent;
  if (shift < 0 || shift > 63) {
    fail(ErrorKind::kValidation, "requantization ratio outside the representable range [2^-32, 2^31)");
  }
  return Requantizer{static_cast<std::int32_t>(m), shift};
}

Requantizer make_requantizer(double s_in, double s_out) {
  if (!(s_in > 0) || !(s_out > 0)) fail(ErrorKind::kValidation, "scales must be positive");
  return make_requantizer(s_in / s_out);
}

std::int64_t apply_multiplier(std::int64_t acc, const Requantizer& r) {
  const int128 prod = static_cast<int128>(acc) * r.multiplier;
  if (r.shift == 0) return static_cast<std::int64_t>(prod);
  const int128 mag = prod < 0 ? -prod : prod;
  const int128 rounded = (mag + (static_cast<int128>(1) << (r.shift - 1))) >> r.shift;
  return static_cast<std::int64_t>(prod < 0 ? -rounded : rounded);
}

std::int32_t requantize(std::int64_t acc, const Requantizer& r, std::int32_t out_zero_point,
                        int out_bitwidth, bool out_signed) {
  const std::int64_t lo = out_signed ? -(std::int64_t{1} << (out_bitwidth - 1)) : 0;
  const std::int64_t hi = out_signed ? (std::int64_t{1} << (out_bitwidth - 1)) - 1
                                     : (std::int64_t{1} << out_bitwidth) - 1;
  const std::int64_t v = apply_multiplier(acc, r) + out_zero_point;
  return static_cast<std::int32_t>(std::clamp(v, lo, hi));
}

std::int32_t requantize(std::int64_t acc, const Requantizer& r, const QuantParams& out) {
  return requantize(acc, r, out.zero_point, out.bitwidth, out.is_signed);
}

}  // namespace mpq
