#include "mpq/integer_softmax.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mpq/error.hpp"

namespace mpq {

const std::array<std::int32_t, 256>& exp2_table() {
  static const auto table = [] {
    std::array<std::int32_t, 256> t{};
    for (int i = 0; i < 256; ++i) {
      t[static_cast<std::size_t>(i)] =
          static_cast<std::int32_t>(std::lround(32768.0 * std::exp2(-i / 256.0)));
    }
    return t;
  }();
  return table;
}

Requantizer softmax_requantizer(double score_scale) {
  return make_requantizer(score_scale * std::numbers::log2e * 65536.0);
}

std::int32_t integer_exp_neg(std::int64_t d, const Requantizer& to_log2) {
  const std::int64_t u = apply_multiplier(d, to_log2);
  std::int64_t k = u >> 16;
  std::int64_t idx = ((u & 0xFFFF) + 128) >> 8;
  if (idx == 256) {
    idx = 0;
    ++k;
  }
  if (k >= 31) return 0;
  const std::int64_t v = exp2_table()[static_cast<std::size_t>(idx)];
  if (k == 0) return static_cast<std::int32_t>(v);
  return static_cast<std::int32_t>((v + (std::int64_t{1} << (k - 1))) >> k);
}

std::vector<std::int32_t> integer_softmax(std::span<const std::int32_t> scores,
                                          const Requantizer& to_log2, int prob_bits) {
  if (scores.empty()) fail(ErrorKind::kValidation, "softmax over an empty row");
  const std::int32_t mx = *std::max_element(scores.begin(), scores.end());
  std::vector<std::int64_t> e(scores.size());
  std::int64_t total = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    e[j] = integer_exp_neg(static_cast<std::int64_t>(mx) - scores[j], to_log2);
    total += e[j];
  }
  // Cumulative rounding keeps the row sum exact.
  const std::int64_t levels = (std::int64_t{1} << prob_bits) - 1;
  std::vector<std::int32_t> p(scores.size());
  std::int64_t cum = 0;
  std::int64_t prev = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    cum += e[j];
    const std::int64_t cur = (cum * levels * 2 + total) / (2 * total);
    p[j] = static_cast<std::int32_t>(cur - prev);
    prev = cur;
  }
  return p;
}

}  // namespace mpq
