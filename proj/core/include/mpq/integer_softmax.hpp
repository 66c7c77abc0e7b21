#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mpq/quantization.hpp"

namespace mpq {

/// 2^(-i/256) in Q15 for i in [0, 256).
const std::array<std::int32_t, 256>& exp2_table();

/// Maps a score difference (in score LSBs) to log2 units in Q16:
/// ratio = score_scale * log2(e) * 2^16.
Requantizer softmax_requantizer(double score_scale);

/// e^(-d * score_scale) in Q15 for a non-negative score difference d.
std::int32_t integer_exp_neg(std::int64_t d, const Requantizer& to_log2);

/// Integer softmax over one row of quantized scores. Zero points cancel under
/// max subtraction, so only the raw integers are needed. Returns unsigned
/// probabilities on the 1 / (2^prob_bits - 1) grid; the row sums to exactly
/// 2^prob_bits - 1.
std::vector<std::int32_t> integer_softmax(std::span<const std::int32_t> scores,
                                          const Requantizer& to_log2, int prob_bits);

}  // namespace mpq
