#pragma once

#include "mpq/matrix.hpp"
#include "mpq/transformer.hpp"

namespace mpq {

/// Gradient of sum(dy .* y) with respect to every trainable tensor, given
/// the cache of the forward pass that produced y. Returned in a FloatModel
/// shaped like `model`; buffers and the positional table are zero. Under
/// fake quantization rounding is treated as identity inside the clamp range
/// (straight-through) using the masks stored in the cache.
FloatModel backward(const FloatModel& model, const ForwardCache& cache, const Matrix& dy);

}  // namespace mpq
