#include "mpq/backward.hpp"

#include <cmath>

#include "mpq/error.hpp"

namespace mpq {
namespace {

void apply_mask(Matrix& g, const std::vector<std::uint8_t>& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!mask[i]) g[i] = 0.0;
  }
}

// Gradients for y = x W + b given dy; returns dx when wanted.
void linear_backward(const Matrix& x, const LinearParams& used, const Matrix& dy, LinearParams& grad,
                     const std::vector<std::uint8_t>& w_mask, const std::vector<std::uint8_t>& b_mask,
                     Matrix* dx) {
  matmul_tn(x, dy, grad.weight);
  column_sums(dy, grad.bias);
  apply_mask(grad.weight, w_mask);
  apply_mask(grad.bias, b_mask);
  if (dx != nullptr) matmul_nt(dy, used.weight, *dx);
}

Matrix batch_norm_backward(const BatchNormParams& bn, const BatchNormCache& bc, ForwardMode mode,
                           const Matrix& dy, BatchNormParams& grad) {
  const std::size_t rows = dy.rows();
  const std::size_t d = dy.cols();
  if (bc.xhat.empty()) fail(ErrorKind::kInternal, "no batch norm cache; folded forward is not differentiable");
  grad.gamma.assign_zero(1, d);
  grad.beta.assign_zero(1, d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      grad.gamma[c] += dy(r, c) * bc.xhat(r, c);
      grad.beta[c] += dy(r, c);
    }
  }
  Matrix dx(rows, d);
  if (mode == ForwardMode::kEval) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) dx(r, c) = dy(r, c) * bn.gamma[c] * bc.inv_std[c];
    return dx;
  }
  // Batch statistics depend on x: dx = inv_std / R * (R dxhat - sum dxhat - xhat sum(dxhat xhat)).
  const double count = static_cast<double>(rows);
  for (std::size_t c = 0; c < d; ++c) {
    const double sum_dxhat = grad.beta[c] * bn.gamma[c];
    const double sum_dxhat_xhat = grad.gamma[c] * bn.gamma[c];
    for (std::size_t r = 0; r < rows; ++r) {
      const double dxhat = dy(r, c) * bn.gamma[c];
      dx(r, c) = bc.inv_std[c] / count *
                 (count * dxhat - sum_dxhat - bc.xhat(r, c) * sum_dxhat_xhat);
    }
  }
  return dx;
}

}  // namespace

FloatModel backward(const FloatModel& model, const ForwardCache& c, const Matrix& dy_in) {
  const auto& cfg = model.config;
  const std::size_t n = cfg.seq_len;
  const std::size_t d = cfg.d_model;
  const std::size_t batch = c.batch;
  if (dy_in.rows() != batch || dy_in.cols() != cfg.output_dim) {
    fail(ErrorKind::kValidation, "output gradient shape does not match the forward batch");
  }
  FloatModel g = FloatModel::zeros(cfg);
  g.bn_mha.gamma.fill(0.0);
  g.bn_ffn.gamma.fill(0.0);
  g.bn_mha.running_var.fill(0.0);
  g.bn_ffn.running_var.fill(0.0);
  const auto mask = [&](Junction j) -> const std::vector<std::uint8_t>& { return c.masks[index_of(j)]; };
  const auto& pm = c.param_masks;

  Matrix dy = dy_in;
  apply_mask(dy, mask(Junction::kLOutput));
  Matrix dg;
  linear_backward(c.g, c.l_output_w, dy, g.l_output, pm[14], pm[15], &dg);
  apply_mask(dg, mask(Junction::kGap));

  Matrix df(batch * n, d);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < d; ++t) df(b * n + i, t) = dg(b, t) / static_cast<double>(n);
  apply_mask(df, mask(Junction::kBnFfn));
  Matrix df_pre = batch_norm_backward(model.bn_ffn, c.bn_ffn, c.mode, df, g.bn_ffn);
  apply_mask(df_pre, mask(Junction::kAddFfn));

  // Residual: df_pre flows to both ffn_out and a.
  Matrix d_ffn_out = df_pre;
  apply_mask(d_ffn_out, mask(Junction::kFfnOut));
  Matrix dh;
  linear_backward(c.h, c.ffn2_w, d_ffn_out, g.ffn2, pm[12], pm[13], &dh);
  apply_mask(dh, mask(Junction::kFfnHidden));
  Matrix da;
  linear_backward(c.a, c.ffn1_w, dh, g.ffn1, pm[10], pm[11], &da);
  for (std::size_t i = 0; i < da.size(); ++i) da[i] += df_pre[i];
  apply_mask(da, mask(Junction::kBnMha));
  Matrix da_pre = batch_norm_backward(model.bn_mha, c.bn_mha, c.mode, da, g.bn_mha);
  apply_mask(da_pre, mask(Junction::kAddMha));

  Matrix d_mha_out = da_pre;
  apply_mask(d_mha_out, mask(Junction::kMhaOut));
  Matrix d_context;
  linear_backward(c.context, c.wo_w, d_mha_out, g.wo, pm[8], pm[9], &d_context);
  apply_mask(d_context, mask(Junction::kContext));

  // Attention per window. The softmax Jacobian uses the float probabilities.
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix dq(batch * n, d);
  Matrix dk(batch * n, d);
  Matrix dv(batch * n, d);
  Matrix dp(n, n);
  Matrix ds(n, n);
  const auto& s_mask = mask(Junction::kScores);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t o = b * n;
    for (std::size_t i = 0; i < n; ++i) {
      const auto dci = d_context.row(o + i);
      for (std::size_t j = 0; j < n; ++j) {
        const auto vj = c.v.row(o + j);
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) s += dci[t] * vj[t];
        dp(i, j) = s;
        const double p = c.probs_used(o + i, j);
        auto dvj = dv.row(o + j);
        for (std::size_t t = 0; t < d; ++t) dvj[t] += p * dci[t];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dp(i, j) * c.probs(o + i, j);
      for (std::size_t j = 0; j < n; ++j) {
        ds(i, j) = c.probs(o + i, j) * (dp(i, j) - dot) * inv_sqrt_d;
        if (!s_mask.empty() && !s_mask[(o + i) * n + j]) ds(i, j) = 0.0;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto dqi = dq.row(o + i);
      const auto qi = c.q.row(o + i);
      for (std::size_t j = 0; j < n; ++j) {
        const double s = ds(i, j);
        if (s == 0.0) continue;
        const auto kj = c.k.row(o + j);
        auto dkj = dk.row(o + j);
        for (std::size_t t = 0; t < d; ++t) {
          dqi[t] += s * kj[t];
          dkj[t] += s * qi[t];
        }
      }
    }
  }
  apply_mask(dq, mask(Junction::kQuery));
  apply_mask(dk, mask(Junction::kKey));
  apply_mask(dv, mask(Junction::kValue));

  Matrix d_embed = da_pre;
  Matrix tmp;
  linear_backward(c.embed, c.wq_w, dq, g.wq, pm[2], pm[3], &tmp);
  for (std::size_t i = 0; i < tmp.size(); ++i) d_embed[i] += tmp[i];
  linear_backward(c.embed, c.wk_w, dk, g.wk, pm[4], pm[5], &tmp);
  for (std::size_t i = 0; i < tmp.size(); ++i) d_embed[i] += tmp[i];
  linear_backward(c.embed, c.wv_w, dv, g.wv, pm[6], pm[7], &tmp);
  for (std::size_t i = 0; i < tmp.size(); ++i) d_embed[i] += tmp[i];
  apply_mask(d_embed, mask(Junction::kAddPe));
  apply_mask(d_embed, mask(Junction::kLInput));
  linear_backward(c.x, c.l_input_w, d_embed, g.l_input, pm[0], pm[1], nullptr);
  return g;
}

}  // namespace mpq
