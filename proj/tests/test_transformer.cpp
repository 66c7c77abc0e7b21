#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mpq/quantized_model.hpp"
#include "mpq/transformer.hpp"
#include "support.hpp"

using namespace mpq;
using mpq::test::kind_of;
using mpq::test::perturb;
using mpq::test::random_matrix;

namespace {

using Grid = std::vector<std::vector<double>>;

Grid to_grid(const Matrix& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) g[r][c] = m(r, c);
  return g;
}

Grid linear(const Grid& x, const LinearParams& p) {
  Grid y(x.size(), std::vector<double>(p.weight.cols()));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t o = 0; o < p.weight.cols(); ++o) {
      double s = p.bias(0, o);
      for (std::size_t i = 0; i < x[r].size(); ++i) s += x[r][i] * p.weight(i, o);
      y[r][o] = s;
    }
  return y;
}

Grid add(const Grid& a, const Grid& b) {
  Grid y = a;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[r].size(); ++c) y[r][c] += b[r][c];
  return y;
}

Grid batch_norm(const Grid& x, const BatchNormParams& bn, bool folded) {
  Grid y = x;
  const auto f = fold_batch_norm(bn);
  for (auto& row : y)
    for (std::size_t c = 0; c < row.size(); ++c) {
      row[c] = folded ? row[c] * f.scale(0, c) + f.shift(0, c)
                      : bn.gamma(0, c) * (row[c] - bn.running_mean(0, c)) /
                                std::sqrt(bn.running_var(0, c) + kBatchNormEps) +
                            bn.beta(0, c);
    }
  return y;
}

// One window, EVAL mode, written without any of the library's kernels.
double reference_forward(const FloatModel& m, const Matrix& window, bool fold = false) {
  const std::size_t n = m.config.seq_len, d = m.config.d_model;
  const Grid embed = add(linear(to_grid(window), m.l_input), to_grid(m.pe));
  const Grid q = linear(embed, m.wq), k = linear(embed, m.wk), v = linear(embed, m.wv);
  Grid ctx(n, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) {
      s[j] = std::inner_product(q[i].begin(), q[i].end(), k[j].begin(), 0.0) / std::sqrt(double(d));
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < d; ++t) ctx[i][t] += s[j] / z * v[j][t];
  }
  const Grid a = batch_norm(add(embed, linear(ctx, m.wo)), m.bn_mha, fold);
  Grid h = linear(a, m.ffn1);
  for (auto& row : h)
    for (auto& e : row) e = std::max(e, 0.0);
  const Grid f = batch_norm(add(a, linear(h, m.ffn2)), m.bn_ffn, fold);
  Grid g(1, std::vector<double>(d, 0.0));
  for (const auto& row : f)
    for (std::size_t t = 0; t < d; ++t) g[0][t] += row[t] / double(n);
  return linear(g, m.l_output)[0][0];
}

FloatModel make_model(std::size_t n, std::size_t m, std::size_t d, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.seq_len = n;
  cfg.input_dim = m;
  cfg.d_model = d;
  auto model = init_model(cfg, seed);
  std::mt19937_64 rng(seed + 1000);
  perturb(model, rng);
  return model;
}

std::vector<Matrix> windows(std::size_t count, std::size_t n, std::size_t m, std::mt19937_64& rng) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_matrix(n, m, rng, 0.0, 1.0));
  return out;
}

}  // namespace

TEST_CASE("init shapes and determinism") {
  ModelConfig cfg;
  cfg.input_dim = 5;
  const auto a = init_model(cfg, 3);
  const auto b = init_model(cfg, 3);
  CHECK(a.l_input.weight.rows() == 5);
  CHECK(a.l_input.weight.cols() == 64);
  CHECK(a.ffn1.weight.cols() == 256);
  std::vector<double> va, vb;
  a.for_each_tensor([&](std::string_view, const Matrix& t, FloatModel::Role) {
    va.insert(va.end(), t.values().begin(), t.values().end());
  });
  b.for_each_tensor([&](std::string_view, const Matrix& t, FloatModel::Role) {
    vb.insert(vb.end(), t.values().begin(), t.values().end());
  });
  CHECK(std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) == 0);
  CHECK_FALSE(init_model(cfg, 4).wq.weight == a.wq.weight);
  // Identity batch norm at init.
  const auto f = fold_batch_norm(a.bn_mha);
  for (std::size_t c = 0; c < 64; ++c) CHECK(f.scale(0, c) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(positional_encoding(4, 4)(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(positional_encoding(4, 4)(1, 1) == doctest::Approx(std::cos(1.0)));
}

TEST_CASE("float forward matches the reference implementation") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto model = make_model(12, 5, 8, trial);
    const auto ws = windows(4, 12, 5, rng);
    const auto y = forward_float(model, stack_windows(ws), ForwardMode::kEval).y;
    for (std::size_t i = 0; i < ws.size(); ++i) {
      const double ref = reference_forward(model, ws[i]);
      REQUIRE(std::abs(y(i, 0) - ref) <= 1e-6 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST_CASE("folded batch norm is equivalent") {
  std::mt19937_64 rng(37);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto model = make_model(6, 3, 8, 100 + trial);
    for (const auto& w : windows(5, 6, 3, rng)) {
      worst = std::max(worst, std::abs(reference_forward(model, w, true) - reference_forward(model, w, false)));
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("zero model outputs its bias") {
  ModelConfig cfg;
  cfg.seq_len = 6;
  cfg.input_dim = 2;
  cfg.d_model = 4;
  auto model = FloatModel::zeros(cfg);
  CHECK(forward_float(model, Matrix(6, 2), ForwardMode::kEval).y(0, 0) == 0.0);
  model.l_output.bias(0, 0) = 0.37;
  std::mt19937_64 rng(1);
  CHECK(forward_float(model, random_matrix(6, 2, rng), ForwardMode::kEval).y(0, 0) == doctest::Approx(0.37));

  // Calibration on a single constant input still gives a usable model. With
  // all-zero weights the bias grid has scale 1, so the bias itself rounds.
  const auto qm = quantize_model(model, BitwidthCombination::uniform(8), std::vector<Matrix>{Matrix(6, 2)});
  const auto y = forward_integer(qm, quantize_input(qm, Matrix(6, 2)));
  const double bias = dequantize(qm.l_output.bias)[0];
  CHECK(std::abs(y(0, 0) - bias) <= qm.params(Junction::kLOutput).scale / 2);

  model.l_output.bias(0, 0) = 3.0;
  const auto q3 = quantize_model(model, BitwidthCombination::uniform(8), std::vector<Matrix>{Matrix(6, 2)});
  CHECK(forward_integer(q3, quantize_input(q3, Matrix(6, 2)))(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("attention without positions is permutation invariant") {
  ModelConfig cfg;
  cfg.seq_len = 5;
  cfg.input_dim = 3;
  cfg.d_model = 6;
  auto model = init_model(cfg, 8);
  model.pe = Matrix(5, 6);
  for (auto* l : {&model.wq, &model.wk}) l->weight = Matrix(6, 6);
  std::mt19937_64 rng(2);
  const auto x = random_matrix(5, 3, rng);
  Matrix shuffled(5, 3);
  const std::size_t perm[] = {3, 0, 4, 1, 2};
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) shuffled(r, c) = x(perm[r], c);
  const auto a = forward_float(model, x, ForwardMode::kEval);
  const auto b = forward_float(model, shuffled, ForwardMode::kEval);
  for (std::size_t t = 0; t < 6; ++t) CHECK(a.cache.g(0, t) == doctest::Approx(b.cache.g(0, t)).epsilon(1e-12));
}

TEST_CASE("fake quantization disabled is the float forward") {
  std::mt19937_64 rng(5);
  const auto model = make_model(12, 3, 16, 5);
  const auto x = stack_windows(windows(8, 12, 3, rng));
  for (auto mode : {ForwardMode::kEval, ForwardMode::kTrain}) {
    const auto a = forward_float(model, x, mode).y;
    const auto b = forward_with(model, x, mode, FakeQuantOptions{}).y;
    CHECK(a == b);
  }
}

TEST_CASE("fake quantization error shrinks with width") {
  std::mt19937_64 rng(41);
  const auto model = make_model(12, 3, 16, 41);
  const auto calib = windows(64, 12, 3, rng);
  const auto test_ws = windows(100, 12, 3, rng);
  const auto x = stack_windows(test_ws);
  const auto yf = forward_float(model, x, ForwardMode::kEval).y;
  double spread = 0;
  for (std::size_t i = 0; i < yf.rows(); ++i) spread = std::max(spread, std::abs(yf(i, 0)));

  auto error = [&](int bits) {
    const auto qm = quantize_model(model, BitwidthCombination::uniform(bits), calib);
    const auto y = forward_fake_quant(model, qm.plan, qm.calibration(), x).y;
    double sum = 0, worst = 0;
    for (std::size_t i = 0; i < y.rows(); ++i) {
      sum += std::abs(y(i, 0) - yf(i, 0));
      worst = std::max(worst, std::abs(y(i, 0) - yf(i, 0)));
    }
    return std::pair{sum / y.rows(), worst};
  };
  const auto [mean8, worst8] = error(8);
  const auto [mean6, worst6] = error(6);
  const auto [mean4, worst4] = error(4);
  CHECK(worst8 <= 0.05 * spread);
  CHECK(mean4 >= mean8);
  CHECK(mean6 >= mean8);
  (void)worst6;
  (void)worst4;
}

TEST_CASE("quantized tensor widths follow the combination") {
  std::mt19937_64 rng(3);
  const auto model = make_model(12, 3, 16, 3);
  const auto calib = windows(16, 12, 3, rng);
  const auto u8 = quantize_model(model, BitwidthCombination::uniform(8), calib);
  QuantizedModel::visit(u8, [](std::string_view name, const QuantizedTensor& t) {
    INFO(name);
    const bool bias = name.ends_with(".bias") || name.ends_with(".shift");
    CHECK(t.params.bitwidth == (bias ? 18 : 8));
  });
  for (const auto& p : u8.junctions) CHECK(p.bitwidth == 8);

  const auto mixed = quantize_model(model, BitwidthCombination::parse("8,8,6,8,6,4,8,8,8,8"), calib);
  CHECK(mixed.ffn1.weight.params.bitwidth == 4);
  CHECK(mixed.ffn2.weight.params.bitwidth == 4);
  CHECK(mixed.params(Junction::kFfnHidden).bitwidth == 4);
  CHECK_FALSE(mixed.params(Junction::kFfnHidden).is_signed);
  CHECK(mixed.params(Junction::kFfnOut).bitwidth == 4);
  CHECK(mixed.ffn1.bias.params.bitwidth == 6 + 4 + 2);
  CHECK(mixed.wq.weight.params.bitwidth == 6);
  CHECK(mixed.bn_mha.scale.params.bitwidth == 6);
}

TEST_CASE("integer path matches fake quantization within one output LSB") {
  std::mt19937_64 rng(7);
  int worst = 0;
  int cases = 0;
  double moved = 0;
  for (int mi = 0; mi < 60; ++mi) {
    const auto model = make_model(12, 3, 16, mi);
    const auto combo = test::random_combo(rng);
    const auto qm = quantize_model(model, combo, windows(64, 12, 3, rng));
    const auto calib = qm.calibration();
    const double lsb = qm.params(Junction::kLOutput).scale;
    for (const auto& w : windows(20, 12, 3, rng)) {
      const auto yi = forward_integer(qm, quantize_input(qm, w))(0, 0);
      const auto yf = forward_fake_quant(model, qm.plan, calib, w).y(0, 0);
      worst = std::max(worst, static_cast<int>(std::lround(std::abs(yi - yf) / lsb)));
      moved = std::max(moved, std::abs(yi));
      ++cases;
    }
  }
  CHECK(cases >= 1000);
  CHECK(worst <= 1);
  CHECK(moved > 0.0);
}

TEST_CASE("integer path is deterministic across runs and threads") {
  std::mt19937_64 rng(13);
  const auto model = make_model(12, 3, 16, 13);
  const auto qm = quantize_model(model, BitwidthCombination::parse("6,8,6,8,6,6,8,8,8,8"), windows(32, 12, 3, rng));
  const auto xq = quantize_input(qm, stack_windows(windows(37, 12, 3, rng)));
  const auto ref = forward_integer(qm, xq, 1);
  for (std::size_t threads : {1, 2, 3, 8}) {
    const auto y = forward_integer(qm, xq, threads);
    CHECK(std::memcmp(y.values().data(), ref.values().data(), ref.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("shape and calibration errors") {
  const auto model = make_model(12, 3, 8, 1);
  CHECK(kind_of([&] { forward_float(model, Matrix(11, 3), ForwardMode::kEval); }) == ErrorKind::kValidation);
  CHECK(kind_of([&] { forward_float(model, Matrix(12, 4), ForwardMode::kEval); }) == ErrorKind::kValidation);
  const auto plan = plan_cascade(BitwidthCombination::uniform(8));
  CHECK(kind_of([&] { forward_fake_quant(model, plan, Calibration{}, Matrix(12, 3)); }) == ErrorKind::kValidation);
  ModelConfig bad;
  bad.d_model = 0;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::kValidation);
}
