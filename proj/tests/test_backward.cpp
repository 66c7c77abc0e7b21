#include <cmath>
#include <random>
#include <string>

#include "doctest.h"
#include "mpq/backward.hpp"
#include "support.hpp"

using namespace mpq;
using mpq::test::perturb;
using mpq::test::random_matrix;

namespace {

FloatModel tiny_model(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.seq_len = 4;
  cfg.input_dim = 2;
  cfg.d_model = 4;
  auto m = init_model(cfg, seed);
  std::mt19937_64 rng(seed);
  perturb(m, rng);
  return m;
}

double dot_loss(const Matrix& y, const Matrix& dy) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * dy[i];
  return s;
}

std::vector<Matrix*> tensors(FloatModel& m) {
  std::vector<Matrix*> out;
  m.for_each_tensor([&](std::string_view, Matrix& t, FloatModel::Role) { out.push_back(&t); });
  return out;
}

std::vector<std::string> names(const FloatModel& m) {
  std::vector<std::string> out;
  m.for_each_tensor([&](std::string_view n, const Matrix&, FloatModel::Role) { out.emplace_back(n); });
  return out;
}

std::vector<FloatModel::Role> roles(const FloatModel& m) {
  std::vector<FloatModel::Role> out;
  m.for_each_tensor([&](std::string_view, const Matrix&, FloatModel::Role r) { out.push_back(r); });
  return out;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4}); }

}  // namespace

TEST_CASE("analytic gradients match central differences") {
  auto model = tiny_model(11);
  std::mt19937_64 rng(3);
  const auto x = random_matrix(12, 2, rng);
  const auto dy = random_matrix(3, 1, rng);
  const auto role = roles(model);
  const auto name = names(model);
  for (auto mode : {ForwardMode::kTrain, ForwardMode::kEval}) {
    auto grad_model = backward(model, forward_float(model, x, mode).cache, dy);
    auto grads = tensors(grad_model);
    auto params = tensors(model);
    for (std::size_t t = 0; t < params.size(); ++t) {
      if (role[t] != FloatModel::Role::kTrainable) {
        for (std::size_t i = 0; i < grads[t]->size(); ++i) CHECK((*grads[t])[i] == 0.0);
        continue;
      }
      double worst = 0;
      for (std::size_t i = 0; i < params[t]->size(); ++i) {
        auto& p = (*params[t])[i];
        const double orig = p;
        const double h = 1e-4;
        p = orig + h;
        const double up = dot_loss(forward_float(model, x, mode).y, dy);
        p = orig - h;
        const double down = dot_loss(forward_float(model, x, mode).y, dy);
        p = orig;
        worst = std::max(worst, rel_err((up - down) / (2 * h), (*grads[t])[i]));
      }
      INFO(name[t] << (mode == ForwardMode::kTrain ? " train" : " eval"));
      CHECK(worst <= 1e-3);
    }
  }
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  const auto model = tiny_model(2);
  std::mt19937_64 rng(4);
  const auto x = random_matrix(8, 2, rng);
  auto g = backward(model, forward_float(model, x, ForwardMode::kTrain).cache, Matrix(2, 1));
  for (auto* t : tensors(g))
    for (std::size_t i = 0; i < t->size(); ++i) REQUIRE((*t)[i] == 0.0);
}

TEST_CASE("duplicated examples double their contribution") {
  const auto model = tiny_model(5);
  std::mt19937_64 rng(6);
  const auto w = random_matrix(4, 2, rng);
  auto one = backward(model, forward_float(model, w, ForwardMode::kEval).cache, Matrix(1, 1, 0.7));
  auto two = backward(model, forward_float(model, stack_windows({w, w}), ForwardMode::kEval).cache,
                            Matrix(2, 1, 0.7));
  auto a = tensors(one);
  auto b = tensors(two);
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t]->size(); ++i)
      REQUIRE((*b[t])[i] == doctest::Approx(2 * (*a[t])[i]).epsilon(1e-9));
}

TEST_CASE("straight-through gradients match the dequantized surrogate") {
  auto model = tiny_model(21);
  std::mt19937_64 rng(8);
  const auto x = random_matrix(12, 2, rng);
  const auto dy = random_matrix(3, 1, rng);
  const auto plan = plan_cascade(BitwidthCombination::parse("6,8,4,8,6,6,8,8,8,4"));
  FakeQuantOptions opts;
  opts.plan = &plan;

  for (auto mode : {ForwardMode::kTrain, ForwardMode::kEval}) {
    opts.fold_batch_norm = false;
    const auto fwd = forward_with(model, x, mode, opts);
    const auto g = backward(model, fwd.cache, dy);

    // Surrogate: a float model holding the fake-quantized tensors.
    FloatModel sur = model;
    const auto& c = fwd.cache;
    sur.l_input = c.l_input_w;
    sur.wq = c.wq_w;
    sur.wk = c.wk_w;
    sur.wv = c.wv_w;
    sur.wo = c.wo_w;
    sur.ffn1 = c.ffn1_w;
    sur.ffn2 = c.ffn2_w;
    sur.l_output = c.l_output_w;
    const auto pe_p = calibrate_asymmetric(model.pe.values(), plan.combo[ComponentId::kAddPe], true);
    for (auto& v : sur.pe.values()) v = fake_quantize_value(v, pe_p);
    REQUIRE(forward_float(sur, x, mode).y == fwd.y);

    LinearParams* sur_layers[] = {&sur.l_input, &sur.wq, &sur.wk, &sur.wv,
                                  &sur.wo,      &sur.ffn1, &sur.ffn2, &sur.l_output};
    const LinearParams* grad_layers[] = {&g.l_input, &g.wq, &g.wk, &g.wv, &g.wo, &g.ffn1, &g.ffn2, &g.l_output};
    double worst = 0;
    int checked = 0;
    for (std::size_t l = 0; l < 8; ++l) {
      for (int part = 0; part < 2; ++part) {
        Matrix& p = part == 0 ? sur_layers[l]->weight : sur_layers[l]->bias;
        const Matrix& gp = part == 0 ? grad_layers[l]->weight : grad_layers[l]->bias;
        const auto& mask = c.param_masks[2 * l + part];
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (!mask.empty() && !mask[i]) continue;
          const double orig = p[i];
          const double h = 1e-5;
          p[i] = orig + h;
          const double up = dot_loss(forward_float(sur, x, mode).y, dy);
          p[i] = orig - h;
          const double down = dot_loss(forward_float(sur, x, mode).y, dy);
          p[i] = orig;
          worst = std::max(worst, rel_err((up - down) / (2 * h), gp[i]));
          ++checked;
        }
      }
    }
    CHECK(checked > 100);
    CHECK(worst <= 1e-2);
  }
}
