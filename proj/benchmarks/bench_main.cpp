#include <benchmark/benchmark.h>

#include <random>

#include "mpq/bitwidth_search.hpp"
#include "mpq/quantized_model.hpp"
#include "mpq/resource_estimator.hpp"

namespace {

const mpq::KnowledgeDatabase& db() {
  static const auto d = mpq::load_database(mpq::bundled_database_path());
  return d;
}

void BM_Estimate(benchmark::State& state) {
  const auto combo = mpq::BitwidthCombination::parse("8,8,6,8,6,4,8,8,8,8");
  for (auto _ : state) benchmark::DoNotOptimize(mpq::estimate(db(), 12, combo));
}
BENCHMARK(BM_Estimate);

void BM_FullSweep(benchmark::State& state) {
  mpq::Thresholds t;
  t.luts = mpq::Tenths::parse("80");
  mpq::SearchOptions opts;
  opts.threads = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(mpq::search(db(), static_cast<int>(state.range(0)), t, 5, nullptr, opts));
}
BENCHMARK(BM_FullSweep)->Args({12, 1})->Args({24, 1})->Args({12, 4})->Unit(benchmark::kMillisecond);

std::vector<mpq::Matrix> windows(std::size_t count, std::size_t n, std::size_t m) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<mpq::Matrix> out;
  for (std::size_t i = 0; i < count; ++i) {
    mpq::Matrix w(n, m);
    for (auto& v : w.values()) v = u(rng);
    out.push_back(std::move(w));
  }
  return out;
}

void BM_IntegerForward(benchmark::State& state) {
  mpq::ModelConfig cfg;
  cfg.seq_len = 12;
  cfg.input_dim = 3;
  cfg.d_model = static_cast<std::size_t>(state.range(0));
  const auto model = mpq::init_model(cfg, 1);
  const auto ws = windows(64, cfg.seq_len, cfg.input_dim);
  const auto qm = mpq::quantize_model(model, mpq::BitwidthCombination::parse("6,8,6,8,6,6,8,8,8,8"), ws);
  const auto xq = mpq::quantize_input(qm, mpq::stack_windows(ws));
  for (auto _ : state) benchmark::DoNotOptimize(mpq::forward_integer(qm, xq));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ws.size()));
}
BENCHMARK(BM_IntegerForward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_FloatForward(benchmark::State& state) {
  mpq::ModelConfig cfg;
  cfg.seq_len = 12;
  cfg.input_dim = 3;
  cfg.d_model = static_cast<std::size_t>(state.range(0));
  const auto model = mpq::init_model(cfg, 1);
  const auto x = mpq::stack_windows(windows(64, cfg.seq_len, cfg.input_dim));
  for (auto _ : state) benchmark::DoNotOptimize(mpq::forward_float(model, x, mpq::ForwardMode::kEval));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_FloatForward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
