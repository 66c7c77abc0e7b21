#include <cmath>
#include <random>

#include "doctest.h"
#include "mpq/resource_estimator.hpp"
#include "support.hpp"

using namespace mpq;
using mpq::test::bundled;
using mpq::test::kind_of;

namespace {

// Straight sum over lookup(), independent of the table fast path.
double oracle(int n, const BitwidthCombination& c, ResourceKind r, bool overhead, int overhead_bits) {
  double sum = 0;
  for (std::size_t i = 0; i < kKeyComponentCount; ++i) {
    sum += bundled().lookup(n, component_at(i), r, c[i]).to_double();
  }
  if (overhead) {
    for (std::size_t i = kKeyComponentCount; i < kComponentCount; ++i) {
      sum += bundled().lookup(n, component_at(i), r, overhead_bits).to_double();
    }
  }
  return sum;
}

}  // namespace

TEST_CASE("reference top-5 rows match within half a point") {
  for (const auto& row : test::kReferenceTop5) {
    const auto est = estimate(bundled(), row.n, BitwidthCombination::parse(row.combo));
    for (std::size_t r = 0; r < kResourceCount; ++r) {
      if (row.n == 18 && kAllResources[r] == ResourceKind::kDsps) continue;  // see next case
      INFO(row.n << " " << row.combo << " " << name_of(kAllResources[r]));
      CHECK(std::abs(est.values[r].to_double() - row.estimate[r]) <= 0.5);
    }
  }
}

TEST_CASE("n=18 DSP column follows the stored table") {
  // The table gives MHA 0.0 DSPs at 4 bits for n=18, so these sums land 30
  // points below the reference 70/75.
  const auto est = estimate(bundled(), 18, BitwidthCombination::parse("8,4,4,4,4,4,8,4,8,8"));
  CHECK(est.dsps() == Tenths::parse("45.0"));
  CHECK(bundled().lookup(18, ComponentId::kMha, ResourceKind::kDsps, 4) == Tenths::parse("0.0"));
}

TEST_CASE("documented estimates") {
  auto e = estimate(bundled(), 12, BitwidthCombination::parse("6,8,6,8,6,6,8,8,8,8"));
  CHECK(e.luts() == Tenths::parse("79.9"));
  CHECK(e.dram() == Tenths::parse("78.5"));
  CHECK(e.bram() == Tenths::parse("100.0"));
  CHECK(e.dsps() == Tenths::parse("100.0"));
  e = estimate(bundled(), 12, BitwidthCombination::parse("8,8,6,8,8,4,8,6,8,8"));
  CHECK(e.luts() == Tenths::parse("78.0"));
  CHECK(e.bram() == Tenths::parse("85.0"));
  e = estimate(bundled(), 12, BitwidthCombination::parse("8,8,6,8,6,4,8,8,8,8"));
  CHECK(e.luts() == Tenths::parse("77.9"));
}

TEST_CASE("uniform estimates") {
  const EstimateOptions with{true, OverheadPolicy::kMaxBitwidth};
  CHECK(estimate_uniform(bundled(), 12, 4, with).luts() == Tenths::parse("57.3"));
  CHECK(std::abs(estimate_uniform(bundled(), 12, 4, with).luts().to_double() - 57.2) <= 0.2);
  CHECK(estimate_uniform(bundled(), 12, 4).luts() == Tenths::parse("54.6"));
  CHECK(estimate_uniform(bundled(), 18, 8, with).bram() >= Tenths::parse("100.0"));
  CHECK(estimate_uniform(bundled(), 24, 6).dsps() == Tenths::parse("95.0"));
}

TEST_CASE("estimate agrees with the lookup oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = std::array{12, 18, 24}[rng() % 3];
    const auto combo = test::random_combo(rng);
    const bool overhead = rng() % 2;
    const auto est = estimate(bundled(), n, combo, {overhead, OverheadPolicy::kMaxBitwidth});
    for (auto r : kAllResources) {
      REQUIRE(std::abs(est[r].to_double() - oracle(n, combo, r, overhead, combo.max_bitwidth())) < 1e-9);
    }
  }
}

TEST_CASE("overhead policies") {
  const auto combo = BitwidthCombination::parse("4,4,4,4,4,4,8,8,6,6");
  const auto& db = bundled();
  const auto base = estimate(db, 12, combo);
  const auto mode = estimate(db, 12, combo, {true, OverheadPolicy::kModeBitwidth});
  const auto max = estimate(db, 12, combo, {true, OverheadPolicy::kMaxBitwidth});
  CHECK(mode - base == overhead_only(db, 12, BitwidthCombination::uniform(4), OverheadPolicy::kMaxBitwidth));
  CHECK(max - base == overhead_only(db, 12, BitwidthCombination::uniform(8), OverheadPolicy::kMaxBitwidth));
  const auto per = overhead_only(db, 12, combo, OverheadPolicy::kPerResourceMax);
  for (auto r : kAllResources) {
    Tenths best;
    for (int b : {4, 6, 8}) {
      Tenths sum;
      for (std::size_t i = kKeyComponentCount; i < kComponentCount; ++i) sum += db.lookup(12, component_at(i), r, b);
      best = std::max(best, sum);
    }
    CHECK(per[r] == best);
  }
  // Ties in the mode go to the larger width.
  const auto tie = BitwidthCombination::parse("4,4,4,4,4,6,6,6,6,6");
  CHECK(overhead_only(db, 12, tie, OverheadPolicy::kModeBitwidth) ==
        overhead_only(db, 12, BitwidthCombination::uniform(6), OverheadPolicy::kMaxBitwidth));
}

TEST_CASE("zero database and coverage") {
  KnowledgeDatabase::Table zeros{};
  KnowledgeDatabase db({{12, zeros}}, {});
  CHECK(estimate(db, 12, BitwidthCombination::uniform(8), {true}) == ResourceVector{});
  CHECK(kind_of([&] { estimate(db, 18, BitwidthCombination::uniform(8)); }) == ErrorKind::kCoverage);
}

TEST_CASE("combination parsing") {
  CHECK(BitwidthCombination::parse(" 6, 8,6,8,6,6,8,8,8,8 ").to_string() == "6,8,6,8,6,6,8,8,8,8");
  CHECK(BitwidthCombination::parse("6,8,6,8,6,6,8,8,8,8").sum() == 72);
  CHECK(kind_of([] { BitwidthCombination::parse("6,8,6"); }) == ErrorKind::kValidation);
  CHECK(kind_of([] { BitwidthCombination::parse("6,8,6,8,6,6,8,8,8,5"); }) == ErrorKind::kValidation);
  CHECK(Tenths::parse("78.05").raw() == 781);
  CHECK(Tenths::parse("0.0").to_string() == "0.0");
}
