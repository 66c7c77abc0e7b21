#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "mpq/bitwidth_search.hpp"
#include "mpq/resource_estimator.hpp"
#include "support.hpp"

using namespace mpq;
using mpq::test::bundled;
using mpq::test::kind_of;

namespace {

Thresholds lut_limit(const char* luts) {
  Thresholds t;
  t.luts = Tenths::parse(luts);
  return t;
}

// Predicate written out per resource, independent of Thresholds::admits.
bool passes(const ResourceVector& v, const Thresholds& t) {
  return v[ResourceKind::kLuts].raw() <= t.luts.raw() && v[ResourceKind::kDram].raw() <= t.dram.raw() &&
         v[ResourceKind::kBram].raw() <= t.bram.raw() && v[ResourceKind::kDsps].raw() <= t.dsps.raw();
}

}  // namespace

TEST_CASE("enumeration order and size") {
  const auto all = enumerate_all();
  REQUIRE(all.size() == 59049);
  CHECK(all[0] == BitwidthCombination::uniform(4));
  CHECK(all[all.size() - 1] == BitwidthCombination::uniform(8));
  CHECK(all[1].to_string() == "4,4,4,4,4,4,4,4,4,6");
  CHECK(std::is_sorted(all.combos().begin(), all.combos().end()));
  CHECK(kind_of([&] { CandidateSet({all[0], all[0]}); }) == ErrorKind::kValidation);
}

TEST_CASE("sweep survivor counts and reductions") {
  struct Case {
    int n;
    std::size_t passed;
    double expected;
  };
  for (const auto& c : {Case{12, test::kPassedN12, 69.3}, Case{18, test::kPassedN18, 98.5},
                        Case{24, test::kPassedN24, 99.7}}) {
    const auto start = std::chrono::steady_clock::now();
    const auto r = search(bundled(), c.n, lut_limit("80"), 5);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    INFO("n=" << c.n);
    CHECK(r.total_count == 59049);
    CHECK(r.filtered_count == c.passed);
    CHECK(std::abs(r.reduction_tenths().to_double() - c.expected) <= 0.5);
    CHECK(secs < 10.0);
  }
}

TEST_CASE("n=12 top five") {
  const auto r = search(bundled(), 12, lut_limit("80"), 5);
  REQUIRE(r.selected.size() == 5);
  const char* expected[] = {"6,8,6,8,8,6,8,6,8,8", "6,8,6,8,6,6,8,8,8,8", "8,8,6,8,8,4,8,6,8,8",
                            "8,8,6,8,6,4,8,8,8,8", "8,8,4,8,8,6,8,6,8,8"};
  const char* luts[] = {"80.0", "79.9", "78.0", "77.9", "76.7"};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(r.selected[i].score == 72);
    CHECK(r.selected[i].combo.to_string() == expected[i]);
    CHECK(r.selected[i].estimate.luts() == Tenths::parse(luts[i]));
    if (i > 0) CHECK(r.selected[i - 1].estimate.luts() >= r.selected[i].estimate.luts());
  }
  CHECK(std::abs(r.selected[0].estimate.luts().to_double() - 80.0) <= 0.5);

  // Four of the five reference combinations are in the brute-forced set.
  std::set<std::string> ours;
  for (const auto& c : r.selected) ours.insert(c.combo.to_string());
  int shared = 0;
  for (const auto& row : test::kReferenceTop5) shared += row.n == 12 && ours.count(row.combo);
  CHECK(shared == 4);
}

TEST_CASE("top one is the brute-force maximum") {
  const auto& db = bundled();
  const auto top = search(db, 12, lut_limit("80"), 1);
  REQUIRE(top.selected.size() == 1);
  std::optional<ScoredCandidate> best;
  const auto all = enumerate_all();
  for (const auto& c : all.combos()) {
    const auto e = estimate(db, 12, c);
    if (!passes(e, lut_limit("80"))) continue;
    const ScoredCandidate s{c, e, c.sum()};
    if (!best || s.score > best->score || (s.score == best->score && e.luts() > best->estimate.luts()) ||
        (s.score == best->score && e.luts() == best->estimate.luts() && c < best->combo)) {
      best = s;
    }
  }
  CHECK(top.selected[0] == *best);
}

TEST_CASE("filter soundness, completeness and monotonicity") {
  const auto& db = bundled();
  std::mt19937_64 rng(9);
  const auto all = enumerate_all();
  std::vector<BitwidthCombination> sample;
  std::set<std::size_t> picked;
  while (picked.size() < 1000) picked.insert(rng() % all.size());
  for (auto i : picked) sample.push_back(all[i]);
  const CandidateSet subset(sample);

  Thresholds t;
  t.luts = Tenths::parse("78.5");
  t.dram = Tenths::parse("70.0");
  t.bram = Tenths::parse("95.0");
  t.dsps = Tenths::parse("100.0");
  const auto kept = filter(db, 12, subset, t);
  std::vector<BitwidthCombination> expected;
  for (const auto& c : sample)
    if (passes(estimate(db, 12, c), t)) expected.push_back(c);
  REQUIRE(kept.size() == expected.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    CHECK(kept[i].combo == expected[i]);
    CHECK(kept[i].score == expected[i].sum());
    CHECK(passes(estimate(db, 12, kept[i].combo), t));
  }

  auto looser = t;
  looser.dram = Tenths::parse("80.0");
  const auto more = filter(db, 12, subset, looser);
  std::set<BitwidthCombination> more_set;
  for (const auto& c : more) more_set.insert(c.combo);
  for (const auto& c : kept) CHECK(more_set.count(c.combo) == 1);
}

TEST_CASE("select_top ordering and stability") {
  const auto& db = bundled();
  auto kept = filter(db, 12, enumerate_all(), lut_limit("80"));
  const auto a = select_top(kept, 25, 59049);
  std::mt19937_64 rng(1);
  std::shuffle(kept.begin(), kept.end(), rng);
  const auto b = select_top(kept, 25, 59049);
  CHECK(a.selected == b.selected);
  CHECK(kind_of([&] { select_top(kept, 0, 59049); }) == ErrorKind::kUsage);

  const auto lo = BitwidthCombination::parse("4,4,4,8,8,8,8,8,8,8");
  const auto hi = BitwidthCombination::parse("8,8,8,8,8,8,8,8,4,6");
  std::vector<ScoredCandidate> two{{lo, {}, 70}, {hi, {}, 72}};
  CHECK(select_top(two, 1, 2).selected[0].combo == hi);
}

TEST_CASE("parallel sweep equals sequential") {
  SearchOptions seq;
  seq.threads = 1;
  SearchOptions par;
  par.threads = 4;
  const auto a = search(bundled(), 18, lut_limit("80"), 50, nullptr, seq);
  const auto b = search(bundled(), 18, lut_limit("80"), 50, nullptr, par);
  CHECK(a.selected == b.selected);
  CHECK(a.filtered_count == b.filtered_count);
}

TEST_CASE("edge thresholds") {
  Thresholds zero;
  zero.luts = zero.dram = zero.bram = zero.dsps = Tenths::parse("0");
  const auto none = search(bundled(), 12, zero, 5);
  CHECK(none.selected.empty());
  CHECK(none.filtered_count == 0);
  CHECK(none.reduction_tenths() == Tenths::parse("100.0"));

  const CandidateSet only({BitwidthCombination::uniform(4)});
  const auto one = search(bundled(), 12, lut_limit("60"), 5, &only);
  REQUIRE(one.selected.size() == 1);
  CHECK(one.selected[0].score == 40);
  CHECK(one.selected[0].estimate.luts() == Tenths::parse("54.6"));

  Thresholds negative;
  negative.luts = Tenths::parse("-1");
  CHECK(kind_of([&] { negative.validate(); }) == ErrorKind::kValidation);
}

TEST_CASE("candidate files and histogram") {
  const auto set = parse_candidates("# subset\n6,8,6,8,6,6,8,8,8,8\n\n8,8,8,8,8,8,8,8,8,8\n");
  REQUIRE(set.size() == 2);
  CHECK(kind_of([] { parse_candidates("6,8\n"); }) == ErrorKind::kValidation);

  const auto kept = filter(bundled(), 12, enumerate_all(), lut_limit("80"));
  const auto bins = histogram(kept, ResourceKind::kLuts, 20);
  REQUIRE(bins.size() == 20);
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  CHECK(total == kept.size());
  CHECK(bins.back().upper == doctest::Approx(80.0));
  CHECK(histogram(std::vector<ScoredCandidate>{}, ResourceKind::kLuts, 5).empty());
}
