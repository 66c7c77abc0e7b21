#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "mpq/knowledge_db.hpp"
#include "support.hpp"

using namespace mpq;
using mpq::test::bundled;
using mpq::test::kind_of;
using mpq::test::report_text;

namespace {

std::string constant_report(int n, int b, const char* value = "1.0") {
  return report_text(n, b, [&](ComponentId, ResourceKind) { return std::string(value); });
}

std::vector<SynthesisReport> full_set(int n, double base) {
  std::vector<SynthesisReport> out;
  for (int b : kBitwidths) {
    const std::string v = Tenths::from_raw(static_cast<std::int64_t>(base * 10) + b).to_string();
    out.push_back(parse_report(constant_report(n, b, v.c_str())));
  }
  return out;
}

}  // namespace

TEST_CASE("parse_report reads the MHA row") {
  const auto text = report_text(12, 4, [](ComponentId c, ResourceKind r) {
    if (c != ComponentId::kMha) return std::string("1.0");
    const char* row[] = {"30.8", "14.3", "15.0", "30.0"};
    return std::string(row[index_of(r)]);
  });
  const auto rep = parse_report(text);
  CHECK(rep.seq_len == 12);
  CHECK(rep.bitwidth == 4);
  CHECK(rep.entries[index_of(ComponentId::kMha)][ResourceKind::kLuts] == Tenths::parse("30.8"));
  CHECK(rep.entries[index_of(ComponentId::kMha)][ResourceKind::kDsps] == Tenths::parse("30.0"));
}

TEST_CASE("parse_report rejects incomplete, negative and malformed input") {
  const auto missing_gap =
      report_text(12, 4, [](ComponentId, ResourceKind) { return std::string("1.0"); }, {ComponentId::kGap});
  CHECK(kind_of([&] { parse_report(missing_gap); }) == ErrorKind::kSchema);
  CHECK(test::message_of([&] { parse_report(missing_gap); }).find("GAP") != std::string::npos);

  const auto negative = report_text(12, 4, [](ComponentId c, ResourceKind) {
    return std::string(c == ComponentId::kFfn ? "-1.0" : "1.0");
  });
  CHECK(kind_of([&] { parse_report(negative); }) == ErrorKind::kValidation);

  const auto too_big = report_text(12, 4, [](ComponentId, ResourceKind) { return std::string("200.0"); });
  CHECK(kind_of([&] { parse_report(too_big); }) == ErrorKind::kValidation);

  auto garbled = constant_report(12, 4);
  garbled.replace(garbled.find("MHA,1.0"), 7, "MHA,x.y");
  CHECK(kind_of([&] { parse_report(garbled); }) == ErrorKind::kParse);
  CHECK(test::message_of([&] { parse_report(garbled); }).find("line 5") != std::string::npos);

  auto duplicate = constant_report(12, 4) + "MHA,1.0,1.0,1.0,1.0\n";
  CHECK(kind_of([&] { parse_report(duplicate); }) == ErrorKind::kSchema);

  auto unknown = constant_report(12, 4) + "DECODER,1.0,1.0,1.0,1.0\n";
  CHECK(kind_of([&] { parse_report(unknown); }) == ErrorKind::kSchema);

  CHECK(kind_of([&] { parse_report(constant_report(12, 5)); }) == ErrorKind::kValidation);
  CHECK(kind_of([&] { parse_report(""); }) == ErrorKind::kParse);
}

TEST_CASE("aggregate takes per-entry medians") {
  auto reports = full_set(12, 1.0);
  reports.erase(reports.begin() + 1);
  const char* mha[] = {"30.1", "30.8", "30.8", "31.0", "34.9"};
  for (const char* v : mha) {
    reports.push_back(parse_report(report_text(12, 6, [&](ComponentId c, ResourceKind r) {
      return std::string(c == ComponentId::kMha && r == ResourceKind::kLuts ? v : "1.0");
    })));
  }
  auto db = aggregate(reports);
  CHECK(db.lookup(12, ComponentId::kMha, ResourceKind::kLuts, 6) == Tenths::parse("30.8"));

  std::vector<SynthesisReport> even = full_set(12, 1.0);
  even.push_back(parse_report(constant_report(12, 8, "1.0")));
  even.push_back(parse_report(constant_report(12, 8, "3.0")));
  even.erase(even.begin() + 2);
  db = aggregate(even);
  CHECK(db.lookup(12, ComponentId::kGap, ResourceKind::kBram, 8) == Tenths::parse("2.0"));

  // Mean of the middle pair rounds half away from zero.
  std::vector<SynthesisReport> odd_mid = full_set(12, 1.0);
  odd_mid.push_back(parse_report(constant_report(12, 4, "1.0")));
  odd_mid.push_back(parse_report(constant_report(12, 4, "1.1")));
  odd_mid.erase(odd_mid.begin());
  db = aggregate(odd_mid);
  CHECK(db.lookup(12, ComponentId::kGap, ResourceKind::kBram, 4) == Tenths::parse("1.1"));
}

TEST_CASE("aggregate reports missing cells and empty input") {
  CHECK(kind_of([] { aggregate(std::vector<SynthesisReport>{}); }) == ErrorKind::kValidation);
  auto partial = full_set(12, 1.0);
  partial.pop_back();
  const auto msg = test::message_of([&] { aggregate(partial); });
  CHECK(msg.find("n=12") != std::string::npos);
  CHECK(msg.find("b=8") != std::string::npos);
}

TEST_CASE("median aggregation is permutation invariant and bounded") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> tenths(0, 1999);
  std::uniform_int_distribution<int> count(1, 7);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<SynthesisReport> reports;
    std::vector<std::int64_t> values;
    const int k = count(rng);
    for (int b : kBitwidths) {
      const int copies = b == 6 ? k : 1;
      for (int i = 0; i < copies; ++i) {
        SynthesisReport rep;
        rep.seq_len = 12;
        rep.bitwidth = b;
        for (auto& e : rep.entries)
          for (auto& v : e.values) v = Tenths::from_raw(tenths(rng));
        if (b == 6) values.push_back(rep.entries[0].values[0].raw());
        reports.push_back(rep);
      }
    }
    const auto db = aggregate(reports);
    std::shuffle(reports.begin(), reports.end(), rng);
    const auto shuffled = aggregate(reports);
    REQUIRE(db == shuffled);
    const auto got = db.lookup(12, ComponentId::kLInput, ResourceKind::kLuts, 6).raw();
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    REQUIRE(got >= *lo);
    REQUIRE(got <= *hi);
  }
}

TEST_CASE("bundled table values") {
  const auto& db = bundled();
  CHECK(db.seq_lens() == std::vector<int>{12, 18, 24});
  CHECK(db.lookup(12, ComponentId::kFfn, ResourceKind::kBram, 4) == Tenths::parse("55.0"));
  CHECK(db.lookup(12, ComponentId::kMha, ResourceKind::kLuts, 6) == Tenths::parse("35.6"));
  CHECK(db.lookup(12, ComponentId::kMha, ResourceKind::kLuts, 4) == Tenths::parse("30.8"));
  CHECK(db.lookup(24, ComponentId::kFfn, ResourceKind::kBram, 8) == Tenths::parse("100.0"));
  CHECK(db.lookup(18, ComponentId::kOModel, ResourceKind::kDsps, 4) == Tenths::parse("0.0"));
  CHECK(db.lookup(18, ComponentId::kFfn, ResourceKind::kBram, 8) == Tenths::parse("100.0"));
  // Kept as transcribed, anomaly included.
  CHECK(db.lookup(12, ComponentId::kOMiddleware, ResourceKind::kDram, 8) == Tenths::parse("0.0"));
  CHECK(db.lookup(12, ComponentId::kOMiddleware, ResourceKind::kDram, 6) == Tenths::parse("0.7"));
}

TEST_CASE("lookup errors") {
  const auto& db = bundled();
  CHECK(kind_of([&] { db.lookup(13, ComponentId::kMha, ResourceKind::kLuts, 4); }) == ErrorKind::kCoverage);
  CHECK(test::message_of([&] { db.lookup(13, ComponentId::kMha, ResourceKind::kLuts, 4); }).find("12, 18, 24") !=
        std::string::npos);
  CHECK(kind_of([&] { db.lookup(12, ComponentId::kMha, ResourceKind::kLuts, 5); }) == ErrorKind::kValidation);
}

TEST_CASE("save and load round trip byte-identically") {
  const auto dir = std::filesystem::temp_directory_path() / "mpq_kb_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "kb.json";
  const auto db = aggregate(full_set(18, 2.5));
  save_database(db, path);
  const auto loaded = load_database(path);
  CHECK(loaded == db);
  CHECK(serialize_database(loaded) == serialize_database(db));
  CHECK(serialize_database(load_database(bundled_database_path())) ==
        serialize_database(parse_database(serialize_database(bundled()))));
  CHECK(loaded.metadata().report_counts.at(18).at(4) == 1);

  const auto text = serialize_database(db);
  CHECK(kind_of([&] { parse_database(text.substr(0, text.size() / 2)); }) == ErrorKind::kParse);
  auto wrong_version = text;
  wrong_version.replace(wrong_version.find("\"version\": 1"), 12, "\"version\": 9");
  CHECK(kind_of([&] { parse_database(wrong_version); }) == ErrorKind::kVersion);
  CHECK(kind_of([&] { parse_database("{\"version\": 1}"); }) == ErrorKind::kSchema);
  CHECK(kind_of([&] { load_database(dir / "absent.json"); }) == ErrorKind::kIo);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_reports reads a directory in name order") {
  const auto dir = std::filesystem::temp_directory_path() / "mpq_reports_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  int i = 0;
  for (int b : kBitwidths) {
    std::ofstream(dir / ("r" + std::to_string(i++) + ".csv")) << constant_report(24, b, "4.0");
  }
  std::ofstream(dir / "notes.txt") << "ignored";
  const auto reports = load_reports(dir);
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].bitwidth == 4);
  CHECK(aggregate(reports).lookup(24, ComponentId::kGap, ResourceKind::kDram, 6) == Tenths::parse("4.0"));
  std::filesystem::remove_all(dir);
}
