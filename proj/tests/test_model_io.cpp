#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "mpq/model_io.hpp"
#include "support.hpp"

using namespace mpq;
using mpq::test::kind_of;
using mpq::test::message_of;

namespace {

FloatModel sample_model() {
  ModelConfig cfg;
  cfg.seq_len = 5;
  cfg.input_dim = 3;
  cfg.d_model = 4;
  auto m = init_model(cfg, 9);
  std::mt19937_64 rng(9);
  test::perturb(m, rng);
  return m;
}

std::vector<Matrix> sample_windows(std::size_t count) {
  std::mt19937_64 rng(2);
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(test::random_matrix(5, 3, rng, 0, 1));
  return out;
}

Preprocessing sample_preprocessing() {
  return {{"a", "b", "c"}, 1, MinMaxScaler({0.0, -2.0, 1.0}, {1.0, 5.5, 3.25})};
}

nlohmann::json reparse(const ModelFile& f) { return nlohmann::json::parse(serialize_model(f)); }

}  // namespace

TEST_CASE("base64") {
  const std::vector<std::uint8_t> bytes{'f', 'o', 'o', 'b', 'a', 'r'};
  CHECK(base64_encode(bytes) == "Zm9vYmFy");
  CHECK(base64_encode(std::span(bytes).first(4)) == "Zm9vYg==");
  CHECK(base64_encode(std::span(bytes).first(5)) == "Zm9vYmE=");
  CHECK(base64_decode("Zm9vYg==") == std::vector<std::uint8_t>{'f', 'o', 'o', 'b'});
  CHECK(base64_decode("").empty());
  std::mt19937_64 rng(1);
  for (int n = 0; n < 64; ++n) {
    std::vector<std::uint8_t> v(n);
    for (auto& b : v) b = static_cast<std::uint8_t>(rng());
    REQUIRE(base64_decode(base64_encode(v)) == v);
  }
  CHECK(kind_of([] { base64_decode("abc"); }) == ErrorKind::kParse);
  CHECK(kind_of([] { base64_decode("ab!d"); }) == ErrorKind::kParse);
  CHECK(kind_of([] { base64_decode("a=bc"); }) == ErrorKind::kParse);
}

TEST_CASE("float model round trip is exact") {
  auto m = sample_model();
  m.qat_ranges = observe_ranges(m, sample_windows(4));
  ModelFile f{m, sample_preprocessing(), BitwidthCombination::parse("6,8,6,8,6,6,8,8,8,8")};
  const auto text = serialize_model(f);
  const auto back = parse_model(text);
  REQUIRE(!back.quantized());
  const auto& bm = std::get<FloatModel>(back.model);
  CHECK(bm.config == m.config);
  std::vector<const Matrix*> a, b;
  m.for_each_tensor([&](std::string_view, const Matrix& t, FloatModel::Role) { a.push_back(&t); });
  bm.for_each_tensor([&](std::string_view, const Matrix& t, FloatModel::Role) { b.push_back(&t); });
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
  CHECK(bm.qat_ranges == m.qat_ranges);
  CHECK(back.qat_combo == f.qat_combo);
  REQUIRE(back.preprocessing.has_value());
  CHECK(back.preprocessing->columns == f.preprocessing->columns);
  CHECK(back.preprocessing->scaler.min() == f.preprocessing->scaler.min());
  CHECK(back.preprocessing->scaler.max() == f.preprocessing->scaler.max());
  CHECK(serialize_model(back) == text);
}

TEST_CASE("quantized model round trip keeps integer behaviour") {
  const auto m = sample_model();
  const auto windows = sample_windows(6);
  const auto qm = quantize_model(m, BitwidthCombination::parse("8,8,6,8,6,4,8,8,8,8"), windows);
  const ModelFile f{qm, std::nullopt, std::nullopt};
  const auto text = serialize_model(f);
  const auto back = parse_model(text);
  REQUIRE(back.quantized());
  const auto& bq = std::get<QuantizedModel>(back.model);
  CHECK(bq.plan.combo == qm.plan.combo);
  const auto x = stack_windows(windows);
  CHECK(forward_integer(bq, quantize_input(bq, x)) == forward_integer(qm, quantize_input(qm, x)));
  CHECK(serialize_model(back) == text);
  CHECK(reparse(f)["tensors"]["ffn.w2.weight"]["quant"]["bitwidth"] == 4);
}

TEST_CASE("schema errors name the field") {
  const ModelFile f{sample_model(), std::nullopt, std::nullopt};
  auto doc = reparse(f);

  auto broken = doc;
  broken["tensors"].erase("mha.wk.bias");
  CHECK(kind_of([&] { parse_model(broken.dump()); }) == ErrorKind::kSchema);
  CHECK(message_of([&] { parse_model(broken.dump()); }).find("tensors.mha.wk.bias") != std::string::npos);

  broken = doc;
  broken["tensors"]["ffn.w1.weight"]["shape"] = {3, 3};
  CHECK(message_of([&] { parse_model(broken.dump()); }).find("tensors.ffn.w1.weight") != std::string::npos);

  broken = doc;
  broken["tensors"]["pe"]["data"] = "AAAA";
  CHECK(kind_of([&] { parse_model(broken.dump()); }) == ErrorKind::kSchema);

  broken = doc;
  broken["kind"] = "bfloat";
  CHECK(message_of([&] { parse_model(broken.dump()); }).find("kind") != std::string::npos);

  broken = doc;
  broken.erase("config");
  CHECK(kind_of([&] { parse_model(broken.dump()); }) == ErrorKind::kSchema);

  broken = doc;
  broken["version"] = 2;
  CHECK(kind_of([&] { parse_model(broken.dump()); }) == ErrorKind::kVersion);

  const auto text = serialize_model(f);
  CHECK(kind_of([&] { parse_model(text.substr(0, text.size() / 2)); }) == ErrorKind::kParse);
  CHECK(kind_of([] { parse_model("[]"); }) == ErrorKind::kSchema);
}

TEST_CASE("save and load") {
  const auto dir = std::filesystem::temp_directory_path() / "mpq_model_io_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "model.json").string();
  const ModelFile f{sample_model(), sample_preprocessing(), std::nullopt};
  save_model(path, f);
  CHECK(!std::filesystem::exists(path + ".tmp"));
  CHECK(serialize_model(load_model(path)) == serialize_model(f));
  CHECK(kind_of([&] { load_model((dir / "missing.json").string()); }) == ErrorKind::kIo);
  CHECK(kind_of([&] { save_model((dir / "no" / "such" / "dir.json").string(), f); }) == ErrorKind::kIo);
  std::filesystem::remove_all(dir);
}
