#include "mpq/model_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mpq/error.hpp"

namespace mpq {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

[[noreturn]] void schema(const std::string& path, const std::string& msg) {
  fail(ErrorKind::kSchema, path + ": " + msg);
}

const ordered_json& field(const ordered_json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) schema(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) schema(path + "." + key, "missing");
  return *it;
}

template <class T>
T get(const ordered_json& obj, const std::string& key, const std::string& path) {
  const auto& v = field(obj, key, path);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    schema(path + "." + key, "wrong type");
  }
}

std::string_view scheme_name(QuantScheme s) { return s == QuantScheme::kSymmetric ? "sym" : "asym"; }

ordered_json quant_to_json(const QuantParams& p) {
  ordered_json j;
  j["scale"] = p.scale;
  j["zero_point"] = p.zero_point;
  j["bitwidth"] = p.bitwidth;
  j["signed"] = p.is_signed;
  j["scheme"] = scheme_name(p.scheme);
  return j;
}

QuantParams quant_from_json(const ordered_json& j, const std::string& path) {
  QuantParams p;
  p.scale = get<double>(j, "scale", path);
  p.zero_point = get<std::int32_t>(j, "zero_point", path);
  p.bitwidth = get<int>(j, "bitwidth", path);
  p.is_signed = get<bool>(j, "signed", path);
  const auto scheme = get<std::string>(j, "scheme", path);
  if (scheme == "sym") {
    p.scheme = QuantScheme::kSymmetric;
  } else if (scheme == "asym") {
    p.scheme = QuantScheme::kAsymmetric;
  } else {
    schema(path + ".scheme", "expected 'asym' or 'sym'");
  }
  try {
    p.validate();
  } catch (const Error& e) {
    schema(path, e.what());
  }
  return p;
}

std::string encode_f64(std::span<const double> values) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * 8);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return base64_encode(bytes);
}

std::string encode_i32(std::span<const std::int32_t> values) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * 4);
  for (auto v : values) {
    const auto bits = static_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return base64_encode(bytes);
}

ordered_json config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["seq_len"] = c.seq_len;
  j["input_dim"] = c.input_dim;
  j["d_model"] = c.d_model;
  j["ffn_dim"] = c.ffn_dim();
  j["heads"] = ModelConfig::heads();
  j["output_dim"] = c.output_dim;
  return j;
}

ModelConfig config_from_json(const ordered_json& j) {
  ModelConfig c;
  c.seq_len = get<std::size_t>(j, "seq_len", "config");
  c.input_dim = get<std::size_t>(j, "input_dim", "config");
  c.d_model = get<std::size_t>(j, "d_model", "config");
  c.output_dim = get<std::size_t>(j, "output_dim", "config");
  if (j.contains("ffn_dim") && get<std::size_t>(j, "ffn_dim", "config") != c.ffn_dim()) {
    schema("config.ffn_dim", "must equal 4 * d_model");
  }
  if (j.contains("heads") && get<std::size_t>(j, "heads", "config") != 1) schema("config.heads", "must be 1");
  try {
    c.validate();
  } catch (const Error& e) {
    schema("config", e.what());
  }
  return c;
}

ordered_json combo_to_json(const BitwidthCombination& c) {
  ordered_json j = ordered_json::array();
  for (int b : c.bits()) j.push_back(b);
  return j;
}

BitwidthCombination combo_from_json(const ordered_json& j, const std::string& path) {
  try {
    const auto bits = j.get<std::vector<int>>();
    return BitwidthCombination(bits);
  } catch (const nlohmann::json::exception&) {
    schema(path, "expected an array of bitwidths");
  } catch (const Error& e) {
    schema(path, e.what());
  }
}

std::vector<std::uint8_t> tensor_bytes(const ordered_json& t, const std::string& path,
                                       const std::string& dtype, std::size_t count) {
  if (get<std::string>(t, "dtype", path) != dtype) schema(path + ".dtype", "expected " + dtype);
  std::vector<std::uint8_t> bytes;
  try {
    bytes = base64_decode(get<std::string>(t, "data", path));
  } catch (const Error& e) {
    schema(path + ".data", e.what());
  }
  const std::size_t width = dtype == "f64" ? 8 : 4;
  if (bytes.size() != count * width) {
    schema(path + ".data", "holds " + std::to_string(bytes.size()) + " bytes, expected " +
                               std::to_string(count * width));
  }
  return bytes;
}

void check_shape(const ordered_json& t, const std::string& path, std::size_t rows, std::size_t cols) {
  const auto shape = get<std::vector<std::size_t>>(t, "shape", path);
  if (shape != std::vector<std::size_t>{rows, cols}) {
    schema(path + ".shape", "expected [" + std::to_string(rows) + ", " + std::to_string(cols) + "]");
  }
}

ordered_json scaler_to_json(const Preprocessing& p) {
  ordered_json j;
  j["columns"] = p.columns;
  j["target_index"] = p.target_index;
  j["scaler"] = {{"min", p.scaler.min()}, {"max", p.scaler.max()}};
  return j;
}

Preprocessing scaler_from_json(const ordered_json& j) {
  Preprocessing p;
  p.columns = get<std::vector<std::string>>(j, "columns", "preprocessing");
  p.target_index = get<std::size_t>(j, "target_index", "preprocessing");
  const auto& s = field(j, "scaler", "preprocessing");
  try {
    p.scaler = MinMaxScaler(get<std::vector<double>>(s, "min", "preprocessing.scaler"),
                            get<std::vector<double>>(s, "max", "preprocessing.scaler"));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kSchema) throw;
    schema("preprocessing.scaler", e.what());
  }
  if (p.scaler.columns() != p.columns.size() || p.target_index >= p.columns.size()) {
    schema("preprocessing", "column count, scaler and target index disagree");
  }
  return p;
}

}  // namespace

const ModelConfig& ModelFile::config() const {
  return std::visit([](const auto& m) -> const ModelConfig& { return m.config; }, model);
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i + 1 == bytes.size()) {
    const std::uint32_t v = bytes[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) fail(ErrorKind::kParse, "base64 length is not a multiple of 4");
  const auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    int pad = 0;
    std::uint32_t v = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && last && k >= 2) {
        ++pad;
        v <<= 6;
        continue;
      }
      const int d = value(c);
      if (d < 0 || pad > 0) fail(ErrorKind::kParse, "invalid base64 character");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

std::string serialize_model(const ModelFile& file) {
  ordered_json doc;
  doc["version"] = kModelFileVersion;
  doc["config"] = config_to_json(file.config());
  ordered_json tensors = ordered_json::object();
  if (const auto* fm = std::get_if<FloatModel>(&file.model)) {
    doc["kind"] = "float";
    doc["combo"] = file.qat_combo ? combo_to_json(*file.qat_combo) : ordered_json(nullptr);
    fm->for_each_tensor([&](std::string_view name, const Matrix& m, FloatModel::Role) {
      ordered_json t;
      t["shape"] = {m.rows(), m.cols()};
      t["dtype"] = "f64";
      t["data"] = encode_f64(m.values());
      tensors[std::string(name)] = std::move(t);
    });
    doc["tensors"] = std::move(tensors);
    if (fm->qat_ranges) {
      ordered_json ranges = ordered_json::object();
      for (std::size_t i = 0; i < kJunctionCount; ++i) {
        const auto& r = (*fm->qat_ranges)[i];
        if (r) ranges[std::string(name_of(junction_at(i)))] = {r->first, r->second};
      }
      doc["qat_ranges"] = std::move(ranges);
    }
  } else {
    const auto& qm = std::get<QuantizedModel>(file.model);
    doc["kind"] = "quantized";
    doc["combo"] = combo_to_json(qm.plan.combo);
    QuantizedModel::visit(qm, [&](std::string_view name, const QuantizedTensor& q) {
      ordered_json t;
      t["shape"] = q.shape;
      t["dtype"] = "i32";
      t["data"] = encode_i32(q.data);
      t["quant"] = quant_to_json(q.params);
      tensors[std::string(name)] = std::move(t);
    });
    doc["tensors"] = std::move(tensors);
    ordered_json junctions = ordered_json::object();
    for (std::size_t i = 0; i < kJunctionCount; ++i) {
      junctions[std::string(name_of(junction_at(i)))] = quant_to_json(qm.junctions[i]);
    }
    doc["junctions"] = std::move(junctions);
  }
  if (file.preprocessing) doc["preprocessing"] = scaler_to_json(*file.preprocessing);
  return doc.dump(2) + "\n";
}

ModelFile parse_model(std::string_view json_text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kParse, std::string("model file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) schema("$", "expected an object");
  const int version = get<int>(doc, "version", "$");
  if (version != kModelFileVersion) {
    fail(ErrorKind::kVersion, "unsupported model file version " + std::to_string(version));
  }
  const auto config = config_from_json(field(doc, "config", "$"));
  const auto kind = get<std::string>(doc, "kind", "$");
  const auto& tensors = field(doc, "tensors", "$");
  if (!tensors.is_object()) schema("tensors", "expected an object");

  ModelFile file;
  if (doc.contains("preprocessing")) file.preprocessing = scaler_from_json(doc["preprocessing"]);

  if (kind == "float") {
    FloatModel fm = FloatModel::zeros(config);
    fm.for_each_tensor([&](std::string_view name, Matrix& m, FloatModel::Role) {
      const std::string path = "tensors." + std::string(name);
      const auto& t = field(tensors, std::string(name), "tensors");
      check_shape(t, path, m.rows(), m.cols());
      const auto bytes = tensor_bytes(t, path, "f64", m.size());
      for (std::size_t i = 0; i < m.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        m[i] = std::bit_cast<double>(bits);
        if (!std::isfinite(m[i])) schema(path + ".data", "non-finite value");
      }
    });
    for (const auto* bn : {&fm.bn_mha, &fm.bn_ffn}) {
      for (double v : bn->running_var.values()) {
        if (!(v > 0)) schema("tensors", "batch norm running variance must be positive");
      }
    }
    if (doc.contains("combo") && !doc["combo"].is_null()) file.qat_combo = combo_from_json(doc["combo"], "combo");
    if (doc.contains("qat_ranges")) {
      ActivationRanges ranges;
      const auto& jr = doc["qat_ranges"];
      if (!jr.is_object()) schema("qat_ranges", "expected an object");
      for (const auto& [name, value] : jr.items()) {
        const auto j = parse_junction(name);
        if (!j) schema("qat_ranges." + name, "unknown junction");
        try {
          const auto pair = value.get<std::vector<double>>();
          if (pair.size() != 2 || !(pair[0] <= pair[1])) throw std::invalid_argument("range");
          ranges[index_of(*j)] = std::make_pair(pair[0], pair[1]);
        } catch (const std::exception&) {
          schema("qat_ranges." + name, "expected [min, max]");
        }
      }
      fm.qat_ranges = ranges;
    }
    file.model = std::move(fm);
  } else if (kind == "quantized") {
    QuantizedModel qm;
    qm.config = config;
    qm.plan = plan_cascade(combo_from_json(field(doc, "combo", "$"), "combo"));
    const auto& junctions = field(doc, "junctions", "$");
    for (std::size_t i = 0; i < kJunctionCount; ++i) {
      const std::string name(name_of(junction_at(i)));
      qm.junctions[i] = quant_from_json(field(junctions, name, "junctions"), "junctions." + name);
    }
    const auto pe_shape = std::vector<std::size_t>{config.seq_len, config.d_model};
    QuantizedModel::visit(qm, [&](std::string_view name, QuantizedTensor& q) {
      const std::string path = "tensors." + std::string(name);
      const auto& t = field(tensors, std::string(name), "tensors");
      q.shape = get<std::vector<std::size_t>>(t, "shape", path);
      if (q.shape.size() != 2) schema(path + ".shape", "expected two dimensions");
      q.params = quant_from_json(field(t, "quant", path), path + ".quant");
      const auto bytes = tensor_bytes(t, path, "i32", q.shape[0] * q.shape[1]);
      q.data.resize(q.shape[0] * q.shape[1]);
      for (std::size_t i = 0; i < q.data.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
        q.data[i] = static_cast<std::int32_t>(bits);
        if (q.data[i] < q.params.qmin() || q.data[i] > q.params.qmax()) {
          schema(path + ".data", "value outside the representable range");
        }
      }
    });
    // Shapes follow from the config.
    const std::size_t d = config.d_model;
    const auto expect = [&](const QuantizedTensor& q, std::size_t r, std::size_t c, const char* name) {
      if (q.shape != std::vector<std::size_t>{r, c}) schema(std::string("tensors.") + name + ".shape", "does not match config");
    };
    expect(qm.l_input.weight, config.input_dim, d, "l_input.weight");
    expect(qm.pe, pe_shape[0], pe_shape[1], "pe");
    for (const auto* l : {&qm.wq, &qm.wk, &qm.wv, &qm.wo}) expect(l->weight, d, d, "mha.weight");
    expect(qm.ffn1.weight, d, config.ffn_dim(), "ffn.w1.weight");
    expect(qm.ffn2.weight, config.ffn_dim(), d, "ffn.w2.weight");
    expect(qm.l_output.weight, d, config.output_dim, "l_output.weight");
    expect(qm.bn_mha.scale, 1, d, "bn_mha.scale");
    expect(qm.bn_ffn.scale, 1, d, "bn_ffn.scale");
    try {
      rebuild_requantizers(qm);
    } catch (const Error& e) {
      schema("junctions", e.what());
    }
    file.model = std::move(qm);
  } else {
    schema("kind", "expected 'float' or 'quantized'");
  }
  return file;
}

void save_model(const std::string& path, const ModelFile& file) {
  const std::string text = serialize_model(file);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorKind::kIo, "cannot write '" + tmp + "'");
    out << text;
    if (!out) fail(ErrorKind::kIo, "failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail(ErrorKind::kIo, "cannot rename onto '" + path + "'");
}

ModelFile load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

}  // namespace mpq
