#include "mpq/knowledge_db.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mpq/error.hpp"

namespace mpq {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::int64_t kMaxSingleEntryTenths = 2000;  // 200.0 %

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos
                                                                          : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string at_line(int line) { return "line " + std::to_string(line) + ": "; }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Parses the "# n=<int> b=<int>" metadata line.
void parse_metadata_line(std::string_view line, int line_no, SynthesisReport& report) {
  std::string body = trim(line.substr(1));
  std::istringstream ss(body);
  std::string tok;
  bool have_n = false;
  bool have_b = false;
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = tok.substr(0, eq);
    const std::string value = tok.substr(eq + 1);
    char* end = nullptr;
    const long v = std::strtol(value.c_str(), &end, 10);
    if (value.empty() || *end != '\0') {
      fail(ErrorKind::kParse, at_line(line_no) + "bad integer '" + value + "' for " + key);
    }
    if (key == "n") {
      report.seq_len = static_cast<int>(v);
      have_n = true;
    } else if (key == "b") {
      report.bitwidth = static_cast<int>(v);
      have_b = true;
    }
  }
  if (!have_n || !have_b) {
    fail(ErrorKind::kParse, at_line(line_no) + "metadata must be '# n=<int> b=<4|6|8>'");
  }
  if (report.seq_len <= 0) {
    fail(ErrorKind::kValidation, at_line(line_no) + "sequence length must be positive");
  }
  if (!is_supported_bitwidth(report.bitwidth)) {
    fail(ErrorKind::kValidation,
         at_line(line_no) + "bitwidth " + std::to_string(report.bitwidth) + " not in {4,6,8}");
  }
}

std::string entry_path(int n, ComponentId c, ResourceKind r, int b) {
  return "entries." + std::to_string(n) + "." + std::string(name_of(c)) + "." +
         std::string(name_of(r)) + "." + std::to_string(b);
}

}  // namespace

SynthesisReport parse_report(std::string_view text) {
  SynthesisReport report;
  std::array<bool, kComponentCount> seen{};
  bool have_meta = false;
  bool have_header = false;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view raw = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;

    if (!have_meta) {
      if (line.front() != '#') {
        fail(ErrorKind::kParse, at_line(line_no) + "expected '# n=<int> b=<4|6|8>'");
      }
      parse_metadata_line(line, line_no, report);
      have_meta = true;
      continue;
    }
    if (line.front() == '#') continue;
    const auto fields = split_csv(line);
    if (!have_header) {
      const std::vector<std::string> expected = {"component", "luts", "dram", "bram", "dsps"};
      std::vector<std::string> lowered = fields;
      for (auto& f : lowered)
        std::transform(f.begin(), f.end(), f.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (lowered != expected) {
        fail(ErrorKind::kParse, at_line(line_no) + "header must be 'component,luts,dram,bram,dsps'");
      }
      have_header = true;
      continue;
    }
    if (fields.size() != 5) {
      fail(ErrorKind::kParse, at_line(line_no) + "expected 5 fields, got " +
                                  std::to_string(fields.size()));
    }
    const auto comp = parse_component(fields[0]);
    if (!comp) fail(ErrorKind::kSchema, at_line(line_no) + "unknown component '" + fields[0] + "'");
    if (seen[index_of(*comp)]) {
      fail(ErrorKind::kSchema,
           at_line(line_no) + "duplicate component " + std::string(name_of(*comp)));
    }
    seen[index_of(*comp)] = true;
    ResourceVector rv;
    for (std::size_t r = 0; r < kResourceCount; ++r) {
      Tenths v;
      try {
        v = Tenths::parse(fields[r + 1]);
      } catch (const Error& e) {
        fail(ErrorKind::kParse, at_line(line_no) + e.what());
      }
      if (v.raw() < 0 || v.raw() >= kMaxSingleEntryTenths) {
        fail(ErrorKind::kValidation, at_line(line_no) + std::string(name_of(*comp)) + " " +
                                         std::string(name_of(kAllResources[r])) + " = " +
                                         fields[r + 1] + " outside [0, 200)");
      }
      rv.values[r] = v;
    }
    report.entries[index_of(*comp)] = rv;
  }
  if (!have_meta) fail(ErrorKind::kParse, "empty report");
  if (!have_header) fail(ErrorKind::kParse, "report has no header row");
  std::string missing;
  for (std::size_t i = 0; i < kComponentCount; ++i) {
    if (!seen[i]) {
      if (!missing.empty()) missing += ", ";
      missing += name_of(component_at(i));
    }
  }
  if (!missing.empty()) fail(ErrorKind::kSchema, "report is missing components: " + missing);
  return report;
}

SynthesisReport load_report(const std::filesystem::path& path) {
  try {
    return parse_report(read_file(path));
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<SynthesisReport> load_reports(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::kIo, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SynthesisReport> reports;
  reports.reserve(files.size());
  for (const auto& f : files) reports.push_back(load_report(f));
  return reports;
}

KnowledgeDatabase::KnowledgeDatabase(std::map<int, Table> tables, Metadata metadata)
    : tables_(std::move(tables)), metadata_(std::move(metadata)) {
  if (tables_.empty()) fail(ErrorKind::kValidation, "knowledge database covers no sequence length");
  for (const auto& [n, table] : tables_) {
    if (n <= 0) fail(ErrorKind::kValidation, "sequence length must be positive");
    for (std::size_t c = 0; c < kComponentCount; ++c)
      for (auto r : kAllResources)
        for (std::size_t s = 0; s < 3; ++s)
          if (table[slot_index(component_at(c), r, s)].raw() < 0) {
            fail(ErrorKind::kValidation,
                 entry_path(n, component_at(c), r, kBitwidths[s]) + " is negative");
          }
  }
}

std::vector<int> KnowledgeDatabase::seq_lens() const {
  std::vector<int> out;
  for (const auto& [n, _] : tables_) out.push_back(n);
  return out;
}

const KnowledgeDatabase::Table& KnowledgeDatabase::table_for(int seq_len) const {
  const auto it = tables_.find(seq_len);
  if (it == tables_.end()) {
    std::string covered;
    for (const auto& [n, _] : tables_) {
      if (!covered.empty()) covered += ", ";
      covered += std::to_string(n);
    }
    fail(ErrorKind::kCoverage, "sequence length " + std::to_string(seq_len) +
                                   " is not covered; database covers {" + covered + "}");
  }
  return it->second;
}

Tenths KnowledgeDatabase::lookup(int seq_len, ComponentId c, ResourceKind r, int bitwidth) const {
  if (!is_supported_bitwidth(bitwidth)) {
    fail(ErrorKind::kValidation, "bitwidth " + std::to_string(bitwidth) + " not in {4,6,8}");
  }
  return cell(table_for(seq_len), c, r, bitwidth_slot(bitwidth));
}

KnowledgeDatabase aggregate(std::span<const SynthesisReport> reports) {
  if (reports.empty()) fail(ErrorKind::kValidation, "cannot aggregate an empty report list");

  // (seq_len, slot) -> reports
  std::map<int, std::array<std::vector<const SynthesisReport*>, 3>> cells;
  for (const auto& rep : reports) {
    if (!is_supported_bitwidth(rep.bitwidth) || rep.seq_len <= 0) {
      fail(ErrorKind::kValidation, "report with invalid (n, b) = (" + std::to_string(rep.seq_len) +
                                       ", " + std::to_string(rep.bitwidth) + ")");
    }
    cells[rep.seq_len][bitwidth_slot(rep.bitwidth)].push_back(&rep);
  }

  std::string missing;
  for (const auto& [n, by_slot] : cells) {
    for (std::size_t s = 0; s < 3; ++s) {
      if (by_slot[s].empty()) {
        if (!missing.empty()) missing += ", ";
        missing += "(n=" + std::to_string(n) + ", b=" + std::to_string(kBitwidths[s]) + ")";
      }
    }
  }
  if (!missing.empty()) fail(ErrorKind::kValidation, "incomplete report set; no reports for " + missing);

  std::map<int, KnowledgeDatabase::Table> tables;
  KnowledgeDatabase::Metadata meta;
  meta.source = "median of " + std::to_string(reports.size()) + " synthesis reports";
  std::vector<Tenths> column;
  for (const auto& [n, by_slot] : cells) {
    auto& table = tables[n];
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& group = by_slot[s];
      meta.report_counts[n][kBitwidths[s]] = static_cast<int>(group.size());
      for (std::size_t c = 0; c < kComponentCount; ++c) {
        for (auto r : kAllResources) {
          column.clear();
          for (const auto* rep : group) column.push_back(rep->entries[c][r]);
          std::sort(column.begin(), column.end());
          const std::size_t k = column.size();
          const Tenths median =
              k % 2 == 1 ? column[k / 2] : midpoint(column[k / 2 - 1], column[k / 2]);
          table[KnowledgeDatabase::slot_index(component_at(c), r, s)] = median;
        }
      }
    }
  }
  return KnowledgeDatabase(std::move(tables), std::move(meta));
}

KnowledgeDatabase parse_database(std::string_view json_text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kParse, std::string("knowledge database is not valid JSON: ") + e.what());
  }
  auto schema = [](const std::string& path, const std::string& msg) -> void {
    fail(ErrorKind::kSchema, path + ": " + msg);
  };
  if (!doc.is_object()) schema("$", "expected an object");
  if (!doc.contains("version")) schema("version", "missing");
  if (!doc["version"].is_number_integer()) schema("version", "expected an integer");
  const int version = doc["version"].get<int>();
  if (version != kDatabaseVersion) {
    fail(ErrorKind::kVersion, "unsupported knowledge database version " + std::to_string(version) +
                                  " (supported: " + std::to_string(kDatabaseVersion) + ")");
  }
  if (!doc.contains("seq_lens") || !doc["seq_lens"].is_array()) schema("seq_lens", "expected an array");
  if (!doc.contains("entries") || !doc["entries"].is_object()) schema("entries", "expected an object");

  KnowledgeDatabase::Metadata meta;
  if (doc.contains("source")) {
    if (!doc["source"].is_string()) schema("source", "expected a string");
    meta.source = doc["source"].get<std::string>();
  }

  std::vector<int> declared;
  for (std::size_t i = 0; i < doc["seq_lens"].size(); ++i) {
    const auto& v = doc["seq_lens"][i];
    if (!v.is_number_integer()) schema("seq_lens[" + std::to_string(i) + "]", "expected an integer");
    declared.push_back(v.get<int>());
  }

  std::map<int, KnowledgeDatabase::Table> tables;
  for (const auto& [key, per_comp] : doc["entries"].items()) {
    const std::string path = "entries." + key;
    char* end = nullptr;
    const long n = std::strtol(key.c_str(), &end, 10);
    if (key.empty() || *end != '\0' || n <= 0) schema(path, "key must be a positive integer");
    if (!per_comp.is_object()) schema(path, "expected an object");
    KnowledgeDatabase::Table table{};
    for (std::size_t c = 0; c < kComponentCount; ++c) {
      const std::string cname(name_of(component_at(c)));
      if (!per_comp.contains(cname)) schema(path + "." + cname, "missing component");
      const auto& per_res = per_comp[cname];
      if (!per_res.is_object()) schema(path + "." + cname, "expected an object");
      for (auto r : kAllResources) {
        const std::string rname(name_of(r));
        const std::string rpath = path + "." + cname + "." + rname;
        if (!per_res.contains(rname)) schema(rpath, "missing resource");
        const auto& per_bits = per_res[rname];
        if (!per_bits.is_object()) schema(rpath, "expected an object");
        for (std::size_t s = 0; s < 3; ++s) {
          const std::string bkey = std::to_string(kBitwidths[s]);
          const std::string vpath = rpath + "." + bkey;
          if (!per_bits.contains(bkey)) schema(vpath, "missing bitwidth");
          if (!per_bits[bkey].is_string()) schema(vpath, "expected a decimal string");
          Tenths v;
          try {
            v = Tenths::parse(per_bits[bkey].get<std::string>());
          } catch (const Error&) {
            schema(vpath, "not a decimal string");
          }
          if (v.raw() < 0) schema(vpath, "negative utilization");
          table[KnowledgeDatabase::slot_index(component_at(c), r, s)] = v;
        }
        if (per_bits.size() != 3) schema(rpath, "unexpected bitwidth keys (expected 4, 6, 8)");
      }
      if (per_res.size() != kResourceCount) schema(path + "." + cname, "unexpected resource keys");
    }
    if (per_comp.size() != kComponentCount) schema(path, "unexpected component keys");
    tables[static_cast<int>(n)] = table;
  }

  std::vector<int> covered;
  for (const auto& [n, _] : tables) covered.push_back(n);
  std::vector<int> sorted_declared = declared;
  std::sort(sorted_declared.begin(), sorted_declared.end());
  if (sorted_declared != covered) schema("seq_lens", "does not match the keys of entries");

  if (doc.contains("report_counts")) {
    const auto& rc = doc["report_counts"];
    if (!rc.is_object()) schema("report_counts", "expected an object");
    for (const auto& [nkey, per_b] : rc.items()) {
      if (!per_b.is_object()) schema("report_counts." + nkey, "expected an object");
      for (const auto& [bkey, count] : per_b.items()) {
        if (!count.is_number_integer()) schema("report_counts." + nkey + "." + bkey, "expected an integer");
        meta.report_counts[std::stoi(nkey)][std::stoi(bkey)] = count.get<int>();
      }
    }
  }
  if (tables.empty()) schema("entries", "covers no sequence length");
  return KnowledgeDatabase(std::move(tables), std::move(meta));
}

std::string serialize_database(const KnowledgeDatabase& db) {
  ordered_json doc;
  doc["version"] = kDatabaseVersion;
  if (!db.metadata().source.empty()) doc["source"] = db.metadata().source;
  doc["seq_lens"] = db.seq_lens();
  if (!db.metadata().report_counts.empty()) {
    ordered_json rc = ordered_json::object();
    for (const auto& [n, per_b] : db.metadata().report_counts) {
      ordered_json inner = ordered_json::object();
      for (const auto& [b, count] : per_b) inner[std::to_string(b)] = count;
      rc[std::to_string(n)] = inner;
    }
    doc["report_counts"] = rc;
  }
  ordered_json entries = ordered_json::object();
  for (int n : db.seq_lens()) {
    const auto& table = db.table_for(n);
    ordered_json per_comp = ordered_json::object();
    for (std::size_t c = 0; c < kComponentCount; ++c) {
      ordered_json per_res = ordered_json::object();
      for (auto r : kAllResources) {
        ordered_json per_bits = ordered_json::object();
        for (std::size_t s = 0; s < 3; ++s) {
          per_bits[std::to_string(kBitwidths[s])] =
              KnowledgeDatabase::cell(table, component_at(c), r, s).to_string();
        }
        per_res[std::string(name_of(r))] = per_bits;
      }
      per_comp[std::string(name_of(component_at(c)))] = per_res;
    }
    entries[std::to_string(n)] = per_comp;
  }
  doc["entries"] = entries;
  return doc.dump(2) + "\n";
}

KnowledgeDatabase load_database(const std::filesystem::path& path) {
  try {
    return parse_database(read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

void save_database(const KnowledgeDatabase& db, const std::filesystem::path& path) {
  const std::string text = serialize_database(db);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp.string());
    out << text;
    if (!out) fail(ErrorKind::kIo, "failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::filesystem::path bundled_database_path() {
  namespace fs = std::filesystem;
  if (const char* env = std::getenv("MPQ_DATA_DIR")) {
    const fs::path p = fs::path(env) / "utilization_d64.json";
    if (fs::exists(p)) return p;
  }
#ifdef MPQ_INSTALL_DATA_DIR
  {
    const fs::path p = fs::path(MPQ_INSTALL_DATA_DIR) / "utilization_d64.json";
    if (fs::exists(p)) return p;
  }
#endif
#ifdef MPQ_SOURCE_DATA_DIR
  return fs::path(MPQ_SOURCE_DATA_DIR) / "utilization_d64.json";
#else
  return fs::path("utilization_d64.json");
#endif
}

}  // namespace mpq
