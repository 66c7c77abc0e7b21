#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mpq/components.hpp"
#include "mpq/decimal.hpp"

namespace mpq {

/// Per-component utilization from one synthesis run of a uniformly
/// quantized model.
struct SynthesisReport {
  int seq_len = 0;
  int bitwidth = 0;
  std::array<ResourceVector, kComponentCount> entries{};
};

/// Parses the report CSV:
///
///   # n=12 b=4
///   component,luts,dram,bram,dsps
///   L_INPUT,3.9,4.0,5.0,5.0
///   ...
///
/// All 13 components must be present exactly once. Single entries must lie
/// in [0, 200).
SynthesisReport parse_report(std::string_view text);
SynthesisReport load_report(const std::filesystem::path& path);
/// Every *.csv in `dir`, in lexicographic filename order.
std::vector<SynthesisReport> load_reports(const std::filesystem::path& dir);

/// Immutable lookup table (seq_len, component, resource, bitwidth) -> percent.
class KnowledgeDatabase {
 public:
  /// 13 components x 4 resources x 3 bitwidths.
  static constexpr std::size_t kCellsPerSeqLen = kComponentCount * kResourceCount * 3;
  using Table = std::array<Tenths, kCellsPerSeqLen>;

  struct Metadata {
    std::string source;
    /// seq_len -> bitwidth -> number of reports aggregated.
    std::map<int, std::map<int, int>> report_counts;
  };

  KnowledgeDatabase() = default;
  /// Throws Error(kValidation) on negative values or an empty table map.
  KnowledgeDatabase(std::map<int, Table> tables, Metadata metadata);

  bool covers(int seq_len) const { return tables_.count(seq_len) != 0; }
  std::vector<int> seq_lens() const;
  const Metadata& metadata() const { return metadata_; }

  /// Throws Error(kCoverage) for an uncovered seq_len and Error(kValidation)
  /// for a bitwidth outside {4,6,8}.
  Tenths lookup(int seq_len, ComponentId c, ResourceKind r, int bitwidth) const;
  /// Same as lookup() without per-call validation; `table` must come from
  /// table_for().
  static Tenths cell(const Table& table, ComponentId c, ResourceKind r, std::size_t slot) {
    return table[slot_index(c, r, slot)];
  }
  /// Throws Error(kCoverage) for an uncovered seq_len.
  const Table& table_for(int seq_len) const;

  /// Equality of the entry maps only; metadata is ignored.
  friend bool operator==(const KnowledgeDatabase& a, const KnowledgeDatabase& b) {
    return a.tables_ == b.tables_;
  }

  static constexpr std::size_t slot_index(ComponentId c, ResourceKind r, std::size_t slot) {
    return (index_of(c) * kResourceCount + index_of(r)) * 3 + slot;
  }

 private:
  std::map<int, Table> tables_;
  Metadata metadata_;
};

/// Median per entry over all reports of the same (seq_len, bitwidth). An
/// even count takes the mean of the two central values, rounded half away
/// from zero to tenths. Every covered seq_len must have reports for all three
/// bitwidths.
KnowledgeDatabase aggregate(std::span<const SynthesisReport> reports);

/// Current database file version.
inline constexpr int kDatabaseVersion = 1;

KnowledgeDatabase parse_database(std::string_view json_text);
std::string serialize_database(const KnowledgeDatabase& db);
KnowledgeDatabase load_database(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames, so readers never see a
/// partial file.
void save_database(const KnowledgeDatabase& db, const std::filesystem::path& path);

/// Location of the bundled reference table (d_model = 64, n in {12,18,24}).
/// Honors $MPQ_DATA_DIR, then the install prefix, then the source tree.
std::filesystem::path bundled_database_path();

}  // namespace mpq
