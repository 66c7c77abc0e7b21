#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mpq/components.hpp"
#include "mpq/knowledge_db.hpp"
#include "mpq/resource_estimator.hpp"

namespace mpq {

/// Per-resource upper limits, inclusive.
struct Thresholds {
  Tenths luts = Tenths::from_raw(1000);
  Tenths dram = Tenths::from_raw(1000);
  Tenths bram = Tenths::from_raw(1000);
  Tenths dsps = Tenths::from_raw(1000);

  /// Throws Error(kValidation) if any limit is negative.
  void validate() const;
  bool admits(const ResourceVector& v) const {
    return v.luts() <= luts && v.dram() <= dram && v.bram() <= bram && v.dsps() <= dsps;
  }
};

/// An ordered list of distinct combinations to explore.
class CandidateSet {
 public:
  CandidateSet() = default;
  /// Throws Error(kValidation) on duplicates.
  explicit CandidateSet(std::vector<BitwidthCombination> combos);

  std::size_t size() const { return combos_.size(); }
  bool empty() const { return combos_.empty(); }
  const BitwidthCombination& operator[](std::size_t i) const { return combos_[i]; }
  std::span<const BitwidthCombination> combos() const { return combos_; }

 private:
  std::vector<BitwidthCombination> combos_;
};

struct ScoredCandidate {
  BitwidthCombination combo;
  ResourceVector estimate;
  int score = 0;

  friend bool operator==(const ScoredCandidate&, const ScoredCandidate&) = default;
};

struct SearchResult {
  std::vector<ScoredCandidate> selected;
  std::size_t filtered_count = 0;
  std::size_t total_count = 0;
  std::chrono::nanoseconds elapsed{0};

  /// 100 * (1 - filtered / total); 100 when nothing passes.
  double reduction_pct() const;
  /// reduction_pct() rounded half away from zero to one decimal.
  Tenths reduction_tenths() const;
};

/// Sweep configuration. `threads == 0` uses std::thread::hardware_concurrency;
/// `threads == 1` runs on the calling thread.
struct SearchOptions {
  EstimateOptions estimate;
  std::size_t threads = 1;
};

/// All 3^10 combinations, lexicographic with 4 < 6 < 8 per position.
CandidateSet enumerate_all();

/// Candidates whose estimate satisfies every threshold, in input order.
std::vector<ScoredCandidate> filter(const KnowledgeDatabase& db, int seq_len,
                                    const CandidateSet& candidates, const Thresholds& thresholds,
                                    const SearchOptions& opts = {});

/// Strict total order used for ranking: score descending, estimated LUTs
/// descending, then combination ascending.
bool ranks_before(const ScoredCandidate& a, const ScoredCandidate& b);

/// Sorts by ranks_before() and keeps the first `top_k`. `total_count` is the
/// size of the explored candidate set. Throws Error(kUsage) if top_k == 0.
SearchResult select_top(std::vector<ScoredCandidate> filtered, std::size_t top_k,
                        std::size_t total_count);

/// filter() then select_top(). Uses enumerate_all() when `candidates` is null.
SearchResult search(const KnowledgeDatabase& db, int seq_len, const Thresholds& thresholds,
                    std::size_t top_k, const CandidateSet* candidates = nullptr,
                    const SearchOptions& opts = {});

/// One combination per line ("6,8,6,8,6,6,8,8,8,8"); blank lines and lines
/// starting with '#' are skipped.
CandidateSet parse_candidates(std::string_view text);
CandidateSet load_candidates(const std::filesystem::path& path);

struct HistogramBin {
  double lower = 0;
  double upper = 0;
  std::size_t count = 0;
};

/// Equal-width bins over [min, max] of the chosen resource across `scored`.
/// The last bin is closed on the right. Empty input gives no bins.
std::vector<HistogramBin> histogram(std::span<const ScoredCandidate> scored, ResourceKind resource,
                                    std::size_t bins);

}  // namespace mpq
