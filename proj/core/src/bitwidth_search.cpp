#include "mpq/bitwidth_search.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "mpq/error.hpp"

namespace mpq {

void Thresholds::validate() const {
  for (Tenths t : {luts, dram, bram, dsps}) {
    if (t.raw() < 0) fail(ErrorKind::kValidation, "thresholds must be >= 0");
  }
}

CandidateSet::CandidateSet(std::vector<BitwidthCombination> combos) : combos_(std::move(combos)) {
  std::set<BitwidthCombination> seen;
  for (const auto& c : combos_) {
    if (!seen.insert(c).second) {
      fail(ErrorKind::kValidation, "duplicate combination " + c.to_string() + " in candidate set");
    }
  }
}

double SearchResult::reduction_pct() const {
  if (total_count == 0) return 100.0;
  return 100.0 * (1.0 - static_cast<double>(filtered_count) / static_cast<double>(total_count));
}

Tenths SearchResult::reduction_tenths() const {
  if (total_count == 0) return Tenths::from_raw(1000);
  // 1000 * (total - filtered) / total, rounded half up in exact integers.
  const auto num = static_cast<std::int64_t>(total_count - filtered_count) * 1000;
  const auto den = static_cast<std::int64_t>(total_count);
  return Tenths::from_raw((2 * num + den) / (2 * den));
}

CandidateSet enumerate_all() {
  constexpr std::size_t kTotal = 59049;  // 3^10
  std::vector<BitwidthCombination> out;
  out.reserve(kTotal);
  std::array<int, kKeyComponentCount> digits{};
  for (std::size_t idx = 0; idx < kTotal; ++idx) {
    std::size_t rest = idx;
    for (std::size_t pos = kKeyComponentCount; pos-- > 0;) {
      digits[pos] = kBitwidths[rest % 3];
      rest /= 3;
    }
    out.emplace_back(digits);
  }
  return CandidateSet(std::move(out));
}

std::vector<ScoredCandidate> filter(const KnowledgeDatabase& db, int seq_len,
                                    const CandidateSet& candidates, const Thresholds& thresholds,
                                    const SearchOptions& opts) {
  thresholds.validate();
  const auto& table = db.table_for(seq_len);
  const auto combos = candidates.combos();

  auto sweep = [&](std::size_t begin, std::size_t end, std::vector<ScoredCandidate>& out) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto est = estimate_with_table(table, combos[i], opts.estimate);
      if (thresholds.admits(est)) out.push_back({combos[i], est, combos[i].sum()});
    }
  };

  std::size_t threads = opts.threads == 0 ? std::thread::hardware_concurrency() : opts.threads;
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, combos.size()));
  if (threads == 1) {
    std::vector<ScoredCandidate> out;
    sweep(0, combos.size(), out);
    return out;
  }

  // Disjoint index ranges, merged in index order.
  std::vector<std::vector<ScoredCandidate>> parts(threads);
  std::vector<std::thread> workers;
  workers.reserve(threads);
  const std::size_t chunk = (combos.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = std::min(combos.size(), t * chunk);
    const std::size_t end = std::min(combos.size(), begin + chunk);
    workers.emplace_back([&, t, begin, end] { sweep(begin, end, parts[t]); });
  }
  for (auto& w : workers) w.join();
  std::vector<ScoredCandidate> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

bool ranks_before(const ScoredCandidate& a, const ScoredCandidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.estimate.luts() != b.estimate.luts()) return a.estimate.luts() > b.estimate.luts();
  return a.combo < b.combo;
}

SearchResult select_top(std::vector<ScoredCandidate> filtered, std::size_t top_k,
                        std::size_t total_count) {
  if (top_k == 0) fail(ErrorKind::kUsage, "top_k must be at least 1");
  SearchResult result;
  result.filtered_count = filtered.size();
  result.total_count = std::max(total_count, filtered.size());
  const std::size_t keep = std::min(top_k, filtered.size());
  std::partial_sort(filtered.begin(), filtered.begin() + static_cast<std::ptrdiff_t>(keep),
                    filtered.end(), ranks_before);
  filtered.resize(keep);
  result.selected = std::move(filtered);
  return result;
}

SearchResult search(const KnowledgeDatabase& db, int seq_len, const Thresholds& thresholds,
                    std::size_t top_k, const CandidateSet* candidates, const SearchOptions& opts) {
  if (top_k == 0) fail(ErrorKind::kUsage, "top_k must be at least 1");
  const auto start = std::chrono::steady_clock::now();
  CandidateSet all;
  if (candidates == nullptr) {
    all = enumerate_all();
    candidates = &all;
  }
  if (candidates->empty()) fail(ErrorKind::kValidation, "candidate set is empty");
  auto filtered = filter(db, seq_len, *candidates, thresholds, opts);
  auto result = select_top(std::move(filtered), top_k, candidates->size());
  result.elapsed = std::chrono::steady_clock::now() - start;
  return result;
}

CandidateSet parse_candidates(std::string_view text) {
  std::vector<BitwidthCombination> combos;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    try {
      combos.push_back(BitwidthCombination::parse(line.substr(first, last - first + 1)));
    } catch (const Error& e) {
      fail(e.kind(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return CandidateSet(std::move(combos));
}

CandidateSet load_candidates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_candidates(ss.str());
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<HistogramBin> histogram(std::span<const ScoredCandidate> scored, ResourceKind resource,
                                    std::size_t bins) {
  if (bins == 0) fail(ErrorKind::kUsage, "histogram needs at least one bin");
  std::vector<HistogramBin> out;
  if (scored.empty()) return out;
  auto [lo_it, hi_it] = std::minmax_element(
      scored.begin(), scored.end(),
      [&](const auto& a, const auto& b) { return a.estimate[resource] < b.estimate[resource]; });
  const std::int64_t lo = lo_it->estimate[resource].raw();
  const std::int64_t hi = hi_it->estimate[resource].raw();
  const std::int64_t span = std::max<std::int64_t>(hi - lo, 1);
  out.resize(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    out[i].lower = (static_cast<double>(lo) + static_cast<double>(span) * i / bins) / 10.0;
    out[i].upper = (static_cast<double>(lo) + static_cast<double>(span) * (i + 1) / bins) / 10.0;
  }
  for (const auto& s : scored) {
    // Integer bin index avoids floating-point edge effects.
    auto idx = static_cast<std::size_t>((s.estimate[resource].raw() - lo) *
                                        static_cast<std::int64_t>(bins) / span);
    if (idx >= bins) idx = bins - 1;
    ++out[idx].count;
  }
  return out;
}

}  // namespace mpq
