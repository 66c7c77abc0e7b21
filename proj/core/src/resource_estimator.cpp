#include "mpq/resource_estimator.hpp"

#include <algorithm>

namespace mpq {
namespace {

std::size_t mode_slot(const BitwidthCombination& combo) {
  std::array<int, 3> counts{};
  for (auto b : combo.bits()) ++counts[bitwidth_slot(b)];
  std::size_t best = 2;
  for (std::size_t s = 3; s-- > 0;) {
    if (counts[s] > counts[best]) best = s;
  }
  return best;
}

ResourceVector overhead_from_table(const KnowledgeDatabase::Table& table,
                                   const BitwidthCombination& combo, OverheadPolicy policy) {
  ResourceVector out;
  if (policy == OverheadPolicy::kPerResourceMax) {
    std::array<bool, 3> used{};
    for (auto b : combo.bits()) used[bitwidth_slot(b)] = true;
    for (std::size_t c = kKeyComponentCount; c < kComponentCount; ++c) {
      for (auto r : kAllResources) {
        Tenths best;
        for (std::size_t s = 0; s < 3; ++s) {
          if (used[s]) best = std::max(best, KnowledgeDatabase::cell(table, component_at(c), r, s));
        }
        out[r] += best;
      }
    }
    return out;
  }
  const std::size_t slot = policy == OverheadPolicy::kModeBitwidth
                               ? mode_slot(combo)
                               : bitwidth_slot(combo.max_bitwidth());
  for (std::size_t c = kKeyComponentCount; c < kComponentCount; ++c) {
    for (auto r : kAllResources) out[r] += KnowledgeDatabase::cell(table, component_at(c), r, slot);
  }
  return out;
}

}  // namespace

ResourceVector estimate_with_table(const KnowledgeDatabase::Table& table,
                                   const BitwidthCombination& combo, const EstimateOptions& opts) {
  ResourceVector out;
  for (std::size_t c = 0; c < kKeyComponentCount; ++c) {
    const std::size_t slot = bitwidth_slot(combo[c]);
    for (auto r : kAllResources) out[r] += KnowledgeDatabase::cell(table, component_at(c), r, slot);
  }
  if (opts.include_overhead) out += overhead_from_table(table, combo, opts.overhead_policy);
  return out;
}

ResourceVector estimate(const KnowledgeDatabase& db, int seq_len, const BitwidthCombination& combo,
                        const EstimateOptions& opts) {
  return estimate_with_table(db.table_for(seq_len), combo, opts);
}

ResourceVector estimate_uniform(const KnowledgeDatabase& db, int seq_len, int bitwidth,
                                const EstimateOptions& opts) {
  return estimate(db, seq_len, BitwidthCombination::uniform(bitwidth), opts);
}

ResourceVector overhead_only(const KnowledgeDatabase& db, int seq_len,
                             const BitwidthCombination& combo, OverheadPolicy policy) {
  return overhead_from_table(db.table_for(seq_len), combo, policy);
}

}  // namespace mpq
