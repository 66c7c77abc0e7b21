#pragma once

#include "mpq/components.hpp"
#include "mpq/knowledge_db.hpp"

namespace mpq {

/// How the overhead pseudo-components pick their bitwidth column when a
/// mixed combination is estimated with overhead included.
enum class OverheadPolicy {
  kMaxBitwidth,     // column of the largest bitwidth in the combination
  kModeBitwidth,    // most frequent bitwidth; ties go to the larger one
  kPerResourceMax,  // per resource, the largest overhead among the bitwidths in use
};

struct EstimateOptions {
  bool include_overhead = false;
  OverheadPolicy overhead_policy = OverheadPolicy::kMaxBitwidth;
};

/// Sum of the per-component database entries for `combo`. Exact in tenths.
ResourceVector estimate(const KnowledgeDatabase& db, int seq_len, const BitwidthCombination& combo,
                        const EstimateOptions& opts = {});

ResourceVector estimate_uniform(const KnowledgeDatabase& db, int seq_len, int bitwidth,
                                const EstimateOptions& opts = {});

/// Only the three overhead entries, chosen per `opts.overhead_policy`.
ResourceVector overhead_only(const KnowledgeDatabase& db, int seq_len,
                             const BitwidthCombination& combo, OverheadPolicy policy);

/// Hot-loop form of estimate() for a table already resolved by
/// KnowledgeDatabase::table_for().
ResourceVector estimate_with_table(const KnowledgeDatabase::Table& table,
                                   const BitwidthCombination& combo, const EstimateOptions& opts);

}  // namespace mpq
