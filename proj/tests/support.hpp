#pragma once

#include <array>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mpq/components.hpp"
#include "mpq/error.hpp"
#include "mpq/knowledge_db.hpp"
#include "mpq/matrix.hpp"
#include "mpq/transformer.hpp"

namespace mpq::test {

// Reference "estimated utilization" rows: n, combination, LUTs, DRAM, BRAM, DSPs.
struct ReferenceRow {
  int n;
  const char* combo;
  std::array<double, 4> estimate;
};

inline constexpr std::array<ReferenceRow, 15> kReferenceTop5 = {{
    {12, "6,8,6,8,6,6,8,8,8,8", {80.0, 78.7, 100.0, 100.0}},
    {12, "8,8,6,8,8,4,8,6,8,8", {78.1, 76.0, 85.0, 100.0}},
    {12, "8,8,6,8,6,4,8,8,8,8", {78.0, 76.0, 85.0, 100.0}},
    {12, "8,8,4,8,8,6,8,6,8,8", {76.7, 65.8, 85.0, 100.0}},
    {12, "8,8,4,8,6,6,8,8,8,8", {76.6, 65.8, 85.0, 100.0}},
    {18, "8,4,4,4,4,4,8,4,8,8", {80.0, 77.2, 90.0, 75.0}},
    {18, "8,4,4,4,8,4,4,4,8,8", {79.8, 77.2, 90.0, 70.0}},
    {18, "8,4,4,4,4,4,4,8,8,8", {79.7, 77.2, 90.0, 70.0}},
    {18, "8,6,4,4,6,4,4,4,8,8", {79.7, 74.5, 85.0, 75.0}},
    {18, "6,8,4,4,6,4,4,4,8,8", {79.6, 74.5, 85.0, 75.0}},
    {24, "6,8,4,4,4,4,4,4,8,8", {79.7, 75.8, 85.0, 75.0}},
    {24, "8,6,4,4,4,4,4,4,8,6", {79.9, 75.7, 85.0, 75.0}},
    {24, "8,6,4,4,4,4,4,4,6,8", {79.8, 75.7, 85.0, 75.0}},
    {24, "4,6,4,4,4,4,6,4,8,8", {79.6, 78.5, 85.0, 85.0}},
    {24, "6,8,4,4,4,4,4,4,8,6", {79.5, 75.7, 85.0, 75.0}},
}};

// Survivor counts of the full sweep at (80, 100, 100, 100), overhead excluded.
inline constexpr int kPassedN12 = 18118;
inline constexpr int kPassedN18 = 903;
inline constexpr int kPassedN24 = 192;

inline const KnowledgeDatabase& bundled() {
  static const KnowledgeDatabase db = load_database(bundled_database_path());
  return db;
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  throw std::runtime_error("expected mpq::Error");
}

template <class F>
std::string message_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

// A report whose every cell holds `value` unless `cell` overrides it.
inline std::string report_text(int n, int b, const std::function<std::string(ComponentId, ResourceKind)>& cell,
                               const std::vector<ComponentId>& skip = {}) {
  std::string text = "# n=" + std::to_string(n) + " b=" + std::to_string(b) + "\ncomponent,luts,dram,bram,dsps\n";
  for (std::size_t i = 0; i < kComponentCount; ++i) {
    const auto c = component_at(i);
    bool skipped = false;
    for (auto s : skip) skipped |= s == c;
    if (skipped) continue;
    text += std::string(name_of(c));
    for (auto r : kAllResources) text += "," + cell(c, r);
    text += "\n";
  }
  return text;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1,
                            double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

inline BitwidthCombination random_combo(std::mt19937_64& rng) {
  std::array<int, kKeyComponentCount> bits{};
  for (auto& b : bits) b = kBitwidths[rng() % 3];
  return BitwidthCombination(bits);
}

// Non-identity batch norm and nonzero biases so every tensor matters.
inline void perturb(FloatModel& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto* bn : {&m.bn_mha, &m.bn_ffn}) {
    for (std::size_t c = 0; c < m.config.d_model; ++c) {
      bn->gamma[c] = 1 + 0.3 * u(rng);
      bn->beta[c] = 0.2 * u(rng);
      bn->running_mean[c] = 0.3 * u(rng);
      bn->running_var[c] = 0.5 + std::abs(u(rng));
    }
  }
  for (auto* l : {&m.l_input, &m.wq, &m.wk, &m.wv, &m.wo, &m.ffn1, &m.ffn2, &m.l_output}) {
    for (auto& v : l->bias.values()) v = 0.1 * u(rng);
  }
}

}  // namespace mpq::test
