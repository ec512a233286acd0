#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace nest {

// Outcome of ranking one masked set / next basket against its ground truth.
struct RankingResult {
  std::set<std::int32_t> truth;            // distinct non-PAD ids
  std::vector<std::int32_t> predictions;   // ranked, length K, no duplicates
  double recall = 0.0;
  double ndcg = 0.0;
};

// |T ∩ P| / |T|. P must have exactly K entries; empty T is an error.
double recall_at_k(const std::set<std::int32_t>& truth,
                   const std::vector<std::int32_t>& ranked, std::size_t k);

// DCG with binary gains over the ranked list, normalized by the ideal DCG of
// min(K, |T|) leading hits.
double ndcg_at_k(const std::set<std::int32_t>& truth, const std::vector<std::int32_t>& ranked,
                 std::size_t k);

}  // namespace nest
