#include "nest/metrics.hpp"

#include <cmath>

#include "nest/error.hpp"

namespace nest {

namespace {

void check_args(const std::set<std::int32_t>& truth, const std::vector<std::int32_t>& ranked,
                std::size_t k) {
  if (truth.empty()) throw InputError("set metric: empty ground-truth set");
  if (ranked.size() != k) throw InputError("set metric: ranked list must have exactly K entries");
}

}  // namespace

double recall_at_k(const std::set<std::int32_t>& truth, const std::vector<std::int32_t>& ranked,
                   std::size_t k) {
  check_args(truth, ranked, k);
  std::size_t hits = 0;
  for (std::int32_t id : ranked) hits += truth.count(id);
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double ndcg_at_k(const std::set<std::int32_t>& truth, const std::vector<std::int32_t>& ranked,
                 std::size_t k) {
  check_args(truth, ranked, k);
  double dcg = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (truth.count(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, truth.size());
  for (std::size_t i = 0; i < ideal; ++i) {
    idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  return dcg / idcg;
}

}  // namespace nest
