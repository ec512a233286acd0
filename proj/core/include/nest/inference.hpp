#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nest/metrics.hpp"
#include "nest/model.hpp"

namespace nest {

enum class SetDecoder {
  kTied,     // shared output layer: hidden . embedding^T
  kMsmHead,  // pretraining task head
};

// Top-k vocabulary ids by score, special tokens excluded, ties broken by
// ascending id.
std::vector<std::int32_t> rank_top_k(const double* scores, std::size_t vocab_size, std::size_t k);

// Distinct non-PAD, non-CLS ids of one padded set row.
std::set<std::int32_t> ground_truth_set(const SeqSet& s, std::size_t set_index);

// Scores a single fully-masked set: builds the MSM-style view, encodes, and
// ranks the vocabulary with the chosen decoder. The tied route reads a
// masked-slot state (analogous to masked-token prediction; all MASK slots of
// a fully masked set are interchangeable), the task-head route reads the
// set's final CLS state.
RankingResult tied_set_prediction(const NestModel& model, const SeqSet& subject,
                                  std::size_t target_set, std::size_t k,
                                  SetDecoder decoder = SetDecoder::kTied);

// BTBR-style next-basket inference: appends a query set [CLS, MASK, PAD, ...]
// at time t_m + the subject's median inter-set gap (evicting the oldest set
// when the grid is full) and ranks the vocabulary by tied-decoder logits at
// the MASK position.
std::vector<std::int32_t> predict_next_basket(const NestModel& model, const SeqSet& history,
                                              std::size_t k,
                                              std::optional<double> query_time = std::nullopt);

// Fraction of MLM-supervised positions whose target id lands in the top-k
// tied-decoder logits (special tokens excluded from the ranking).
double masked_token_topk_accuracy(const NestModel& model, const std::vector<SeqSet>& data,
                                  std::size_t k, double mlm_rate, std::uint64_t seed);

}  // namespace nest
