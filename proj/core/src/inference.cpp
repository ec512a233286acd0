#include "nest/inference.hpp"

#include <algorithm>
#include <cmath>

#include "nest/error.hpp"
#include "nest/util.hpp"

namespace nest {

std::vector<std::int32_t> rank_top_k(const double* scores, std::size_t vocab_size,
                                     std::size_t k) {
  const std::size_t candidates = vocab_size - Vocab::kNumReserved;
  if (k == 0 || k > candidates) {
    throw InputError("rank_top_k: K must lie in [1, vocab_size - 4]");
  }
  std::vector<std::int32_t> ids(candidates);
  for (std::size_t i = 0; i < candidates; ++i) {
    ids[i] = static_cast<std::int32_t>(i + Vocab::kNumReserved);
  }
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](std::int32_t a, std::int32_t b) {
                      const double sa = scores[static_cast<std::size_t>(a)];
                      const double sb = scores[static_cast<std::size_t>(b)];
                      if (sa != sb) return sa > sb;
                      return a < b;
                    });
  ids.resize(k);
  return ids;
}

std::set<std::int32_t> ground_truth_set(const SeqSet& s, std::size_t set_index) {
  std::set<std::int32_t> truth;
  for (std::size_t j = 1; j < s.n; ++j) {
    const std::int32_t id = s.token(set_index, j);
    if (!Vocab::is_special(id)) truth.insert(id);
  }
  return truth;
}

namespace {

// Single-subject input with the given sets fully masked, MSM style.
ModelInput masked_input(const SeqSet& s, const std::vector<std::uint8_t>& mask_set) {
  ModelInput in = input_from_subjects({s});
  for (std::size_t i = 0; i < s.m; ++i) {
    if (!mask_set[i]) continue;
    for (std::size_t j = 1; j < s.n; ++j) {
      in.tokens[i * s.n + j] = Vocab::kMask;
      in.token_valid[i * s.n + j] = 1;
    }
  }
  return in;
}

}  // namespace

RankingResult tied_set_prediction(const NestModel& model, const SeqSet& subject,
                                  std::size_t target_set, std::size_t k, SetDecoder decoder) {
  if (target_set >= subject.m || !subject.set_valid[target_set]) {
    throw InputError("tied_set_prediction: target set is not a valid set");
  }
  std::vector<std::uint8_t> mask_set(subject.m, 0);
  mask_set[target_set] = 1;
  ModelInput in = masked_input(subject, mask_set);

  Tensor hidden = model.encode(in);
  // Tied route reads a masked-slot state, analogous to masked-token
  // prediction (the MASK slots of a fully masked set are interchangeable);
  // the task-head route reads the set's CLS state it was pretrained on.
  const std::size_t cls = model.cls_row(0, target_set);
  Tensor state = decoder == SetDecoder::kTied ? gather_rows(hidden, {cls + 1})
                                              : gather_rows(hidden, {cls});
  Tensor scores =
      decoder == SetDecoder::kTied ? model.mlm_logits(state) : model.msm_logits(state);

  RankingResult result;
  result.truth = ground_truth_set(subject, target_set);
  result.predictions = rank_top_k(scores.data().data(), model.config().vocab_size, k);
  result.recall = recall_at_k(result.truth, result.predictions, k);
  result.ndcg = ndcg_at_k(result.truth, result.predictions, k);
  return result;
}

std::vector<std::int32_t> predict_next_basket(const NestModel& model, const SeqSet& history,
                                              std::size_t k, std::optional<double> query_time) {
  const std::size_t valid = history.num_valid_sets();
  if (valid == 0) throw InputError("predict_next_basket: empty history");

  SeqSet work = history;
  std::size_t query_slot = valid;
  if (valid == work.m) {
    // Grid full: evict the oldest set.
    for (std::size_t i = 0; i + 1 < work.m; ++i) {
      for (std::size_t j = 0; j < work.n; ++j) {
        work.tokens[i * work.n + j] = work.tokens[(i + 1) * work.n + j];
        work.token_valid[i * work.n + j] = work.token_valid[(i + 1) * work.n + j];
      }
      work.set_times[i] = work.set_times[i + 1];
      work.set_valid[i] = work.set_valid[i + 1];
    }
    query_slot = work.m - 1;
  }

  double t_query;
  if (query_time.has_value()) {
    t_query = *query_time;
  } else {
    // Median inter-set gap of the subject; 1.0 when fewer than two sets remain.
    std::vector<double> gaps;
    for (std::size_t i = 0; i + 1 < query_slot; ++i) {
      gaps.push_back(work.set_times[i + 1] - work.set_times[i]);
    }
    double gap = 1.0;
    if (!gaps.empty()) {
      std::sort(gaps.begin(), gaps.end());
      gap = gaps[gaps.size() / 2];
    }
    t_query = work.set_times[query_slot - 1] + gap;
  }

  for (std::size_t j = 0; j < work.n; ++j) {
    work.tokens[query_slot * work.n + j] = Vocab::kPad;
    work.token_valid[query_slot * work.n + j] = 0;
  }
  work.tokens[query_slot * work.n] = Vocab::kCls;
  work.token_valid[query_slot * work.n] = 1;
  work.tokens[query_slot * work.n + 1] = Vocab::kMask;
  work.token_valid[query_slot * work.n + 1] = 1;
  work.set_times[query_slot] = t_query;
  work.set_valid[query_slot] = 1;

  ModelInput in = input_from_subjects({work});
  Tensor hidden = model.encode(in);
  const std::size_t mask_row = model.cls_row(0, query_slot) + 1;
  Tensor state = gather_rows(hidden, {mask_row});
  Tensor logits = model.mlm_logits(state);
  return rank_top_k(logits.data().data(), model.config().vocab_size, k);
}

double masked_token_topk_accuracy(const NestModel& model, const std::vector<SeqSet>& data,
                                  std::size_t k, double mlm_rate, std::uint64_t seed) {
  if (data.empty()) throw InputError("masked_token_topk_accuracy: empty data");
  const std::size_t vocab = model.config().vocab_size;
  std::size_t supervised = 0;
  std::size_t hits = 0;

  const std::size_t batch_size = 16;
  std::size_t batch_index = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size, ++batch_index) {
    const std::size_t end = std::min(begin + batch_size, data.size());
    std::vector<SeqSet> batch(data.begin() + static_cast<std::ptrdiff_t>(begin),
                              data.begin() + static_cast<std::ptrdiff_t>(end));
    std::mt19937_64 rng(derive_seed(seed, 0x746f706b, batch_index));
    MlmOptions opt;
    opt.rate = mlm_rate;
    MlmView view = apply_mlm_mask(batch, vocab, opt, rng);

    ModelInput in = input_from_subjects(batch);
    in.tokens = view.tokens;
    Tensor hidden = model.encode(in);

    std::vector<std::size_t> rows;
    std::vector<std::int32_t> targets;
    for (std::size_t r = 0; r < view.supervise.size(); ++r) {
      if (view.supervise[r]) {
        rows.push_back(r);
        targets.push_back(view.targets[r]);
      }
    }
    if (rows.empty()) continue;
    Tensor logits = model.mlm_logits(gather_rows(hidden, rows));

    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double* row = logits.data().data() + r * vocab;
      const std::int32_t target = targets[r];
      if (Vocab::is_special(target)) {
        ++supervised;  // special targets can never be ranked
        continue;
      }
      const double ts = row[static_cast<std::size_t>(target)];
      std::size_t rank = 0;
      for (std::size_t v = Vocab::kNumReserved; v < vocab; ++v) {
        if (static_cast<std::int32_t>(v) == target) continue;
        if (row[v] > ts || (row[v] == ts && static_cast<std::int32_t>(v) < target)) ++rank;
      }
      ++supervised;
      if (rank < k) ++hits;
    }
  }
  if (supervised == 0) throw InputError("masked_token_topk_accuracy: no supervised positions");
  return static_cast<double>(hits) / static_cast<double>(supervised);
}

}  // namespace nest
