#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "nest/error.hpp"
#include "nest/inference.hpp"
#include "nest/masking.hpp"
#include "nest/metrics.hpp"
#include "nest/optim.hpp"
#include "nest/train.hpp"

using namespace nest;

namespace {

// Independent brute-force reimplementations of the two set metrics.
double brute_recall(const std::set<std::int32_t>& truth, const std::vector<std::int32_t>& ranked) {
  std::size_t hits = 0;
  for (std::int32_t t : truth) {
    if (std::find(ranked.begin(), ranked.end(), t) != ranked.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double brute_ndcg(const std::set<std::int32_t>& truth, const std::vector<std::int32_t>& ranked) {
  double dcg = 0.0;
  for (std::size_t pos = 1; pos <= ranked.size(); ++pos) {
    if (truth.count(ranked[pos - 1])) dcg += 1.0 / std::log2(static_cast<double>(pos + 1));
  }
  double ideal = 0.0;
  for (std::size_t pos = 1; pos <= std::min(ranked.size(), truth.size()); ++pos) {
    ideal += 1.0 / std::log2(static_cast<double>(pos + 1));
  }
  return dcg / ideal;
}

NestConfig tiny_config(std::size_t vocab) {
  NestConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 16;
  cfg.d_ff = 24;
  cfg.n_heads = 2;
  cfg.d_head = 8;
  cfg.vocab_size = vocab;
  cfg.n = 4;
  cfg.m = 3;
  cfg.seed = 808;
  return cfg;
}

SeqSet subject_with_sets(std::size_t n, std::size_t m,
                         const std::vector<std::vector<std::int32_t>>& sets) {
  SeqSet s;
  s.subject_id = "t";
  s.m = m;
  s.n = n;
  s.tokens.assign(m * n, Vocab::kPad);
  s.token_valid.assign(m * n, 0);
  s.set_valid.assign(m, 0);
  s.set_times.assign(m, 0.0);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    s.set_valid[i] = 1;
    s.set_times[i] = static_cast<double>(i);
    s.tokens[i * n] = Vocab::kCls;
    s.token_valid[i * n] = 1;
    for (std::size_t j = 0; j < sets[i].size() && j + 1 < n; ++j) {
      s.tokens[i * n + 1 + j] = sets[i][j];
      s.token_valid[i * n + 1 + j] = 1;
    }
  }
  return s;
}

}  // namespace

TEST_CASE("recall and ndcg hand-derived examples") {
  std::set<std::int32_t> truth{10, 11, 12};
  std::vector<std::int32_t> ranked{10, 20, 21, 11, 22, 23, 24, 25, 26, 27};
  CHECK(recall_at_k(truth, ranked, 10) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  // Superset of the truth in front: recall 1.
  std::vector<std::int32_t> all{10, 11, 12, 20, 21, 22, 23, 24, 25, 26};
  CHECK(recall_at_k(truth, all, 10) == 1.0);

  // Disjoint: recall 0, ndcg 0.
  std::vector<std::int32_t> none{40, 41, 42, 43, 44, 45, 46, 47, 48, 49};
  CHECK(recall_at_k(truth, none, 10) == 0.0);
  CHECK(ndcg_at_k(truth, none, 10) == 0.0);

  // K=3, T={a,b}, P=[a,x,b]: (1 + 1/2) / (1 + 1/log2 3).
  std::set<std::int32_t> ab{5, 6};
  std::vector<std::int32_t> axb{5, 99, 6};
  const double expected = 1.5 / (1.0 + 1.0 / std::log2(3.0));
  CHECK(ndcg_at_k(ab, axb, 3) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(ndcg_at_k(ab, axb, 3) == doctest::Approx(0.9198).epsilon(2e-4));

  // All hits up front: ndcg 1.
  std::vector<std::int32_t> front{5, 6, 99};
  CHECK(ndcg_at_k(ab, front, 3) == 1.0);

  CHECK_THROWS_AS(recall_at_k({}, ranked, 10), InputError);
  CHECK_THROWS_AS(ndcg_at_k(truth, ranked, 5), InputError);  // |P| != K
}

TEST_CASE("metrics match brute force on 1000 random cases") {
  std::mt19937_64 rng(4242);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + rng() % 20;
    std::set<std::int32_t> truth;
    const std::size_t truth_size = 1 + rng() % 12;
    while (truth.size() < truth_size) truth.insert(static_cast<std::int32_t>(rng() % 100));

    // Ranked list of k distinct candidates.
    std::vector<std::int32_t> pool(100);
    for (std::size_t i = 0; i < 100; ++i) pool[i] = static_cast<std::int32_t>(i);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::int32_t> ranked(pool.begin(), pool.begin() + static_cast<long>(k));

    CHECK(recall_at_k(truth, ranked, k) == brute_recall(truth, ranked));
    CHECK(ndcg_at_k(truth, ranked, k) == brute_ndcg(truth, ranked));

    // NDCG == 1 iff the first min(K, |T|) entries are all hits.
    const std::size_t head = std::min(k, truth.size());
    bool all_hits = true;
    for (std::size_t i = 0; i < head; ++i) all_hits = all_hits && truth.count(ranked[i]);
    CHECK((ndcg_at_k(truth, ranked, k) == 1.0) == all_hits);
  }
}

TEST_CASE("moving a hit earlier strictly increases ndcg") {
  std::set<std::int32_t> truth{1, 2, 3};
  std::vector<std::int32_t> ranked{50, 51, 1, 52, 2, 53, 54, 55, 56, 57};
  const double base = ndcg_at_k(truth, ranked, 10);
  // Swap the hit at position 3 with the miss at position 1.
  std::swap(ranked[0], ranked[2]);
  CHECK(ndcg_at_k(truth, ranked, 10) > base);
}

TEST_CASE("rank_top_k excludes special ids and breaks ties by id") {
  std::vector<double> scores(12, 0.0);
  scores[Vocab::kPad] = 100.0;  // specials must never surface
  scores[Vocab::kMask] = 99.0;
  scores[7] = 5.0;
  scores[9] = 5.0;  // tie with 7
  scores[4] = 1.0;

  auto top = rank_top_k(scores.data(), 12, 3);
  CHECK(top == std::vector<std::int32_t>{7, 9, 4});
  CHECK_THROWS_AS(rank_top_k(scores.data(), 12, 9), InputError);  // K > |V| - 4
}

TEST_CASE("tied_set_prediction is deterministic and clean of specials") {
  NestModel model = NestModel::init(tiny_config(20));
  SeqSet s = subject_with_sets(4, 3, {{4, 5, 6}, {7, 8}, {9}});

  RankingResult a = tied_set_prediction(model, s, 1, 5);
  RankingResult b = tied_set_prediction(model, s, 1, 5);
  CHECK(a.predictions == b.predictions);
  CHECK(a.recall == b.recall);
  CHECK(a.truth == std::set<std::int32_t>{7, 8});
  for (std::int32_t id : a.predictions) CHECK_FALSE(Vocab::is_special(id));

  CHECK_THROWS_AS(tied_set_prediction(model, s, 2 + 1, 5), InputError);

  // The msm-head decoder route ranks from the same CLS state.
  RankingResult c = tied_set_prediction(model, s, 1, 5, SetDecoder::kMsmHead);
  CHECK(c.predictions.size() == 5);
}

TEST_CASE("predict_next_basket protocol") {
  NestModel model = NestModel::init(tiny_config(20));
  SeqSet s = subject_with_sets(4, 3, {{4, 5}, {6, 7}});

  auto ranked = predict_next_basket(model, s, 5);
  CHECK(ranked.size() == 5);
  for (std::int32_t id : ranked) CHECK_FALSE(Vocab::is_special(id));

  // Deterministic under fixed weights.
  CHECK(predict_next_basket(model, s, 5) == ranked);

  // Explicit query time is honored (different time, generally different logits).
  auto shifted = predict_next_basket(model, s, 5, 1000.0);
  CHECK(shifted.size() == 5);

  // Eviction path: full grid still leaves room for the query basket.
  SeqSet full = subject_with_sets(4, 3, {{4, 5}, {6, 7}, {8, 9}});
  auto evicted = predict_next_basket(model, full, 5);
  CHECK(evicted.size() == 5);

  // K larger than the vocabulary and empty histories are errors.
  CHECK_THROWS_AS(predict_next_basket(model, s, 17), InputError);
  SeqSet empty = subject_with_sets(4, 3, {});
  CHECK_THROWS_AS(predict_next_basket(model, empty, 5), InputError);
}

TEST_CASE("eviction drops the oldest set") {
  // With m=1 the full grid holds exactly one set; appending the query must
  // evict it, so predictions cannot depend on its contents.
  NestConfig cfg = tiny_config(20);
  cfg.m = 1;
  NestModel model = NestModel::init(cfg);
  SeqSet one = subject_with_sets(4, 1, {{4, 5}});
  SeqSet other = subject_with_sets(4, 1, {{6, 7}});
  auto a = predict_next_basket(model, one, 5, 3.0);
  auto b = predict_next_basket(model, other, 5, 3.0);
  CHECK(a == b);
}

TEST_CASE("masked_token_topk_accuracy bounds") {
  const std::size_t vocab = 20;
  NestModel model = NestModel::init(tiny_config(vocab));
  std::vector<SeqSet> data;
  std::mt19937_64 rng(31);
  for (int i = 0; i < 30; ++i) {
    std::vector<std::vector<std::int32_t>> sets;
    for (int s = 0; s < 3; ++s) {
      std::vector<std::int32_t> set;
      for (int j = 0; j < 3; ++j) {
        set.push_back(static_cast<std::int32_t>(Vocab::kNumReserved + rng() % 16));
      }
      sets.push_back(set);
    }
    SeqSet subj = subject_with_sets(4, 3, sets);
    subj.subject_id = "acc_" + std::to_string(i);
    data.push_back(subj);
  }

  // k = |V| - 4 ranks every candidate: accuracy 1.
  CHECK(masked_token_topk_accuracy(model, data, vocab - Vocab::kNumReserved, 0.3, 7) == 1.0);

  // An untrained model is near the uniform-ranking expectation k/(|V|-4).
  const double acc1 = masked_token_topk_accuracy(model, data, 1, 0.3, 7);
  const double expected1 = 1.0 / 16.0;
  CHECK(acc1 < 5.0 * expected1 + 0.05);

  const double acc8 = masked_token_topk_accuracy(model, data, 8, 0.3, 7);
  CHECK(acc8 > 0.15);  // half the candidates ranked
  CHECK(acc8 < 0.95);
}

TEST_CASE("overfit sanity: a model trained on constant baskets ranks that item first") {
  const std::size_t vocab = 12;
  NestConfig cfg = tiny_config(vocab);
  cfg.seed = 4;
  NestModel model = NestModel::init(cfg);

  // Every basket of every subject is {4}.
  std::vector<SeqSet> data;
  for (int i = 0; i < 8; ++i) {
    SeqSet s = subject_with_sets(4, 3, {{4}, {4}, {4}});
    s.subject_id = "const_" + std::to_string(i);
    data.push_back(s);
  }

  AdamW optim(model.parameters(), AdamWConfig{3e-3, 0.9, 0.999, 1e-8, 0.0});
  TrainConfig tcfg;
  tcfg.mlm_rate = 0.5;
  tcfg.msm_rate = 0.5;
  for (std::uint64_t step = 0; step < 60; ++step) {
    MaskedBatch batch = make_masked_batch(data, vocab, tcfg.mlm_rate, tcfg.msm_rate, step);
    pretrain_step(model, batch, optim, tcfg);
  }

  auto ranked = predict_next_basket(model, data[0], 3);
  CHECK(ranked[0] == 4);
}
