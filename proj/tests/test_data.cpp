#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "nest/error.hpp"
#include "nest/instacart.hpp"
#include "nest/masking.hpp"
#include "nest/model.hpp"
#include "nest/seqset.hpp"
#include "nest/synthetic.hpp"
#include "nest/util.hpp"
#include "nest/vocab.hpp"

using namespace nest;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

SeqSet simple_subject(const Vocab& vocab, std::size_t n, std::size_t m,
                      const std::vector<std::vector<std::string>>& sets) {
  RawSubject raw;
  raw.subject_id = "s";
  double t = 0;
  for (const auto& tokens : sets) {
    raw.sets.push_back({t, tokens});
    t += 1;
  }
  return pad_truncate(raw, vocab, n, m);
}

}  // namespace

TEST_CASE("build_vocab ordering and thresholds") {
  Vocab v = Vocab::build({"a", "a", "b"}, 1);
  CHECK(v.size() == 6);
  CHECK(v.encode("a") == 4);
  CHECK(v.encode("b") == 5);
  CHECK(v.decode(4) == "a");

  Vocab v2 = Vocab::build({"a", "a", "b"}, 3);
  CHECK(v2.size() == 4);
  CHECK(v2.encode("a") == Vocab::kUnk);
  CHECK(v2.encode("b") == Vocab::kUnk);

  CHECK_THROWS_AS(Vocab::build({}, 1), InputError);

  // Count ties break lexicographically.
  Vocab v3 = Vocab::build({"zz", "aa", "zz", "aa", "mm"}, 1);
  CHECK(v3.encode("aa") == 4);
  CHECK(v3.encode("zz") == 5);
  CHECK(v3.encode("mm") == 6);
}

TEST_CASE("vocab reserved ids are fixed and round-trip through files") {
  Vocab v = Vocab::build({"x", "y"}, 1);
  CHECK(v.decode(Vocab::kPad) == "[PAD]");
  CHECK(v.decode(Vocab::kCls) == "[CLS]");
  CHECK(v.decode(Vocab::kMask) == "[MASK]");
  CHECK(v.decode(Vocab::kUnk) == "[UNK]");
  for (const std::string tok : {"x", "y"}) {
    CHECK(v.decode(v.encode(tok)) == tok);
  }

  const std::string path = temp_path("vocab_roundtrip.txt");
  v.save(path);
  Vocab loaded = Vocab::load(path);
  CHECK(loaded.size() == v.size());
  CHECK(loaded.encode("y") == v.encode("y"));
}

TEST_CASE("pad_truncate padding, truncation and recency") {
  Vocab v = Vocab::build({"a", "b", "c", "d", "e", "f", "g", "h"}, 1);

  SeqSet s = simple_subject(v, 4, 2, {{"a", "b"}});
  CHECK(s.token(0, 0) == Vocab::kCls);
  CHECK(s.token(0, 1) == v.encode("a"));
  CHECK(s.token(0, 2) == v.encode("b"));
  CHECK(s.token(0, 3) == Vocab::kPad);
  CHECK(s.set_valid == std::vector<std::uint8_t>{1, 0});
  for (std::size_t j = 0; j < 4; ++j) CHECK(s.token(1, j) == Vocab::kPad);
  validate_seqset(s);

  // m + 3 input sets: the first 3 are dropped.
  std::vector<std::vector<std::string>> five_sets{{"a"}, {"b"}, {"c"}, {"d"}, {"e"}};
  SeqSet s2 = simple_subject(v, 3, 2, five_sets);
  CHECK(s2.token(0, 1) == v.encode("d"));
  CHECK(s2.token(1, 1) == v.encode("e"));
  validate_seqset(s2);

  // Oversized set keeps exactly n-1 tokens, first-k in record order.
  SeqSet s3 = simple_subject(v, 4, 1, {{"a", "b", "c", "d", "e", "f", "g", "h"}});
  std::size_t kept = 0;
  for (std::size_t j = 1; j < 4; ++j) kept += s3.token_valid[j];
  CHECK(kept == 3);
  CHECK(s3.token(0, 1) == v.encode("a"));
  CHECK(s3.token(0, 3) == v.encode("c"));

  RawSubject raw{"x", {{0.0, {"a"}}}};
  CHECK_THROWS_AS(pad_truncate(raw, v, 1, 1), ConfigError);
  CHECK_THROWS_AS(pad_truncate(raw, v, 4, 0), ConfigError);
  RawSubject empty{"x", {}};
  CHECK_THROWS_AS(pad_truncate(empty, v, 4, 1), InputError);
}

TEST_CASE("empirical_set_distribution counts PAD mass and multiplicity") {
  Vocab v = Vocab::build({"a", "b", "c", "d"}, 1);  // |V| = 8
  std::vector<std::int32_t> row{Vocab::kCls, v.encode("a"), v.encode("a"), Vocab::kPad};
  auto p = empirical_set_distribution(row.data(), row.size(), v.size());
  CHECK(p[static_cast<std::size_t>(v.encode("a"))] == doctest::Approx(2.0 / 3.0));
  CHECK(p[Vocab::kPad] == doctest::Approx(1.0 / 3.0));

  std::vector<std::int32_t> all_pad{Vocab::kCls, Vocab::kPad, Vocab::kPad, Vocab::kPad};
  auto p2 = empirical_set_distribution(all_pad.data(), all_pad.size(), v.size());
  CHECK(p2[Vocab::kPad] == doctest::Approx(1.0));

  std::vector<std::int32_t> distinct{Vocab::kCls, 4, 5, 6};
  auto p3 = empirical_set_distribution(distinct.data(), distinct.size(), v.size());
  for (std::int32_t id : {4, 5, 6}) {
    CHECK(p3[static_cast<std::size_t>(id)] == doctest::Approx(1.0 / 3.0));
  }

  // Simplex + support-size property over random rows.
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 12;
    std::vector<std::int32_t> r(n, Vocab::kCls);
    for (std::size_t j = 1; j < n; ++j) {
      r[j] = static_cast<std::int32_t>(rng() % 2 == 0 ? Vocab::kPad : 4 + rng() % 4);
    }
    auto pr = empirical_set_distribution(r.data(), n, v.size());
    double sum = 0.0;
    std::size_t support = 0;
    for (double pv : pr) {
      sum += pv;
      support += pv > 0.0;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
    CHECK(support <= n - 1);
  }
}

TEST_CASE("apply_mlm_mask rates and corruption") {
  Vocab v = Vocab::build({"a", "b", "c", "d", "e", "f"}, 1);
  std::vector<SeqSet> batch;
  for (int i = 0; i < 80; ++i) {
    batch.push_back(simple_subject(v, 6, 5,
                                   {{"a", "b", "c", "d", "e"},
                                    {"b", "c", "d", "e", "f"},
                                    {"a", "c", "e", "b", "d"},
                                    {"f", "a", "b", "c", "e"},
                                    {"e", "d", "c", "b", "a"}}));
  }

  std::mt19937_64 rng(5);
  MlmOptions zero;
  zero.rate = 0.0;
  MlmView view0 = apply_mlm_mask(batch, v.size(), zero, rng);
  CHECK(view0.tokens == input_from_subjects(batch).tokens);
  for (auto s : view0.supervise) CHECK(s == 0);

  MlmOptions all;
  all.rate = 1.0;
  all.mask_prob = 1.0;
  all.random_prob = 0.0;
  std::mt19937_64 rng1(7);
  MlmView view1 = apply_mlm_mask(batch, v.size(), all, rng1);
  for (std::size_t i = 0; i < view1.tokens.size(); ++i) {
    const bool eligible =
        batch[i / 30].token_valid[i % 30] && (i % 6) != 0;
    if (eligible) {
      CHECK(view1.tokens[i] == Vocab::kMask);
      CHECK(view1.supervise[i] == 1);
    } else {
      CHECK(view1.supervise[i] == 0);
    }
  }

  // Statistical check: empirical selection rate within 3 sigma at n >= 1e5.
  std::vector<SeqSet> big;
  for (int i = 0; i < 4000; ++i) big.push_back(batch[static_cast<std::size_t>(i) % batch.size()]);
  std::mt19937_64 rng2(11);
  MlmOptions std_opt;
  MlmView view = apply_mlm_mask(big, v.size(), std_opt, rng2);
  std::size_t eligible = 0;
  std::size_t selected = 0;
  for (std::size_t i = 0; i < view.supervise.size(); ++i) {
    if (big[i / 30].token_valid[i % 30] && (i % 6) != 0) ++eligible;
    selected += view.supervise[i];
  }
  CHECK(eligible >= 100000);
  const double phat = static_cast<double>(selected) / static_cast<double>(eligible);
  const double sigma = std::sqrt(0.2 * 0.8 / static_cast<double>(eligible));
  CHECK(std::abs(phat - 0.2) < 3.0 * sigma);

  // Corruption split: ~80% MASK, ~10% random, ~10% unchanged among selected.
  std::size_t masked = 0;
  std::size_t unchanged = 0;
  std::size_t random_tok = 0;
  for (std::size_t i = 0; i < view.supervise.size(); ++i) {
    if (!view.supervise[i]) continue;
    if (view.tokens[i] == Vocab::kMask) {
      ++masked;
    } else if (view.tokens[i] == view.targets[i]) {
      ++unchanged;
    } else {
      ++random_tok;
    }
  }
  const double total = static_cast<double>(masked + unchanged + random_tok);
  CHECK(masked / total == doctest::Approx(0.8).epsilon(0.05));
  // "unchanged" also catches random draws that hit the original token.
  CHECK(unchanged / total == doctest::Approx(0.1).epsilon(0.5));
  CHECK(random_tok / total == doctest::Approx(0.1).epsilon(0.5));
}

TEST_CASE("apply_msm_mask full-set semantics") {
  Vocab v = Vocab::build({"a", "b"}, 1);
  std::vector<SeqSet> batch{simple_subject(v, 4, 2, {{"a", "b"}})};

  std::mt19937_64 rng(13);
  MsmView none = apply_msm_mask(batch, v.size(), 0.0, rng);
  CHECK(none.num_selected == 0);

  MsmView all = apply_msm_mask(batch, v.size(), 0.9999999, rng);
  REQUIRE(all.num_selected == 1);
  CHECK(all.tokens[0] == Vocab::kCls);
  for (std::size_t j = 1; j < 4; ++j) {
    CHECK(all.tokens[j] == Vocab::kMask);
    CHECK(all.token_valid[j] == 1);  // masked PAD slots become attendable
  }
  const auto a = static_cast<std::size_t>(v.encode("a"));
  const auto b = static_cast<std::size_t>(v.encode("b"));
  CHECK(all.targets[a] == doctest::Approx(1.0 / 3.0));
  CHECK(all.targets[b] == doctest::Approx(1.0 / 3.0));
  CHECK(all.targets[Vocab::kPad] == doctest::Approx(1.0 / 3.0));

  // Statistical rate over >= 1e4 valid sets.
  std::vector<SeqSet> big;
  for (int i = 0; i < 4000; ++i) {
    big.push_back(simple_subject(v, 3, 3, {{"a"}, {"b"}, {"a", "b"}}));
  }
  std::mt19937_64 rng2(17);
  MsmView view = apply_msm_mask(big, v.size(), 0.40, rng2);
  const std::size_t valid_sets = 3 * big.size();
  const double phat =
      static_cast<double>(view.num_selected) / static_cast<double>(valid_sets);
  const double sigma = std::sqrt(0.4 * 0.6 / static_cast<double>(valid_sets));
  CHECK(std::abs(phat - 0.4) < 3.0 * sigma);
}

TEST_CASE("masked batch views never mutate the originals") {
  Vocab v = Vocab::build({"a", "b", "c", "d"}, 1);
  std::vector<SeqSet> batch{simple_subject(v, 5, 3, {{"a", "b", "c"}, {"b", "d"}, {"c"}})};
  const std::vector<std::int32_t> before = batch[0].tokens;

  MaskedBatch mb = make_masked_batch(batch, v.size(), 0.5, 0.5, 99);
  CHECK(mb.subjects[0].tokens == before);

  // Views differ from the original only at corrupted positions.
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (!mb.mlm.supervise[i]) CHECK(mb.mlm.tokens[i] == before[i]);
  }
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t j = 0; j < 5; ++j) {
      const std::size_t i = s * 5 + j;
      if (mb.msm.set_selected[s]) {
        if (j > 0) CHECK(mb.msm.tokens[i] == Vocab::kMask);
      } else {
        CHECK(mb.msm.tokens[i] == before[i]);
      }
    }
  }

  // Same seed reproduces both views; corruption draws are independent streams.
  MaskedBatch mb2 = make_masked_batch(batch, v.size(), 0.5, 0.5, 99);
  CHECK(mb2.mlm.tokens == mb.mlm.tokens);
  CHECK(mb2.msm.tokens == mb.msm.tokens);
}

TEST_CASE("generate_synthetic determinism, stickiness and purity") {
  SyntheticConfig cfg;
  cfg.num_subjects = 60;
  cfg.m = 8;
  cfg.n = 8;
  cfg.vocab_size = 4 + 64;
  cfg.num_topics = 4;
  cfg.stickiness = 0.9;
  cfg.noise = 0.1;
  cfg.seed = 42;

  auto a = generate_synthetic(cfg);
  auto b = generate_synthetic(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].subject_id == b[i].subject_id);
    REQUIRE(a[i].sets.size() == b[i].sets.size());
    for (std::size_t s = 0; s < a[i].sets.size(); ++s) {
      CHECK(a[i].sets[s].time == b[i].sets[s].time);
      CHECK(a[i].sets[s].tokens == b[i].sets[s].tokens);
    }
  }

  // Near-1 stickiness: one topic block per subject.
  SyntheticConfig sticky = cfg;
  sticky.stickiness = 1.0 - 1e-12;
  sticky.noise = 0.0;
  auto c = generate_synthetic(sticky);
  const std::size_t block = 64 / 4;
  for (const RawSubject& subj : c) {
    std::set<std::size_t> topics_seen;
    for (const RawSet& set : subj.sets) {
      for (const std::string& tok : set.tokens) {
        const std::size_t idx = std::stoul(tok.substr(5));
        topics_seen.insert(idx / block);
      }
    }
    CHECK(topics_seen.size() == 1);
  }

  // Topic purity >= 90% at noise 0.1 (majority block per set).
  std::size_t on_topic = 0;
  std::size_t total = 0;
  for (const RawSubject& subj : a) {
    for (const RawSet& set : subj.sets) {
      std::map<std::size_t, std::size_t> counts;
      for (const std::string& tok : set.tokens) {
        ++counts[std::stoul(tok.substr(5)) / block];
      }
      std::size_t best = 0;
      for (auto& [topic, cnt] : counts) best = std::max(best, cnt);
      on_topic += best;
      total += set.tokens.size();
    }
  }
  CHECK(static_cast<double>(on_topic) / static_cast<double>(total) >= 0.9);

  SyntheticConfig bad = cfg;
  bad.stickiness = 1.0;
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
  bad = cfg;
  bad.num_topics = 100;
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
}

TEST_CASE("jsonl round trip") {
  std::vector<RawSubject> subjects{
      {"u1", {{0.0, {"a", "b"}}, {3.5, {"c"}}}},
      {"u2", {{1.0, {"a", "a"}}}},
  };
  const std::string path = temp_path("seqset_roundtrip.jsonl");
  save_jsonl(subjects, path);
  auto loaded = load_jsonl(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].subject_id == "u1");
  CHECK(loaded[0].sets[1].time == 3.5);
  CHECK(loaded[1].sets[0].tokens == std::vector<std::string>{"a", "a"});

  write_text_file(path, "{\"nope\": 1}\n");
  CHECK_THROWS_AS(load_jsonl(path), FormatError);
}

TEST_CASE("subject split is deterministic and roughly 80/10/10") {
  std::map<Split, std::size_t> counts;
  for (int i = 0; i < 5000; ++i) {
    ++counts[subject_split("subject_" + std::to_string(i))];
  }
  CHECK(counts[Split::kTrain] > 3700);
  CHECK(counts[Split::kValid] > 250);
  CHECK(counts[Split::kTest] > 250);
  CHECK(subject_split("abc") == subject_split("abc"));
}

TEST_CASE("instacart ingestion") {
  const std::string orders = temp_path("orders.csv");
  const std::string products = temp_path("order_products.csv");
  write_text_file(orders,
                  "order_id,user_id,eval_set,order_number,order_dow,order_hour_of_day,"
                  "days_since_prior_order\n"
                  "10,1,prior,1,2,8,\n"
                  "11,1,prior,2,3,9,7\n"
                  "20,2,prior,1,4,10,\n");
  write_text_file(products,
                  "order_id,product_id,add_to_cart_order,reordered\n"
                  "10,100,1,0\n"
                  "10,101,2,0\n"
                  "11,100,1,1\n"
                  "11,100,2,1\n"
                  "20,200,1,0\n");

  auto subjects = ingest_instacart(orders, products, 1.0);
  REQUIRE(subjects.size() == 2);
  const RawSubject& u1 = subjects[0];
  CHECK(u1.subject_id == "user_1");
  REQUIRE(u1.sets.size() == 2);
  CHECK(u1.sets[0].time == 0.0);   // missing gap counts as 0
  CHECK(u1.sets[1].time == 7.0);   // cumulative days
  CHECK(u1.sets[0].tokens == std::vector<std::string>{"product_100", "product_101"});
  // Duplicate product rows keep their multiplicity.
  CHECK(u1.sets[1].tokens == std::vector<std::string>{"product_100", "product_100"});

  // Missing column.
  write_text_file(orders, "order_id,user_id,order_number\n1,1,1\n");
  CHECK_THROWS_AS(ingest_instacart(orders, products, 1.0), FormatError);

  // Unknown order reference with the full sample.
  write_text_file(orders,
                  "order_id,user_id,order_number,days_since_prior_order\n10,1,1,\n");
  write_text_file(products, "order_id,product_id\n999,5\n");
  CHECK_THROWS_AS(ingest_instacart(orders, products, 1.0), ConsistencyError);
}

TEST_CASE("instacart sampling keeps a deterministic user subset") {
  const std::string orders = temp_path("orders_big.csv");
  const std::string products = temp_path("order_products_big.csv");
  std::string otext = "order_id,user_id,order_number,days_since_prior_order\n";
  std::string ptext = "order_id,product_id\n";
  for (int u = 0; u < 200; ++u) {
    otext += std::to_string(u) + "," + std::to_string(u) + ",1,\n";
    ptext += std::to_string(u) + ",7\n";
  }
  write_text_file(orders, otext);
  write_text_file(products, ptext);

  auto all = ingest_instacart(orders, products, 1.0);
  CHECK(all.size() == 200);
  auto half = ingest_instacart(orders, products, 0.5);
  CHECK(half.size() > 60);
  CHECK(half.size() < 140);
  auto half2 = ingest_instacart(orders, products, 0.5);
  CHECK(half.size() == half2.size());
}

TEST_CASE("every constructor output satisfies the seqset invariants") {
  SyntheticConfig cfg;
  cfg.num_subjects = 25;
  cfg.m = 6;
  cfg.n = 5;
  cfg.vocab_size = 40;
  cfg.num_topics = 3;
  cfg.seed = 7;
  auto raw = generate_synthetic(cfg);
  std::vector<std::string> stream;
  for (auto& s : raw) {
    for (auto& set : s.sets) stream.insert(stream.end(), set.tokens.begin(), set.tokens.end());
  }
  Vocab v = Vocab::build(stream, 1);
  for (const RawSubject& subj : raw) {
    validate_seqset(pad_truncate(subj, v, cfg.n, cfg.m));
  }
}
