#include "nest/synthetic.hpp"

#include <cstdio>
#include <random>

#include "nest/error.hpp"
#include "nest/util.hpp"

namespace nest {

void SyntheticConfig::validate() const {
  if (num_subjects == 0) throw ConfigError("synthetic: num_subjects must be >= 1");
  if (m < 1 || n < 2) throw ConfigError("synthetic: need m >= 1 and n >= 2");
  if (vocab_size <= Vocab::kNumReserved + 1) throw ConfigError("synthetic: vocabulary too small");
  if (num_topics == 0 || num_topics > vocab_size - Vocab::kNumReserved) {
    throw ConfigError("synthetic: num_topics must lie in [1, vocab_size - 4]");
  }
  if (!(stickiness > 0.0 && stickiness < 1.0)) {
    throw ConfigError("synthetic: stickiness must lie in (0, 1)");
  }
  if (noise < 0.0 || noise > 1.0) throw ConfigError("synthetic: noise outside [0, 1]");
}

std::string synthetic_token_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "item_%06zu", index);
  return buf;
}

std::vector<RawSubject> generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t usable = cfg.vocab_size - Vocab::kNumReserved;
  const std::size_t block = usable / cfg.num_topics;
  if (block == 0) throw ConfigError("synthetic: more topics than usable tokens");

  std::vector<RawSubject> subjects;
  subjects.reserve(cfg.num_subjects);
  for (std::size_t s = 0; s < cfg.num_subjects; ++s) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 0x746f70, s));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> topic_dist(0, cfg.num_topics - 1);
    std::uniform_int_distribution<std::size_t> any_token(0, usable - 1);
    std::uniform_int_distribution<std::size_t> num_sets(std::max<std::size_t>(1, cfg.m / 2),
                                                        cfg.m);
    std::uniform_int_distribution<std::size_t> set_size(
        std::max<std::size_t>(1, (cfg.n - 1) / 2), cfg.n - 1);
    std::uniform_int_distribution<int> gap(1, 10);

    RawSubject subj;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "subj_%06zu", s);
    subj.subject_id = idbuf;

    std::size_t topic = topic_dist(rng);
    double t = 0.0;
    const std::size_t sets = num_sets(rng);
    for (std::size_t i = 0; i < sets; ++i) {
      if (i > 0) {
        t += gap(rng);
        if (unit(rng) >= cfg.stickiness) {
          // Jump to a different topic when more than one exists.
          if (cfg.num_topics > 1) {
            std::size_t next = topic_dist(rng);
            while (next == topic) next = topic_dist(rng);
            topic = next;
          }
        }
      }
      RawSet set;
      set.time = t;
      const std::size_t k = set_size(rng);
      std::uniform_int_distribution<std::size_t> block_token(topic * block,
                                                             topic * block + block - 1);
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t idx = unit(rng) < cfg.noise ? any_token(rng) : block_token(rng);
        set.tokens.push_back(synthetic_token_name(idx));
      }
      subj.sets.push_back(std::move(set));
    }
    subjects.push_back(std::move(subj));
  }
  return subjects;
}

}  // namespace nest
