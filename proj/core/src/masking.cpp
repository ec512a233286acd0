#include "nest/masking.hpp"

#include "nest/error.hpp"
#include "nest/util.hpp"

namespace nest {

MlmView apply_mlm_mask(const std::vector<SeqSet>& batch, std::size_t vocab_size,
                       const MlmOptions& opt, std::mt19937_64& rng) {
  if (opt.rate < 0.0 || opt.rate > 1.0) throw ConfigError("apply_mlm_mask: rate outside [0, 1]");
  if (vocab_size <= Vocab::kNumReserved) throw ConfigError("apply_mlm_mask: vocabulary too small");

  MlmView view;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::int32_t> random_token(
      Vocab::kNumReserved, static_cast<std::int32_t>(vocab_size) - 1);

  for (const SeqSet& s : batch) {
    for (std::size_t i = 0; i < s.m; ++i) {
      for (std::size_t j = 0; j < s.n; ++j) {
        const std::int32_t id = s.token(i, j);
        view.tokens.push_back(id);
        view.targets.push_back(id);
        const bool eligible = s.set_valid[i] && j != 0 && s.token_valid[i * s.n + j];
        bool selected = false;
        if (eligible && opt.rate > 0.0 && unit(rng) < opt.rate) {
          selected = true;
          const double roll = unit(rng);
          if (roll < opt.mask_prob) {
            view.tokens.back() = Vocab::kMask;
          } else if (roll < opt.mask_prob + opt.random_prob) {
            view.tokens.back() = random_token(rng);
          }  // else: keep the original token
        }
        view.supervise.push_back(selected ? 1 : 0);
      }
    }
  }
  return view;
}

MsmView apply_msm_mask(const std::vector<SeqSet>& batch, std::size_t vocab_size, double rate,
                       std::mt19937_64& rng) {
  if (rate < 0.0 || rate > 1.0) throw ConfigError("apply_msm_mask: rate outside [0, 1]");

  MsmView view;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const SeqSet& s : batch) {
    for (std::size_t i = 0; i < s.m; ++i) {
      const bool selected = s.set_valid[i] && rate > 0.0 && unit(rng) < rate;
      view.set_selected.push_back(selected ? 1 : 0);
      if (selected) {
        auto p = empirical_set_distribution(s.tokens.data() + i * s.n, s.n, vocab_size);
        view.targets.insert(view.targets.end(), p.begin(), p.end());
        ++view.num_selected;
      }
      for (std::size_t j = 0; j < s.n; ++j) {
        if (selected) {
          view.tokens.push_back(j == 0 ? Vocab::kCls : Vocab::kMask);
          view.token_valid.push_back(1);  // masked slots become attendable
        } else {
          view.tokens.push_back(s.token(i, j));
          view.token_valid.push_back(s.token_valid[i * s.n + j]);
        }
      }
    }
  }
  return view;
}

MaskedBatch make_masked_batch(std::vector<SeqSet> batch, std::size_t vocab_size, double mlm_rate,
                              double msm_rate, std::uint64_t seed) {
  MaskedBatch out;
  out.subjects = std::move(batch);
  std::mt19937_64 mlm_rng(derive_seed(seed, 0x6d6c6d));  // "mlm"
  std::mt19937_64 msm_rng(derive_seed(seed, 0x6d736d));  // "msm"
  MlmOptions opt;
  opt.rate = mlm_rate;
  out.mlm = apply_mlm_mask(out.subjects, vocab_size, opt, mlm_rng);
  out.msm = apply_msm_mask(out.subjects, vocab_size, msm_rate, msm_rng);
  return out;
}

}  // namespace nest
