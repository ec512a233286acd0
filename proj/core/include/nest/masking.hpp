#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "nest/seqset.hpp"

namespace nest {

// Token-level corruption view. Selected positions are corrupted 80/10/10
// (MASK / random vocab token / unchanged); targets hold the original ids.
struct MlmView {
  std::vector<std::int32_t> tokens;      // B*m*n
  std::vector<std::int32_t> targets;     // B*m*n
  std::vector<std::uint8_t> supervise;   // B*m*n
};

// Set-level corruption view. In selected sets every non-CLS slot (including
// [PAD]) becomes [MASK] and turns attendable; targets are the empirical
// distributions of the pre-mask rows, one row per selected set in scan order.
struct MsmView {
  std::vector<std::int32_t> tokens;        // B*m*n
  std::vector<std::uint8_t> token_valid;   // B*m*n
  std::vector<std::uint8_t> set_selected;  // B*m
  std::vector<double> targets;             // (#selected) x vocab_size, row-major
  std::size_t num_selected = 0;
};

struct MaskedBatch {
  std::vector<SeqSet> subjects;
  MlmView mlm;
  MsmView msm;
};

struct MlmOptions {
  double rate = 0.20;
  double mask_prob = 0.8;    // remainder split evenly: random token / unchanged
  double random_prob = 0.1;
};

MlmView apply_mlm_mask(const std::vector<SeqSet>& batch, std::size_t vocab_size,
                       const MlmOptions& opt, std::mt19937_64& rng);

MsmView apply_msm_mask(const std::vector<SeqSet>& batch, std::size_t vocab_size, double rate,
                       std::mt19937_64& rng);

// Both views drawn independently from one rng stream.
MaskedBatch make_masked_batch(std::vector<SeqSet> batch, std::size_t vocab_size, double mlm_rate,
                              double msm_rate, std::uint64_t seed);

}  // namespace nest
