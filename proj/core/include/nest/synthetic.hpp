#pragma once

#include <cstdint>
#include <vector>

#include "nest/seqset.hpp"

namespace nest {

// Planted-structure generator: each subject follows a sticky latent topic
// chain and each set draws its tokens from the current topic's block of the
// vocabulary, plus uniform noise.
struct SyntheticConfig {
  std::size_t num_subjects = 100;
  std::size_t m = 8;             // sequence length target (sets per subject <= m)
  std::size_t n = 8;             // slots per set incl. [CLS]
  std::size_t vocab_size = 128;  // incl. the 4 reserved ids
  std::size_t num_topics = 4;
  double stickiness = 0.9;       // P(next topic == current topic)
  double noise = 0.1;            // P(token drawn off-topic)
  std::uint64_t seed = 0;

  void validate() const;
};

std::vector<RawSubject> generate_synthetic(const SyntheticConfig& cfg);

// Token name used by the generator for vocabulary index lookup.
std::string synthetic_token_name(std::size_t index);

}  // namespace nest
