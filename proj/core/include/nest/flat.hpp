#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "nest/model.hpp"

namespace nest {

// Dense full-attention baseline over the flattened token grid. Same layer
// recipe as the set-wise encoder (bias-free, pre-LN, SwiGLU), one attention
// over all N = n*m positions per layer, rotary encoding at the flat index.
struct FlatConfig {
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t n_heads = 2;
  std::size_t d_head = 32;
  std::size_t vocab_size = 0;
  std::size_t context = 64;  // N = n*m of the paired hierarchical config
  double rope_base = 10000.0;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  static FlatConfig paired_with(const NestConfig& cfg);
};

// Row-major flattening of one subject's grid; every token carries its set's
// time and validity.
struct FlatSequence {
  std::string subject_id;
  std::size_t length = 0;
  std::vector<std::int32_t> tokens;
  std::vector<double> times;
  std::vector<std::uint8_t> valid;
};

FlatSequence flatten_seqset(const SeqSet& s);

class FlatModel {
 public:
  static FlatModel init(const FlatConfig& cfg);

  const FlatConfig& config() const { return config_; }

  // Accepts the same grid input as the hierarchical model; rows are treated
  // as independent length-N sequences per subject.
  Tensor encode(const ModelInput& in, std::mt19937_64* dropout_rng = nullptr) const;

  Tensor mlm_logits(const Tensor& hidden) const;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;

  Tensor embedding;
  Tensor t2v_omega, t2v_phi;
  std::vector<BlockWeights> layers;
  Tensor final_gain;

 private:
  FlatConfig config_;
};

}  // namespace nest
