#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nest/masking.hpp"
#include "nest/ops.hpp"
#include "nest/seqset.hpp"
#include "nest/tensor.hpp"

namespace nest {

struct NestConfig {
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t n_heads = 2;
  std::size_t d_head = 32;
  std::size_t vocab_size = 0;
  std::size_t n = 8;
  std::size_t m = 8;
  double rope_base = 10000.0;
  double dropout = 0.0;
  std::size_t probe_classes = 2;
  bool cls_gets_time2vec = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// One pre-LN transformer block: attention sublayer + SwiGLU feed-forward,
// bias-free projections and norm gains only.
struct BlockWeights {
  Tensor ln_attn_gain;
  Tensor w_q, w_k, w_v, w_o;
  Tensor ln_ffn_gain;
  Tensor w_in, w_gate, w_out;
};

// Flattened batch fed to the encoders: B subjects, each m sets of n slots.
struct ModelInput {
  std::size_t batch = 0;
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<std::int32_t> tokens;       // B*m*n
  std::vector<std::uint8_t> token_valid;  // B*m*n
  std::vector<std::uint8_t> set_valid;    // B*m
  std::vector<double> set_times;          // B*m
};

ModelInput input_from_subjects(const std::vector<SeqSet>& subjects);
ModelInput input_from_mlm(const MaskedBatch& batch);
ModelInput input_from_msm(const MaskedBatch& batch);

// x + MHA(LN(x)) followed by x + FFN(LN(x)); `positions` null disables rotary.
Tensor transformer_block(const BlockWeights& w, const Tensor& x, std::size_t group_size,
                         std::size_t n_heads, const std::vector<std::uint8_t>& key_valid,
                         const std::vector<long>* positions, double rope_base, double dropout_rate,
                         std::mt19937_64* rng);

// Set-wise encoder sublayer: attention within each group of `n` slots, no
// positional transform of any kind.
Tensor swe_apply(const BlockWeights& w, const Tensor& x, std::size_t n, std::size_t n_heads,
                 const std::vector<std::uint8_t>& token_valid, double dropout_rate = 0.0,
                 std::mt19937_64* rng = nullptr);

// Cross-set encoder sublayer: attention over per-set CLS states with rotary
// set-position encoding on queries and keys.
Tensor cse_apply(const BlockWeights& w, const Tensor& cls_states, std::size_t m,
                 std::size_t n_heads, const std::vector<std::uint8_t>& set_valid,
                 const std::vector<long>& positions, double rope_base, double dropout_rate = 0.0,
                 std::mt19937_64* rng = nullptr);

class NestModel {
 public:
  static NestModel init(const NestConfig& cfg);

  const NestConfig& config() const { return config_; }

  // Hidden states for every slot: (B*m*n) x d_model.
  Tensor encode(const ModelInput& in, std::mt19937_64* dropout_rng = nullptr) const;

  // Tied decoder: logits = hidden . embedding^T (no extra parameters).
  Tensor mlm_logits(const Tensor& hidden) const;

  Tensor msm_logits(const Tensor& cls_hidden) const;
  Tensor msm_head(const Tensor& cls_hidden) const;  // softmax of msm_logits

  Tensor probe_logits(const Tensor& cls_hidden) const;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;

  // Row index of the CLS slot of (subject b, set i) in encode()'s output.
  std::size_t cls_row(std::size_t b, std::size_t i) const;

  Tensor embedding;
  Tensor t2v_omega, t2v_phi;
  std::vector<BlockWeights> swe_layers;
  std::vector<BlockWeights> cse_layers;
  Tensor final_gain;
  Tensor msm_w1, msm_w2;
  Tensor probe_w1, probe_w2;

 private:
  NestConfig config_;
};

// Shared initializer conventions (also used by the flat baseline).
Tensor init_normal(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng);
BlockWeights init_block(std::size_t d_model, std::size_t d_ff, std::mt19937_64& rng);
void append_block_parameters(const std::string& prefix, const BlockWeights& w,
                             std::vector<std::pair<std::string, Tensor>>& out);

}  // namespace nest
