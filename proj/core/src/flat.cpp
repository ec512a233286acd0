#include "nest/flat.hpp"

#include <cmath>

#include "nest/error.hpp"
#include "nest/util.hpp"

namespace nest {

void FlatConfig::validate() const {
  if (layers < 1 || d_model < 1 || d_ff < 1 || n_heads < 1 || d_head < 1 || context < 1) {
    throw ConfigError("flat config: all extents must be >= 1");
  }
  if (n_heads * d_head != d_model) {
    throw ConfigError("flat config: n_heads * d_head must equal d_model");
  }
  if (d_head % 2 != 0) throw ConfigError("flat config: d_head must be even");
  if (vocab_size <= Vocab::kNumReserved) throw ConfigError("flat config: vocabulary too small");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("flat config: dropout outside [0, 1)");
}

FlatConfig FlatConfig::paired_with(const NestConfig& cfg) {
  FlatConfig f;
  f.layers = cfg.layers;
  f.d_model = cfg.d_model;
  f.d_ff = cfg.d_ff;
  f.n_heads = cfg.n_heads;
  f.d_head = cfg.d_head;
  f.vocab_size = cfg.vocab_size;
  f.context = cfg.n * cfg.m;
  f.rope_base = cfg.rope_base;
  f.dropout = cfg.dropout;
  f.seed = cfg.seed;
  return f;
}

FlatSequence flatten_seqset(const SeqSet& s) {
  FlatSequence out;
  out.subject_id = s.subject_id;
  out.length = s.m * s.n;
  out.tokens = s.tokens;
  out.valid = s.token_valid;
  out.times.resize(out.length);
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) out.times[i * s.n + j] = s.set_times[i];
  }
  return out;
}

FlatModel FlatModel::init(const FlatConfig& cfg) {
  cfg.validate();
  FlatModel model;
  model.config_ = cfg;
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x666c6174));  // "flat"

  model.embedding = init_normal({cfg.vocab_size, cfg.d_model}, 0.02, rng);
  model.t2v_omega = init_normal({cfg.d_model}, 0.02, rng);
  model.t2v_phi = init_normal({cfg.d_model}, 0.02, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    model.layers.push_back(init_block(cfg.d_model, cfg.d_ff, rng));
  }
  model.final_gain = Tensor::full({cfg.d_model}, 1.0, true);
  return model;
}

Tensor FlatModel::encode(const ModelInput& in, std::mt19937_64* dropout_rng) const {
  const FlatConfig& cfg = config_;
  if (in.batch == 0) throw InputError("flat encode: empty batch");
  const std::size_t per_subject = in.m * in.n;
  if (per_subject != cfg.context) throw InputError("flat encode: context length mismatch");
  const std::size_t rows = in.batch * per_subject;
  if (in.tokens.size() != rows) throw InputError("flat encode: input field sizes inconsistent");

  Tensor x = embedding_lookup(embedding, in.tokens);
  Tensor t2v = time2vec_embed(t2v_omega, t2v_phi, in.set_times);
  x = add(x, repeat_rows(t2v, in.n));

  std::vector<long> positions(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    positions[r] = static_cast<long>(r % per_subject);
  }

  const double rate = dropout_rng != nullptr ? cfg.dropout : 0.0;
  Tensor h = x;
  for (const BlockWeights& w : layers) {
    h = transformer_block(w, h, per_subject, cfg.n_heads, in.token_valid, &positions,
                          cfg.rope_base, rate, dropout_rng);
  }
  return layer_norm_biasfree(h, final_gain);
}

Tensor FlatModel::mlm_logits(const Tensor& hidden) const {
  return matmul(hidden, embedding, false, true);
}

std::vector<std::pair<std::string, Tensor>> FlatModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding", embedding);
  out.emplace_back("t2v.omega", t2v_omega);
  out.emplace_back("t2v.phi", t2v_phi);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    append_block_parameters("layer" + std::to_string(l), layers[l], out);
  }
  out.emplace_back("final_gain", final_gain);
  return out;
}

std::vector<Tensor> FlatModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

}  // namespace nest
