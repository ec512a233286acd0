#include "nest/model.hpp"

#include <cmath>

#include "nest/error.hpp"
#include "nest/util.hpp"

namespace nest {

void NestConfig::validate() const {
  if (layers < 1 || d_model < 1 || d_ff < 1 || n_heads < 1 || d_head < 1 || n < 2 || m < 1) {
    throw ConfigError("nest config: all extents must be >= 1 (and n >= 2)");
  }
  if (n_heads * d_head != d_model) {
    throw ConfigError("nest config: n_heads * d_head must equal d_model");
  }
  if (d_head % 2 != 0) throw ConfigError("nest config: d_head must be even");
  if (vocab_size <= Vocab::kNumReserved) throw ConfigError("nest config: vocabulary too small");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("nest config: dropout outside [0, 1)");
}

ModelInput input_from_subjects(const std::vector<SeqSet>& subjects) {
  if (subjects.empty()) throw InputError("input_from_subjects: empty batch");
  ModelInput in;
  in.batch = subjects.size();
  in.m = subjects.front().m;
  in.n = subjects.front().n;
  for (const SeqSet& s : subjects) {
    if (s.m != in.m || s.n != in.n) throw InputError("input_from_subjects: mixed (m, n)");
    in.tokens.insert(in.tokens.end(), s.tokens.begin(), s.tokens.end());
    in.token_valid.insert(in.token_valid.end(), s.token_valid.begin(), s.token_valid.end());
    in.set_valid.insert(in.set_valid.end(), s.set_valid.begin(), s.set_valid.end());
    in.set_times.insert(in.set_times.end(), s.set_times.begin(), s.set_times.end());
  }
  return in;
}

ModelInput input_from_mlm(const MaskedBatch& batch) {
  ModelInput in = input_from_subjects(batch.subjects);
  in.tokens = batch.mlm.tokens;  // corruption never changes validity
  return in;
}

ModelInput input_from_msm(const MaskedBatch& batch) {
  ModelInput in = input_from_subjects(batch.subjects);
  in.tokens = batch.msm.tokens;
  in.token_valid = batch.msm.token_valid;
  return in;
}

Tensor transformer_block(const BlockWeights& w, const Tensor& x, std::size_t group_size,
                         std::size_t n_heads, const std::vector<std::uint8_t>& key_valid,
                         const std::vector<long>* positions, double rope_base, double dropout_rate,
                         std::mt19937_64* rng) {
  AttentionSpec spec;
  spec.group_size = group_size;
  spec.n_heads = n_heads;
  spec.key_valid = &key_valid;
  spec.positions = positions;
  spec.rope_base = rope_base;

  Tensor h = layer_norm_biasfree(x, w.ln_attn_gain);
  Tensor attn = multihead_attention(h, w.w_q, w.w_k, w.w_v, w.w_o, spec);
  if (dropout_rate > 0.0 && rng != nullptr) attn = dropout(attn, dropout_rate, *rng);
  Tensor mid = add(x, attn);

  Tensor h2 = layer_norm_biasfree(mid, w.ln_ffn_gain);
  Tensor ffn = swiglu_ffn(h2, w.w_in, w.w_gate, w.w_out);
  if (dropout_rate > 0.0 && rng != nullptr) ffn = dropout(ffn, dropout_rate, *rng);
  return add(mid, ffn);
}

Tensor swe_apply(const BlockWeights& w, const Tensor& x, std::size_t n, std::size_t n_heads,
                 const std::vector<std::uint8_t>& token_valid, double dropout_rate,
                 std::mt19937_64* rng) {
  return transformer_block(w, x, n, n_heads, token_valid, nullptr, 0.0, dropout_rate, rng);
}

Tensor cse_apply(const BlockWeights& w, const Tensor& cls_states, std::size_t m,
                 std::size_t n_heads, const std::vector<std::uint8_t>& set_valid,
                 const std::vector<long>& positions, double rope_base, double dropout_rate,
                 std::mt19937_64* rng) {
  bool any_valid = false;
  for (auto v : set_valid) {
    if (v) {
      any_valid = true;
      break;
    }
  }
  if (!any_valid) throw InputError("cse_apply: no valid sets");
  return transformer_block(w, cls_states, m, n_heads, set_valid, &positions, rope_base,
                           dropout_rate, rng);
}

Tensor init_normal(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

BlockWeights init_block(std::size_t d_model, std::size_t d_ff, std::mt19937_64& rng) {
  constexpr double kStd = 0.02;
  BlockWeights w;
  w.ln_attn_gain = Tensor::full({d_model}, 1.0, true);
  w.w_q = init_normal({d_model, d_model}, kStd, rng);
  w.w_k = init_normal({d_model, d_model}, kStd, rng);
  w.w_v = init_normal({d_model, d_model}, kStd, rng);
  w.w_o = init_normal({d_model, d_model}, kStd, rng);
  w.ln_ffn_gain = Tensor::full({d_model}, 1.0, true);
  w.w_in = init_normal({d_model, d_ff}, kStd, rng);
  w.w_gate = init_normal({d_model, d_ff}, kStd, rng);
  w.w_out = init_normal({d_ff, d_model}, kStd, rng);
  return w;
}

void append_block_parameters(const std::string& prefix, const BlockWeights& w,
                             std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".ln_attn_gain", w.ln_attn_gain);
  out.emplace_back(prefix + ".w_q", w.w_q);
  out.emplace_back(prefix + ".w_k", w.w_k);
  out.emplace_back(prefix + ".w_v", w.w_v);
  out.emplace_back(prefix + ".w_o", w.w_o);
  out.emplace_back(prefix + ".ln_ffn_gain", w.ln_ffn_gain);
  out.emplace_back(prefix + ".w_in", w.w_in);
  out.emplace_back(prefix + ".w_gate", w.w_gate);
  out.emplace_back(prefix + ".w_out", w.w_out);
}

NestModel NestModel::init(const NestConfig& cfg) {
  cfg.validate();
  NestModel model;
  model.config_ = cfg;
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x6e657374));  // "nest"

  model.embedding = init_normal({cfg.vocab_size, cfg.d_model}, 0.02, rng);
  // Time-encoding parameters start at the embedding scale: amplitude-1
  // sinusoids drown the 0.02-scale token content and stall training at this
  // size; frequencies grow by gradient as the data demands.
  model.t2v_omega = init_normal({cfg.d_model}, 0.02, rng);
  model.t2v_phi = init_normal({cfg.d_model}, 0.02, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    model.swe_layers.push_back(init_block(cfg.d_model, cfg.d_ff, rng));
    model.cse_layers.push_back(init_block(cfg.d_model, cfg.d_ff, rng));
  }
  model.final_gain = Tensor::full({cfg.d_model}, 1.0, true);
  model.msm_w1 = init_normal({cfg.d_model, cfg.d_model}, 0.02, rng);
  model.msm_w2 = init_normal({cfg.d_model, cfg.vocab_size}, 0.02, rng);
  model.probe_w1 = init_normal({cfg.d_model, cfg.d_model}, 0.02, rng);
  model.probe_w2 = init_normal({cfg.d_model, cfg.probe_classes}, 0.02, rng);
  return model;
}

std::size_t NestModel::cls_row(std::size_t b, std::size_t i) const {
  return (b * config_.m + i) * config_.n;
}

Tensor NestModel::encode(const ModelInput& in, std::mt19937_64* dropout_rng) const {
  const NestConfig& cfg = config_;
  if (in.batch == 0) throw InputError("encode: empty batch");
  if (in.m != cfg.m || in.n != cfg.n) throw InputError("encode: input (m, n) mismatch");
  const std::size_t num_sets = in.batch * cfg.m;
  const std::size_t rows = num_sets * cfg.n;
  if (in.tokens.size() != rows || in.token_valid.size() != rows ||
      in.set_valid.size() != num_sets || in.set_times.size() != num_sets) {
    throw InputError("encode: input field sizes inconsistent");
  }

  Tensor x = embedding_lookup(embedding, in.tokens);

  Tensor t2v = time2vec_embed(t2v_omega, t2v_phi, in.set_times);
  Tensor t2v_rows = repeat_rows(t2v, cfg.n);

  std::vector<std::size_t> cls_rows(num_sets);
  for (std::size_t s = 0; s < num_sets; ++s) cls_rows[s] = s * cfg.n;
  if (!cfg.cls_gets_time2vec) {
    t2v_rows = replace_rows(t2v_rows, cls_rows, Tensor::zeros({num_sets, cfg.d_model}));
  }
  x = add(x, t2v_rows);

  std::vector<long> set_positions(num_sets);
  for (std::size_t s = 0; s < num_sets; ++s) set_positions[s] = static_cast<long>(s % cfg.m);

  const double rate = dropout_rng != nullptr ? cfg.dropout : 0.0;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    x = swe_apply(swe_layers[l], x, cfg.n, cfg.n_heads, in.token_valid, rate, dropout_rng);
    Tensor cls = gather_rows(x, cls_rows);
    cls = cse_apply(cse_layers[l], cls, cfg.m, cfg.n_heads, in.set_valid, set_positions,
                    cfg.rope_base, rate, dropout_rng);
    x = replace_rows(x, cls_rows, cls);
  }
  return layer_norm_biasfree(x, final_gain);
}

Tensor NestModel::mlm_logits(const Tensor& hidden) const {
  return matmul(hidden, embedding, false, true);
}

Tensor NestModel::msm_logits(const Tensor& cls_hidden) const {
  Tensor h = gelu(matmul(cls_hidden, msm_w1));
  return matmul(h, msm_w2);
}

Tensor NestModel::msm_head(const Tensor& cls_hidden) const {
  return softmax_rows(msm_logits(cls_hidden));
}

Tensor NestModel::probe_logits(const Tensor& cls_hidden) const {
  Tensor h = gelu(matmul(cls_hidden, probe_w1));
  return matmul(h, probe_w2);
}

std::vector<std::pair<std::string, Tensor>> NestModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding", embedding);
  out.emplace_back("t2v.omega", t2v_omega);
  out.emplace_back("t2v.phi", t2v_phi);
  for (std::size_t l = 0; l < swe_layers.size(); ++l) {
    append_block_parameters("layer" + std::to_string(l) + ".swe", swe_layers[l], out);
    append_block_parameters("layer" + std::to_string(l) + ".cse", cse_layers[l], out);
  }
  out.emplace_back("final_gain", final_gain);
  out.emplace_back("msm_head.w1", msm_w1);
  out.emplace_back("msm_head.w2", msm_w2);
  out.emplace_back("probe.w1", probe_w1);
  out.emplace_back("probe.w2", probe_w2);
  return out;
}

std::vector<Tensor> NestModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

}  // namespace nest
