#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "nest/tensor.hpp"

namespace nest {

// Differentiable operations. Each op evaluates eagerly and, when a tape is
// active and any input requires grad, records its vector-Jacobian product.

// C = op(A) . op(B) with optional transposes; 2-D operands only.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double factor);
Tensor sum_all(const Tensor& a);

// Row-wise softmax over the last dimension. `keep`, when given, flags the
// entries that participate (row-major, same extents as x); excluded entries
// are exactly 0 in the output. A row with no kept entry is an error.
Tensor softmax_rows(const Tensor& x, const std::vector<std::uint8_t>* keep = nullptr);

// Per-row zero-mean unit-variance normalization scaled by `gain`; no bias.
Tensor layer_norm_biasfree(const Tensor& x, const Tensor& gain, double eps = 1e-5);

// (silu(x W_gate) * (x W_in)) W_out with silu(z) = z * sigmoid(z).
Tensor swiglu_ffn(const Tensor& x, const Tensor& w_in, const Tensor& w_gate, const Tensor& w_out);

Tensor gelu(const Tensor& x);

// Rotary encoding: coordinate pairs (2i, 2i+1) of each row rotated by
// position * base^(-2i/d). The two-arg form rotates every row at the same
// position; the vector form takes one position per row.
Tensor rope_rotate(const Tensor& x, long position, double base = 10000.0);
Tensor rope_rotate(const Tensor& x, const std::vector<long>& positions, double base = 10000.0);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids);

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);
Tensor replace_rows(const Tensor& x, const std::vector<std::size_t>& rows,
                    const Tensor& replacement);
// Each row of x emitted `times` times consecutively.
Tensor repeat_rows(const Tensor& x, std::size_t times);

// One embedding row per time value: out[r][0] = omega[0]*t_r + phi[0],
// out[r][i] = sin(omega[i]*t_r + phi[i]) for i >= 1.
Tensor time2vec_embed(const Tensor& omega, const Tensor& phi, const std::vector<double>& times);

// Multi-head scaled dot-product attention over independent groups of
// `group_size` consecutive rows. Projections are head-packed d_model x d_model
// matrices. Invalid keys are masked additively before the softmax; a query row
// whose group has no valid key yields a zero attention output (the caller's
// residual path then passes the input through).
struct AttentionSpec {
  std::size_t group_size = 0;
  std::size_t n_heads = 1;
  const std::vector<std::uint8_t>* key_valid = nullptr;  // per row of x; null = all valid
  const std::vector<long>* positions = nullptr;          // per row of x; null = no rotary
  double rope_base = 10000.0;
};

Tensor multihead_attention(const Tensor& x, const Tensor& w_q, const Tensor& w_k,
                           const Tensor& w_v, const Tensor& w_o, const AttentionSpec& spec);

// Mean negative log-softmax probability of `targets` over supervised rows.
Tensor masked_cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& targets,
                            const std::vector<std::uint8_t>& supervise);

// Mean over rows of D_KL(p_row || softmax(logits_row)). Each p row must be a
// simplex vector (sum 1 within 1e-6, entries >= 0). d/dlogits = (pi - p)/rows.
Tensor kl_simplex_loss(const Tensor& p, const Tensor& logits);

}  // namespace nest
