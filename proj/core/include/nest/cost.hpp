#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nest/flat.hpp"
#include "nest/model.hpp"

namespace nest {

enum class Arch { kDense, kNest };

Arch arch_from_string(const std::string& name);
std::string arch_name(Arch arch);

// Analytic FLOPs per input token. Convention (2 FLOPs per multiply-add):
// QKV/O projections, QK^T scores, attention-times-values, the three SwiGLU
// matrices, and the tied vocabulary projection; softmax, norms, rotary and
// time encodings excluded.
double count_flops_per_token(const NestConfig& cfg, Arch arch);

// Exact parameter count excluding task heads (the tied decoder adds none).
std::size_t count_params(const NestConfig& cfg, Arch arch);

struct AttentionMemoryEstimate {
  std::size_t per_layer_head = 0;  // score-matrix elements
  std::size_t total = 0;           // layers * heads * per_layer_head
  std::string complexity;          // asymptotic class label
};

AttentionMemoryEstimate attention_memory_estimate(const NestConfig& cfg, Arch arch);

struct ThroughputResult {
  double mean_tokens_per_sec = 0.0;
  double std_tokens_per_sec = 0.0;
  std::size_t trials = 0;
  std::vector<double> per_trial;
};

// Wall-clock tokens/sec of `run_trial` (a full forward+backward returning the
// loss), warmup iterations discarded. Non-finite losses abort the run.
ThroughputResult measure_throughput(const std::function<double(std::size_t)>& run_trial,
                                    std::size_t tokens_per_trial, std::size_t trials,
                                    std::size_t warmup);

// One MLM forward+backward over a randomly generated batch, processed one
// subject at a time with gradient accumulation. Returns the summed loss.
// Both models consume the same (m, n) grid so the generated data matches.
double nest_benchmark_trial(const NestModel& model, std::size_t batch, std::uint64_t seed);
double flat_benchmark_trial(const FlatModel& model, std::size_t batch, std::size_t m,
                            std::size_t n, std::uint64_t seed);

struct CostReport {
  NestConfig config;
  double dense_gflops_per_token = 0.0;
  double nest_gflops_per_token = 0.0;
  std::size_t dense_params = 0;
  std::size_t nest_params = 0;
  AttentionMemoryEstimate dense_memory;
  AttentionMemoryEstimate nest_memory;
  bool measured = false;
  std::size_t measured_batch = 0;
  std::size_t threads = 1;
  ThroughputResult dense_throughput;
  ThroughputResult nest_throughput;

  std::string to_json(const std::string& config_echo = "",
                      const std::string& dataset_hash = "") const;
};

CostReport analytic_cost_report(const NestConfig& cfg);

// CSV sweep over (n, m, d_model) grid rows; d_ff and heads scale with d_model.
std::string cost_sweep_csv(const std::vector<std::size_t>& ns, const std::vector<std::size_t>& ms,
                           const std::vector<std::size_t>& d_models, std::size_t layers,
                           std::size_t vocab_size);

}  // namespace nest
