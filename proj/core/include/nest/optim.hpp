#pragma once

#include <cstdint>
#include <vector>

#include "nest/tensor.hpp"

namespace nest {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adaptive moment estimation with decoupled weight decay. Norm gains and the
// time-encoding parameters are excluded from decay.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg, std::vector<std::uint8_t> decay_mask = {});

  void zero_grad();
  void step(double lr_scale = 1.0);

  std::size_t step_count() const { return step_count_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<Tensor>& params() const { return params_; }

  // Moment buffers, exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_step_count(std::size_t steps) { step_count_ = steps; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig cfg_;
  std::vector<std::uint8_t> decay_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_count_ = 0;
};

}  // namespace nest
