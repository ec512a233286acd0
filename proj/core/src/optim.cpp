#include "nest/optim.hpp"

#include <cmath>

#include "nest/error.hpp"

namespace nest {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg, std::vector<std::uint8_t> decay_mask)
    : params_(std::move(params)), cfg_(cfg), decay_(std::move(decay_mask)) {
  if (decay_.empty()) decay_.assign(params_.size(), 1);
  if (decay_.size() != params_.size()) throw ConfigError("adamw: decay mask size mismatch");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void AdamW::step(double lr_scale) {
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  const double lr = cfg_.lr * lr_scale;

  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    if (!p.has_grad()) continue;  // parameter untouched this step
    auto& g = p.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    const bool decay = decay_[pi] != 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      double update = mhat / (std::sqrt(vhat) + cfg_.eps);
      if (decay) update += cfg_.weight_decay * p.data()[i];
      p.data()[i] -= lr * update;
    }
  }
}

}  // namespace nest
