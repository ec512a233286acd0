#include "nest/tensor.hpp"

#include <cmath>
#include <numeric>

#include "nest/error.hpp"

namespace nest {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

thread_local Tape* g_current_tape = nullptr;

}  // namespace

Tensor make_tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  if (impl->data.size() != shape_numel(impl->shape)) {
    throw DimensionError("tensor data length does not match shape");
  }
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return make_tensor({1}, {value}, requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::size() const { return impl_->data.size(); }

std::size_t Tensor::rank() const { return impl_->shape.size(); }

std::size_t Tensor::cols() const {
  if (impl_->shape.empty()) return 1;
  return impl_->shape.back();
}

std::size_t Tensor::rows() const {
  std::size_t c = cols();
  return c == 0 ? 0 : size() / c;
}

std::vector<double>& Tensor::data() { return impl_->data; }

const std::vector<double>& Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (size() != 1) throw UsageError("item() requires a scalar tensor");
  return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  std::size_t w = cols();
  if (r >= rows() || c >= w) throw DimensionError("at(): index out of range");
  return impl_->data[r * w + c];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detached_copy() const {
  return make_tensor(impl_->shape, impl_->data, false);
}

const std::vector<double>* sweep_grad(const GradMap& map, const TensorImpl* node) {
  auto it = map.find(node);
  return it == map.end() ? nullptr : &it->second;
}

std::vector<double>& sweep_accum(GradMap& map, const TensorImpl* node) {
  auto it = map.find(node);
  if (it == map.end()) {
    it = map.emplace(node, std::vector<double>(node->data.size(), 0.0)).first;
  }
  return it->second;
}

void Tape::record(Record record) { records_.push_back(std::move(record)); }

void Tape::clear() { records_.clear(); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward requires a scalar loss");
  }
  GradMap map;
  map.emplace(loss.node(), std::vector<double>{1.0});

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    bool live = false;
    for (const auto& out : it->outputs) {
      if (map.count(out.get())) {
        live = true;
        break;
      }
    }
    if (live) it->backward(map);
  }

  // Flush sweep-local buffers into the persistent accumulators.
  for (auto& [node, g] : map) {
    auto* impl = const_cast<TensorImpl*>(node);
    if (!impl->requires_grad) continue;
    if (impl->grad.empty()) {
      impl->grad = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) impl->grad[i] += g[i];
    }
  }
}

Tape* Tape::current() { return g_current_tape; }

TapeScope::TapeScope(Tape& tape) {
  previous_ = g_current_tape;
  g_current_tape = &tape;
}

TapeScope::~TapeScope() { g_current_tape = previous_; }

void backward_all(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (tape == nullptr) throw UsageError("backward_all: no active tape");
  tape->backward(loss);
}

double finite_diff_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) {
    throw InputError("finite_diff_check: eps must lie in [1e-7, 1e-4]");
  }

  for (const Tensor& p : params) {
    const_cast<Tensor&>(p).zero_grad();
  }

  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = f();
    if (!std::isfinite(loss.item())) throw OracleError("finite_diff_check: non-finite loss");
    tape.backward(loss);
  }

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    analytic.push_back(const_cast<Tensor&>(p).grad());
  }

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + eps;
      const double f_plus = f().item();
      p.data()[i] = saved - eps;
      const double f_minus = f().item();
      p.data()[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw OracleError("finite_diff_check: non-finite perturbed loss");
      }
      const double g_fd = (f_plus - f_minus) / (2.0 * eps);
      const double g_ad = analytic[pi][i];
      const double rel = std::abs(g_ad - g_fd) / (std::abs(g_ad) + std::abs(g_fd) + 1e-12);
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace nest
