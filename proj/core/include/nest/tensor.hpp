#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

namespace nest {

// Dense row-major tensor of doubles. Cheap to copy: a Tensor is a shared
// handle to its storage, which is also how the tape keeps activations alive.
struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // lazily allocated accumulator, same length as data
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t size() const;
  std::size_t rank() const;
  // 2-D view helpers: rows = product of leading extents, cols = last extent.
  std::size_t rows() const;
  std::size_t cols() const;

  std::vector<double>& data();
  const std::vector<double>& data() const;
  double item() const;  // scalar tensors only
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::vector<double>& grad();  // allocates zeros on first use
  void zero_grad();

  TensorImpl* node() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& handle() const { return impl_; }

  Tensor detached_copy() const;  // deep copy, no grad, requires_grad=false

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_tensor(std::vector<std::size_t>, std::vector<double>, bool);
};

Tensor make_tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad);

// Per-backward-sweep gradient buffers, keyed by node. Keeping sweep-local
// buffers separate from TensorImpl::grad is what makes repeated backward
// calls additive: backward(l1); backward(l2) == backward(l1 + l2).
using GradMap = std::unordered_map<const TensorImpl*, std::vector<double>>;

const std::vector<double>* sweep_grad(const GradMap& map, const TensorImpl* node);
std::vector<double>& sweep_accum(GradMap& map, const TensorImpl* node);

class Tape {
 public:
  struct Record {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::vector<std::shared_ptr<TensorImpl>> outputs;
    std::function<void(GradMap&)> backward;
  };

  void record(Record record);
  std::size_t size() const { return records_.size(); }

  // Drops all records (and with them the activations they keep alive).
  void clear();

  // Reverse sweep seeded with dloss/dloss = 1. Every requires_grad tensor
  // reachable from `loss` has its contribution added into .grad.
  void backward(const Tensor& loss);

  static Tape* current();

 private:
  std::vector<Record> records_;
};

// RAII activation of a tape on this thread; ops record only while a tape is
// active. Scopes nest; destruction restores the previous tape.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Backward through the currently active tape. UsageError on a non-scalar
// loss or when no tape is active.
void backward_all(const Tensor& loss);

// Central-difference gradient oracle. Re-evaluates `f` (which must be a
// deterministic function of `params`) with perturbed parameter entries and
// compares against the tape gradient. Returns the max relative error
// max_i |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12).
double finite_diff_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double eps);

}  // namespace nest
