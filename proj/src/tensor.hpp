#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// Ops are free functions. When a GradTape is active on the calling thread and
// at least one input requires a gradient, the op appends its backward rule to
// the tape. Gradients accumulate additively into each tensor's grad buffer;
// zeroing is the caller's job.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace c3 {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// 64-byte aligned storage for tensor data and gradients.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename Real>
struct TensorNode {
  Shape shape;
  Buffer<Real> data;
  Buffer<Real> grad;  // empty until first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }
};

template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> data, bool requires_grad = false);
  static Tensor scalar(Real value) { return from({1}, {value}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // Rows/cols view the tensor as a matrix [prod(leading dims), last dim].
  std::size_t rows() const { return numel() / cols(); }
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }

  std::span<Real> data() { return node_->data; }
  std::span<const Real> data() const { return node_->data; }
  Real item() const;
  Real at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  // Allocates a zero grad buffer on first use.
  std::span<Real> grad();
  std::span<const Real> grad() const { return node_->grad; }
  void zero_grad();

  // Deep copy of data; the copy is a fresh leaf.
  Tensor clone() const;

  TensorNode<Real>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<Real>>& shared_node() const { return node_; }

  explicit Tensor(std::shared_ptr<TensorNode<Real>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode<Real>> node_;
};

// Records backward closures in execution order. At most one tape is active per
// thread and scalar type; constructing a GradTape activates it for its scope.
template <typename Real>
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and replays backward rules in reverse order.
  // The tape is consumed; calling backward twice is an error.
  void backward(const Tensor<Real>& loss);
  std::size_t size() const { return records_.size(); }

  static GradTape* active() { return active_; }
  // Swaps the active tape; used by NoGradScope.
  static GradTape* exchange_active(GradTape* tape) {
    GradTape* prev = active_;
    active_ = tape;
    return prev;
  }
  void record(std::function<void()> backward_rule) { records_.push_back(std::move(backward_rule)); }

 private:
  std::vector<std::function<void()>> records_;
  GradTape* previous_ = nullptr;
  bool consumed_ = false;
  static inline thread_local GradTape* active_ = nullptr;
};

// Suspends recording for its scope (inference inside a training step).
template <typename Real>
class NoGradScope {
 public:
  NoGradScope() : saved_(GradTape<Real>::exchange_active(nullptr)) {}
  ~NoGradScope() { GradTape<Real>::exchange_active(saved_); }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape<Real>* saved_;
};

// ---- ops -------------------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);
// x[..., in] * w[in, out] (+ bias[out])
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias = {});
template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias);
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real factor);
template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x);
template <typename Real>
Tensor<Real> silu(const Tensor<Real>& x);
// tanh approximation
template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x);
template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, int axis = -1);
template <typename Real>
Tensor<Real> rms_norm(const Tensor<Real>& x, const Tensor<Real>& gain, Real eps);
template <typename Real>
Tensor<Real> embedding(const Tensor<Real>& table, std::span<const std::int32_t> ids);
template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x);
template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape);
// Concatenates along axis 0; trailing dims must agree.
template <typename Real>
Tensor<Real> concat_rows(std::span<const Tensor<Real>> parts);
template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t begin, std::size_t count);

// Rotary embedding over x[T, n_heads * d_head], rotate-half pairing
// (j, j + d_head/2), angle = position / base^(2j/d_head).
template <typename Real>
Tensor<Real> rope(const Tensor<Real>& x, std::span<const std::int64_t> positions, std::size_t n_heads,
                  double base);
// In-place rotation of one head vector; the kernel behind rope().
template <typename Real>
void rope_rotate(std::span<Real> head, std::int64_t position, double base);

// Multi-head causal attention. q[Tq, H*dh], k/v[Tk, H*dh] with Tq <= Tk; query
// row i sits at absolute index Tk - Tq + i and attends to keys 0..that index.
template <typename Real>
Tensor<Real> causal_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                              std::size_t n_heads);

// Sum of -log softmax(logits)[target] over rows with mask set.
template <typename Real>
Tensor<Real> nll_sum(const Tensor<Real>& logits, std::span<const std::int32_t> targets,
                     std::span<const std::uint8_t> mask);
// Mean of the above over masked rows. Empty mask is an error.
template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const std::int32_t> targets,
                           std::span<const std::uint8_t> mask);

// Row-wise argmax; no gradient.
template <typename Real>
std::vector<std::size_t> argmax(const Tensor<Real>& x);

}  // namespace c3
