#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <type_traits>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace jpeggan {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Thread-local switch controlling whether ops are recorded on the tape.
struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool on) : prev_(GradMode::enabled()) { GradMode::enabled() = on; }
  ~GradModeGuard() { GradMode::enabled() = prev_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
class Tensor;

template <class T>
struct Node {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  using BackwardFn =
      std::function<std::vector<Tensor<T>>(const Tensor<T>& grad_out, const std::vector<bool>& needs)>;

  const char* op = "";
  std::vector<Tensor<T>> inputs;
  BackwardFn backward;
  std::size_t index = npos;  // position on the tape; npos once the tape is consumed
};

// Ordered record of op nodes. Nodes are appended at creation time, so the
// order is topological. One tape per thread and scalar type.
template <class T>
class Tape {
 public:
  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

  std::size_t record(std::shared_ptr<Node<T>> node) {
    node->index = nodes_.size();
    nodes_.push_back(std::move(node));
    return nodes_.back()->index;
  }

  std::size_t size() const { return nodes_.size(); }
  const std::shared_ptr<Node<T>>& at(std::size_t i) const { return nodes_.at(i); }

  void clear() {
    for (auto& n : nodes_) n->index = Node<T>::npos;
    nodes_.clear();
  }

 private:
  Tape() = default;
  std::vector<std::shared_ptr<Node<T>>> nodes_;
};

// True when no element is NaN or infinite (exponent bits not all set);
// written as an integer reduction so it vectorizes.
template <class T>
bool all_finite(std::span<const T> v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr U exp_mask = sizeof(T) == 4 ? U(0x7f800000u) : U(0x7ff0000000000000ull);
  U bad = 0;
  for (const T& x : v) bad |= static_cast<U>((std::bit_cast<U>(x) & exp_mask) == exp_mask);
  return bad == 0;
}

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;   // null for leaves and constants
  std::shared_ptr<TensorImpl> grad;  // accumulated by backward() on leaves
};

// Dense row-major tensor handle. Copies share storage; ops never write to
// their inputs. Only the owner of a leaf (an optimizer, a loader) mutates it.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorImpl<T>>()) {
    if (numel_of(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       jpeggan::to_string(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor zeros(const Shape& shape) { return Tensor(shape, std::vector<T>(numel_of(shape), T(0))); }
  static Tensor full(const Shape& shape, T v) { return Tensor(shape, std::vector<T>(numel_of(shape), v)); }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  const std::vector<T>& vec() const { return impl_->data; }
  T operator[](std::size_t i) const { return impl_->data[i]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + jpeggan::to_string(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  bool is_leaf() const { return !impl_->node; }

  Tensor& set_requires_grad(bool on) {
    if (!is_leaf()) throw TapeError("requires_grad can only be set on leaf tensors");
    impl_->requires_grad = on;
    return *this;
  }

  const std::shared_ptr<Node<T>>& node() const { return impl_->node; }

  Tensor grad() const {
    Tensor g;
    g.impl_ = impl_->grad;
    return g;
  }
  void zero_grad() { impl_->grad.reset(); }
  void accumulate_grad(const Tensor& g) {
    if (g.shape() != shape()) throw ShapeError("gradient shape mismatch");
    if (!impl_->grad) {
      impl_->grad = std::make_shared<TensorImpl<T>>();
      impl_->grad->shape = g.shape();
      impl_->grad->data = g.vec();
    } else {
      auto& d = impl_->grad->data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  }

  // Same values, no tape history, no gradient requirement.
  Tensor detach() const { return Tensor(shape(), vec()); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape(), std::vector<U>(impl_->data.begin(), impl_->data.end()));
  }

  const TensorImpl<T>* id() const { return impl_.get(); }

  // Builds an op result. Records a node when grad mode is on and any input
  // requires grad. Rejects non-finite results.
  static Tensor make_result(const char* op, Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                            typename Node<T>::BackwardFn backward) {
    if (!all_finite<T>(data)) throw NumericalError(std::string("non-finite value produced by ") + op);
    Tensor out(std::move(shape), std::move(data));
    if (!GradMode::enabled()) return out;
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (!any) return out;
    auto node = std::make_shared<Node<T>>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    Tape<T>::current().record(node);
    out.impl_->node = std::move(node);
    out.impl_->requires_grad = true;
    return out;
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

}  // namespace jpeggan
