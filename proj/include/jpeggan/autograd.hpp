#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "jpeggan/ops.hpp"
#include "jpeggan/tensor.hpp"

namespace jpeggan {

namespace detail {

template <class T>
struct BackwardResult {
  std::vector<Tensor<T>> node_grads;  // indexed by tape position
  std::unordered_map<const TensorImpl<T>*, std::pair<Tensor<T>, Tensor<T>>> leaf_grads;  // leaf -> (leaf, grad)
};

template <class T>
void accumulate(Tensor<T>& slot, const Tensor<T>& g) {
  slot = slot.defined() ? ops::add(slot, g) : g;
}

// Reverse sweep over the tape from `loss`. With create_graph the backward
// functions run with recording on, so the produced gradients are themselves
// differentiable (their nodes are appended after the loss).
template <class T>
BackwardResult<T> run_backward(const Tensor<T>& loss, bool create_graph, bool keep_node_grads) {
  if (!loss.defined() || loss.numel() != 1)
    throw TapeError("backward requires a scalar loss");
  if (!loss.node()) throw TapeError("loss is not on the tape (it is a leaf or constant)");
  const std::size_t top = loss.node()->index;
  if (top == Node<T>::npos) throw TapeError("loss was produced on a consumed tape");

  auto& tape = Tape<T>::current();
  BackwardResult<T> res;
  res.node_grads.resize(top + 1);
  res.node_grads[top] = Tensor<T>::full(loss.shape(), T(1));

  GradModeGuard mode(create_graph);
  for (std::size_t i = top + 1; i-- > 0;) {
    Tensor<T> g = res.node_grads[i];
    if (!g.defined()) continue;
    const auto node = tape.at(i);
    std::vector<bool> needs(node->inputs.size());
    for (std::size_t j = 0; j < needs.size(); ++j) needs[j] = node->inputs[j].requires_grad();
    std::vector<Tensor<T>> in_grads = node->backward(g, needs);
    for (std::size_t j = 0; j < node->inputs.size(); ++j) {
      if (!needs[j] || !in_grads[j].defined()) continue;
      const Tensor<T>& in = node->inputs[j];
      if (in.node()) {
        const std::size_t idx = in.node()->index;
        if (idx == Node<T>::npos || idx >= i) throw TapeError("input produced on a consumed tape");
        accumulate(res.node_grads[idx], in_grads[j]);
      } else {
        auto [it, inserted] = res.leaf_grads.try_emplace(in.id(), in, in_grads[j]);
        if (!inserted) accumulate(it->second.second, in_grads[j]);
      }
    }
    if (!keep_node_grads) res.node_grads[i] = Tensor<T>();
  }
  return res;
}

}  // namespace detail

// Gradients of a scalar `output` with respect to `inputs` (leaves or
// intermediate tensors). Inputs that do not influence the output get zeros.
// The tape is left intact.
template <class T>
std::vector<Tensor<T>> grad(const Tensor<T>& output, const std::vector<Tensor<T>>& inputs, bool create_graph = false) {
  auto res = detail::run_backward(output, create_graph, true);
  std::vector<Tensor<T>> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    Tensor<T> g;
    if (in.node() && in.node()->index != Node<T>::npos && in.node()->index < res.node_grads.size()) {
      g = res.node_grads[in.node()->index];
    } else if (auto it = res.leaf_grads.find(in.id()); it != res.leaf_grads.end()) {
      g = it->second.second;
    }
    out.push_back(g.defined() ? g : Tensor<T>::zeros(in.shape()));
  }
  return out;
}

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// `loss`, then consumes the tape.
template <class T>
void backward(const Tensor<T>& loss) {
  auto res = detail::run_backward(loss, false, false);
  for (auto& [id, entry] : res.leaf_grads) entry.first.accumulate_grad(entry.second);
  Tape<T>::current().clear();
}

// Max over elements of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
// using central differences of step eps.
inline double gradient_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                             double eps = 1e-5) {
  Tensor<double> leaf = x.detach();
  leaf.set_requires_grad(true);
  Tensor<double> y = f(leaf);
  if (y.numel() != 1) throw ShapeError("gradient_check: function must be scalar-valued");
  Tensor<double> analytic = grad(y, {leaf})[0];
  Tape<double>::current().clear();

  NoGradGuard no_grad;
  double worst = 0.0;
  std::vector<double> probe = x.vec();
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(Tensor<double>(x.shape(), probe)).item();
    probe[i] = orig - eps;
    const double fm = f(Tensor<double>(x.shape(), probe)).item();
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace jpeggan
