// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 tensors with reverse-mode automatic differentiation over an
// explicit tape. One tape serves one forward pass; backward replays the
// recorded entries in strictly reverse order with index-ordered reductions,
// so gradients are bit-reproducible.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vimoe/errors.hpp"

namespace vimoe {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

class Tape;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  // Identity on the tape that most recently saw this node. Reassigned when a
  // persistent leaf (a parameter) participates in a new forward pass.
  const Tape* tape = nullptr;
  std::int64_t id = -1;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Value-semantics handle to a shared node. Copies alias the same buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), {}, requires_grad, /*fill=*/true);
  }
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    return Tensor(std::move(shape), std::move(values), requires_grad, false);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }

  double& at(std::size_t i) { return node_->data[i]; }
  double at(std::size_t i) const { return node_->data[i]; }
  double& at(std::size_t r, std::size_t c) { return node_->data[r * node_->shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape[1] + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  std::int64_t node_id() const { return node_->id; }

  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  friend class Tape;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad, bool fill)
      : node_(std::make_shared<detail::TensorNode>()) {
    const std::size_t n = shape_numel(shape);
    node_->shape = std::move(shape);
    if (fill) {
      node_->data.assign(n, 0.0);
    } else {
      if (values.size() != n)
        throw shape_error("tensor data length " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(node_->shape));
      node_->data = std::move(values);
    }
    node_->requires_grad = requires_grad;
  }

  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::TensorNode> node_;
};

// Records the operations of one forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers inputs, creates the output node with the next id, and sets the
  // requires_grad propagation flag. Entries are appended by record().
  Tensor output(Shape shape, std::initializer_list<const Tensor*> inputs) {
    bool track = false;
    for (const Tensor* t : inputs) {
      register_node(*t->node_);
      track = track || t->node_->requires_grad;
    }
    Tensor out = Tensor::zeros(std::move(shape), track);
    register_node(*out.node_);
    return out;
  }

  Tensor output(Shape shape, const std::vector<const Tensor*>& inputs) {
    bool track = false;
    for (const Tensor* t : inputs) {
      register_node(*t->node_);
      track = track || t->node_->requires_grad;
    }
    Tensor out = Tensor::zeros(std::move(shape), track);
    register_node(*out.node_);
    return out;
  }

  template <class Fn>
  void record(const Tensor& out, std::vector<std::shared_ptr<detail::TensorNode>> inputs, Fn&& fn) {
    if (!out.requires_grad()) return;
    entries_.push_back(Entry{out.node(), std::move(inputs), std::forward<Fn>(fn)});
  }

  std::size_t num_entries() const { return entries_.size(); }

  // Populates grad buffers of every requires_grad leaf reachable from the
  // recorded entries. Leaf gradients accumulate across calls; intermediate
  // gradients are zeroed before the sweep.
  void backward(const Tensor& loss) {
    if (loss.size() != 1)
      throw contract_error("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (loss.node()->tape != this)
      throw contract_error("backward loss does not belong to this tape");
    if (!loss.requires_grad()) return;

    for (Entry& e : entries_) {
      e.out->grad.assign(e.out->data.size(), 0.0);
    }
    for (Entry& e : entries_) {
      for (auto& in : e.inputs) {
        if (in->requires_grad) in->ensure_grad();
      }
    }
    loss.node()->grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      it->fn();
    }
  }

 private:
  struct Entry {
    std::shared_ptr<detail::TensorNode> out;
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::function<void()> fn;
  };

  void register_node(detail::TensorNode& n) {
    if (n.tape != this) {
      n.tape = this;
      n.id = next_id_++;
    }
  }

  std::vector<Entry> entries_;
  std::int64_t next_id_ = 0;
};

// Free-function form matching the rest of the operation set.
inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

}  // namespace vimoe
