// Copyright 2026 The capreg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode tape. A Tape records every forward op in creation order, so
// the record list is topologically sorted by construction. Leaves either wrap
// a shared parameter tensor (gradients accumulate into it) or hold a constant.
//
// Gradients of intermediate nodes live only for the duration of one
// backward() call; leaf gradients accumulate across calls until zeroed.

#ifndef CAPREG_AUTODIFF_TAPE_H_
#define CAPREG_AUTODIFF_TAPE_H_

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "capreg/autodiff/tensor.h"

namespace capreg::ad {

template <typename T>
class Tape;

// Handle to a node on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  int id() const { return id_; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t rank() const { return value().rank(); }
  // Value of a one-element tensor.
  T item() const;

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <typename T>
class BackwardContext {
 public:
  BackwardContext(Tape<T>& tape, int node,
                  std::vector<std::vector<T>>& grads)
      : tape_(tape), node_(node), grads_(grads) {}

  std::span<const T> out_grad() const { return grads_[node_]; }
  const Tensor<T>& output() const;
  const Tensor<T>& input(std::size_t k) const;
  bool needs_grad(std::size_t k) const;
  // Zero-initialised on first access within a backward pass.
  std::span<T> input_grad(std::size_t k);

 private:
  Tape<T>& tape_;
  int node_;
  std::vector<std::vector<T>>& grads_;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(BackwardContext<T>&)>;

  struct OpRecord {
    std::string_view kind;
    std::vector<int> inputs;
    int output;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaf; backward() accumulates into tensor->grad().
  Var<T> leaf(std::shared_ptr<Tensor<T>> tensor) {
    Node node;
    node.tensor = std::move(tensor);
    node.requires_grad = true;
    node.is_leaf = true;
    node.kind = "leaf";
    return push(std::move(node));
  }

  // Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value) {
    Node node;
    node.tensor = std::make_shared<Tensor<T>>(std::move(value));
    node.is_leaf = true;
    node.kind = "constant";
    return push(std::move(node));
  }

  Var<T> record(std::string_view kind, Tensor<T> value,
                std::vector<Var<T>> inputs, BackwardFn fn) {
    Node node;
    node.tensor = std::make_shared<Tensor<T>>(std::move(value));
    node.kind = kind;
    for (const Var<T>& in : inputs) {
      if (&in.tape() != this) {
        throw std::invalid_argument(std::string(kind) +
                                    ": input belongs to another tape");
      }
      node.inputs.push_back(in.id());
      node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(fn);
    return push(std::move(node));
  }

  void backward(Var<T> loss) {
    if (!loss.valid() || &loss.tape() != this) {
      throw std::invalid_argument("backward: loss is not on this tape");
    }
    const Tensor<T>& value = *nodes_[loss.id()].tensor;
    if (value.size() != 1) {
      throw ShapeError("backward: loss must be a scalar, got shape " +
                       to_string(value.shape()));
    }
    std::vector<std::vector<T>> grads(nodes_.size());
    grads[loss.id()].assign(1, T(1));
    for (int id = loss.id(); id >= 0; --id) {
      Node& node = nodes_[id];
      if (grads[id].empty() || !node.requires_grad) continue;
      if (node.is_leaf) {
        std::span<T> g = node.tensor->grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += grads[id][i];
      } else if (node.backward) {
        BackwardContext<T> ctx(*this, id, grads);
        node.backward(ctx);
      }
      if (!node.is_leaf) std::vector<T>().swap(grads[id]);
    }
  }

  const Tensor<T>& value(int id) const { return *nodes_.at(id).tensor; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  std::vector<OpRecord> records() const {
    std::vector<OpRecord> out;
    out.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      out.push_back({nodes_[i].kind, nodes_[i].inputs, static_cast<int>(i)});
    }
    return out;
  }

 private:
  friend class BackwardContext<T>;

  struct Node {
    std::shared_ptr<Tensor<T>> tensor;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    std::string_view kind;
  };

  Var<T> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
T Var<T>::item() const {
  const Tensor<T>& v = value();
  if (v.size() != 1) {
    throw ShapeError("item: expected one element, got shape " +
                     to_string(v.shape()));
  }
  return v[0];
}

template <typename T>
const Tensor<T>& BackwardContext<T>::output() const {
  return *tape_.nodes_[node_].tensor;
}

template <typename T>
const Tensor<T>& BackwardContext<T>::input(std::size_t k) const {
  return *tape_.nodes_[tape_.nodes_[node_].inputs[k]].tensor;
}

template <typename T>
bool BackwardContext<T>::needs_grad(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].requires_grad;
}

template <typename T>
std::span<T> BackwardContext<T>::input_grad(std::size_t k) {
  const int id = tape_.nodes_[node_].inputs[k];
  std::vector<T>& g = grads_[id];
  if (g.empty()) g.assign(tape_.nodes_[id].tensor->size(), T(0));
  return g;
}

}  // namespace capreg::ad

#endif  // CAPREG_AUTODIFF_TAPE_H_
