#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mpresnet/error.hpp"
#include "mpresnet/tensor.hpp"

namespace mpresnet::detail {

// Allocates the result node of an operator. History is attached only when
// recording is enabled and some parent needs a gradient.
template <typename T>
std::shared_ptr<Node<T>> make_result(Shape shape, std::vector<std::shared_ptr<Node<T>>> parents) {
  auto node = std::make_shared<Node<T>>();
  node->data.assign(static_cast<size_t>(numel(shape)), T(0));
  node->shape = std::move(shape);
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p && p->requires_grad) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) node->parents = std::move(parents);
  return node;
}

inline void require_rank(const Shape& shape, size_t rank, const std::string& what) {
  if (shape.size() != rank) {
    throw ShapeError(what + ".rank", what + " must have rank " + std::to_string(rank) +
                                         ", got shape " + to_string(shape));
  }
}

template <typename T>
void require_defined(const Tensor<T>& t, const std::string& what) {
  if (!t.defined()) throw UsageError(what + " is undefined");
}

}  // namespace mpresnet::detail

#define MPRESNET_INSTANTIATE_FOR_REALS(MACRO) \
  MACRO(float)                                \
  MACRO(double)
