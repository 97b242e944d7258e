#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpresnet/graph.hpp"
#include "mpresnet/tensor.hpp"

namespace mpresnet {

// Named parameter tensors keyed by hierarchical paths such as
// "branch1.layer3.0.conv1.weight". Insertion order is preserved.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    ParamSpec spec;
    Tensor<T> value;
  };

  // Kaiming-normal conv weights, zero biases, BN gamma=1 beta=0, running
  // mean 0 and variance 1. Each tensor draws from its own stream seeded by
  // (seed, name), so adding a layer never perturbs the others.
  static ParamStore initialize(const std::vector<ParamSpec>& specs, uint64_t seed);
  // All-zero tensors of the given shapes (used before loading values).
  static ParamStore zeros(const std::vector<ParamSpec>& specs);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::vector<std::string> names() const;
  // Tensors updated by the optimizer (running statistics excluded).
  std::vector<Tensor<T>> trainable() const;
  size_t size() const { return entries_.size(); }
  int64_t trainable_count() const;

  template <typename U>
  ParamStore<U> cast() const;

 private:
  void add(ParamSpec spec, Tensor<T> value);

  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;

  template <typename U>
  friend class ParamStore;
};

uint64_t fnv1a64(const std::string& text);
uint64_t splitmix64(uint64_t x);

template <typename T>
template <typename U>
ParamStore<U> ParamStore<T>::cast() const {
  ParamStore<U> out;
  for (const auto& e : entries_) {
    const auto src = e.value.data();
    std::vector<U> v(src.begin(), src.end());
    Tensor<U> t(e.value.shape(), std::move(v));
    if (e.spec.trainable()) t.set_requires_grad(true);
    out.add(e.spec, std::move(t));
  }
  return out;
}

}  // namespace mpresnet
