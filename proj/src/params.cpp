#include "mpresnet/params.hpp"

#include <cmath>
#include <random>

#include "mpresnet/error.hpp"

namespace mpresnet {

uint64_t fnv1a64(const std::string& text) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename T>
void ParamStore<T>::add(ParamSpec spec, Tensor<T> value) {
  if (index_.count(spec.name)) throw UsageError("duplicate parameter name '" + spec.name + "'");
  index_.emplace(spec.name, entries_.size());
  entries_.push_back({std::move(spec), std::move(value)});
}

template <typename T>
ParamStore<T> ParamStore<T>::initialize(const std::vector<ParamSpec>& specs, uint64_t seed) {
  ParamStore<T> store;
  for (const auto& spec : specs) {
    std::vector<T> v(static_cast<size_t>(numel(spec.shape)), T(0));
    switch (spec.role) {
      case ParamRole::kConvWeight:
      case ParamRole::kConvTransposeWeight: {
        std::mt19937_64 rng(splitmix64(seed ^ fnv1a64(spec.name)));
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(spec.fan_in)));
        for (auto& x : v) x = static_cast<T>(dist(rng));
        break;
      }
      case ParamRole::kBnGamma:
      case ParamRole::kBnRunningVar:
        std::fill(v.begin(), v.end(), T(1));
        break;
      default:
        break;
    }
    Tensor<T> t(spec.shape, std::move(v));
    if (spec.trainable()) t.set_requires_grad(true);
    store.add(spec, std::move(t));
  }
  return store;
}

template <typename T>
ParamStore<T> ParamStore<T>::zeros(const std::vector<ParamSpec>& specs) {
  ParamStore<T> store;
  for (const auto& spec : specs) {
    Tensor<T> t(spec.shape, T(0));
    if (spec.trainable()) t.set_requires_grad(true);
    store.add(spec, std::move(t));
  }
  return store;
}

template <typename T>
Tensor<T>& ParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.spec.name);
  return out;
}

template <typename T>
std::vector<Tensor<T>> ParamStore<T>::trainable() const {
  std::vector<Tensor<T>> out;
  for (const auto& e : entries_) {
    if (e.spec.trainable()) out.push_back(e.value);
  }
  return out;
}

template <typename T>
int64_t ParamStore<T>::trainable_count() const {
  int64_t n = 0;
  for (const auto& e : entries_) {
    if (e.spec.trainable()) n += numel(e.spec.shape);
  }
  return n;
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace mpresnet
