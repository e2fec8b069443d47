#pragma once

#include <string>
#include <vector>

#include "countnet/autodiff.hpp"
#include "countnet/tensor.hpp"

namespace countnet {

// How a parameter is filled at registration time. Each parameter draws from
// its own stream seeded by (seed, name), so adding or removing modules never
// shifts the values of unrelated parameters.
enum class Init {
  Zeros,
  Ones,
  TruncNormal02,   // N(0, 0.02) clipped at 2 sigma
  HeNormal,        // N(0, sqrt(2 / fan_in)), fan_in = all dims but the last
  Identity,        // square matrices only
  StackedIdentity  // [2C, C]: top block I, bottom block 0
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

template <typename T>
class ParamRegistry {
 public:
  std::size_t add(const std::string& name, Shape shape, Init init, std::uint64_t seed) {
    Tensor<T> v(shape);
    Rng rng(mix_seed(seed, fnv1a64(name)));
    switch (init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        for (T& x : v.values()) x = T(1);
        break;
      case Init::TruncNormal02:
        for (T& x : v.values()) x = static_cast<T>(rng.trunc_normal(0.02));
        break;
      case Init::HeNormal: {
        std::size_t fan_in = v.size() / shape.back();
        double s = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (T& x : v.values()) x = static_cast<T>(rng.normal() * s);
        break;
      }
      case Init::Identity: {
        if (shape.size() != 2 || shape[0] != shape[1]) {
          throw ShapeError("identity init needs a square matrix, got " + shape_str(shape));
        }
        for (std::size_t i = 0; i < shape[0]; ++i) v[i * shape[1] + i] = T(1);
        break;
      }
      case Init::StackedIdentity: {
        if (shape.size() != 2 || shape[0] != 2 * shape[1]) {
          throw ShapeError("stacked identity init needs [2C, C], got " + shape_str(shape));
        }
        for (std::size_t i = 0; i < shape[1]; ++i) v[i * shape[1] + i] = T(1);
        break;
      }
    }
    entries_.push_back(Parameter<T>{name, std::move(v)});
    return entries_.size() - 1;
  }

  Parameter<T>& operator[](std::size_t i) { return entries_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return entries_[i]; }
  std::size_t size() const { return entries_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  const Parameter<T>* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  std::vector<Var<T>> bind_all(Tape<T>& tape, bool requires_grad = true) const {
    std::vector<Var<T>> vars;
    vars.reserve(entries_.size());
    for (const auto& e : entries_) vars.push_back(tape.leaf(e.value, requires_grad));
    return vars;
  }

  // Pull per-parameter gradients off a tape after backward().
  std::vector<Tensor<T>> collect_grads(Tape<T>& tape, const std::vector<Var<T>>& bound) const {
    std::vector<Tensor<T>> grads;
    grads.reserve(bound.size());
    for (const auto& v : bound) grads.push_back(tape.grad_or_zeros(v.id));
    return grads;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<Parameter<T>> entries_;
};

}  // namespace countnet
