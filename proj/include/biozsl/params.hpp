#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biozsl/errors.hpp"
#include "biozsl/rng.hpp"
#include "biozsl/tensor.hpp"

namespace biozsl {

// A named parameter tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Ordered collection of parameters. Iteration follows insertion order so that
// checkpoints and updates are deterministic.
class ParamSet {
 public:
  Parameter& add(const std::string& name, std::vector<std::size_t> shape) {
    if (index_.count(name)) throw DuplicateIdError("parameter already exists: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Tensor::zeros(shape);
    p->grad = Tensor::zeros(std::move(shape));
    index_[name] = items_.size();
    items_.push_back(std::move(p));
    return *items_.back();
  }

  // Symmetric uniform init in [-s, s] with s = sqrt(6 / (fan_in + fan_out)).
  Parameter& add_uniform(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in,
                         std::size_t fan_out, Rng rng) {
    Parameter& p = add(name, std::move(shape));
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : p.value.values) v = rng.uniform(-s, s);
    return p;
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  Parameter& at(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw LookupError("no such parameter: " + std::string(name));
    return *items_[it->second];
  }

  const Parameter& at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw LookupError("no such parameter: " + std::string(name));
    return *items_[it->second];
  }

  void zero_grad() {
    for (auto& p : items_) {
      p->grad.values.assign(p->grad.values.size(), 0.0);
    }
  }

  std::size_t size() const { return items_.size(); }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    out.reserve(items_.size());
    for (auto& p : items_) out.push_back(p.get());
    return out;
  }

  std::vector<const Parameter*> all() const {
    std::vector<const Parameter*> out;
    out.reserve(items_.size());
    for (auto& p : items_) out.push_back(p.get());
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Plain SGD update: value -= lr * grad for every parameter, then gradients are
// zeroed. Throws if any gradient is non-finite.
inline void sgd_step(std::initializer_list<ParamSet*> sets, double learning_rate) {
  for (ParamSet* set : sets) {
    for (Parameter* p : set->all()) {
      if (!p->grad.all_finite()) {
        throw DivergenceError("non-finite gradient for parameter '" + p->name + "'");
      }
    }
  }
  for (ParamSet* set : sets) {
    for (Parameter* p : set->all()) {
      for (std::size_t i = 0; i < p->value.values.size(); ++i) {
        p->value.values[i] -= learning_rate * p->grad.values[i];
      }
    }
    set->zero_grad();
  }
}

inline void sgd_step(ParamSet& set, double learning_rate) { sgd_step({&set}, learning_rate); }

}  // namespace biozsl
