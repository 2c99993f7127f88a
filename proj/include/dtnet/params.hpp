#pragma once

// Ordered parameter registry. Names are hierarchical
// (e.g. enc3/part2/conv0/weight); iteration order is insertion order, which
// fixes the optimizer and serialization order.

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dtnet/autograd.hpp"

namespace dtnet {

template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
    bool trainable;
  };

  Var<T> add(const std::string& name, Tensor<T> value, bool trainable = true) {
    auto v = make_var(std::move(value), trainable);
    add_existing(name, v, trainable);
    return v;
  }

  void add_existing(const std::string& name, const Var<T>& v, bool trainable) {
    if (index_.count(name))
      throw std::invalid_argument("param store: duplicate name " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, v, trainable});
  }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::out_of_range("param store: unknown parameter " + name);
    return entries_[it->second].var;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t count(bool trainable) const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable == trainable) n += e.var->value.numel();
    return n;
  }

  std::size_t count_trainable() const { return count(true); }

  void zero_grads() {
    for (auto& e : entries_)
      if (e.trainable) e.var->zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dtnet
