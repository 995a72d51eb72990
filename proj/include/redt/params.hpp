#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "redt/io.hpp"
#include "redt/rng.hpp"
#include "redt/tensor.hpp"

namespace redt {

/// Ordered, named collection of a model's parameters and buffers. Modules
/// keep Tensor handles that share storage with the entries here.
template <typename Scalar>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> tensor;
    bool trainable;
  };

  Tensor<Scalar> parameter(const std::string& name, Tensor<Scalar> t) {
    t.set_requires_grad(true);
    insert(name, t, true);
    return t;
  }

  Tensor<Scalar> buffer(const std::string& name, Tensor<Scalar> t) {
    insert(name, t, false);
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  Tensor<Scalar> get(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.tensor;
    throw UsageError("no parameter named " + name);
  }

  std::vector<Tensor<Scalar>> trainable() const {
    std::vector<Tensor<Scalar>> out;
    for (const auto& e : entries_)
      if (e.trainable) out.push_back(e.tensor);
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor.size();
    return n;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ckpt;
    for (const auto& e : entries_) ckpt.emplace_back(e.name, to_raw(e.tensor));
    return ckpt;
  }

  /// Loads values by name. Any missing, extra or differently-shaped record is
  /// reported together in one ConfigError.
  void load(const Checkpoint& ckpt) {
    std::map<std::string, const RawTensor*> by_name;
    for (const auto& [name, raw] : ckpt) by_name[name] = &raw;
    std::ostringstream diff;
    for (const auto& e : entries_) {
      auto it = by_name.find(e.name);
      if (it == by_name.end()) {
        diff << "\n  missing " << e.name << " " << to_string(e.tensor.shape());
      } else if (it->second->shape != e.tensor.shape()) {
        diff << "\n  shape " << e.name << ": model " << to_string(e.tensor.shape()) << " vs checkpoint "
             << to_string(it->second->shape);
      }
    }
    for (const auto& [name, raw] : ckpt) {
      const bool known = std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
      if (!known) diff << "\n  unexpected " << name << " " << to_string(raw.shape);
    }
    if (!diff.str().empty()) throw ConfigError("checkpoint does not match model:" + diff.str());
    for (auto& e : entries_) {
      const RawTensor& raw = *by_name.at(e.name);
      Vec<Scalar>& dst = e.tensor.mutable_data();
      for (std::size_t i = 0; i < raw.values.size(); ++i) dst[static_cast<Index>(i)] = static_cast<Scalar>(raw.values[i]);
    }
  }

 private:
  void insert(const std::string& name, const Tensor<Scalar>& t, bool trainable) {
    for (const auto& e : entries_)
      if (e.name == name) throw UsageError("duplicate parameter name " + name);
    entries_.push_back({name, t, trainable});
  }

  std::vector<Entry> entries_;
};

namespace init {

template <typename Scalar>
Tensor<Scalar> truncated_normal(Rng& rng, Shape shape, double sigma) {
  Vec<Scalar> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(rng.truncated_normal(sigma));
  return Tensor<Scalar>(std::move(shape), std::move(v));
}

template <typename Scalar>
Tensor<Scalar> zeros(Shape shape) {
  return Tensor<Scalar>::zeros(std::move(shape));
}

template <typename Scalar>
Tensor<Scalar> ones(Shape shape) {
  return Tensor<Scalar>::full(std::move(shape), Scalar(1));
}

}  // namespace init
}  // namespace redt
