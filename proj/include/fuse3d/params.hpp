#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "fuse3d/error.hpp"
#include "fuse3d/ops.hpp"
#include "fuse3d/rng.hpp"
#include "fuse3d/tensor.hpp"

namespace fuse3d {

// Named parameters in registration order. Registration order is the canonical
// order for initialization draws, optimizer state, and checkpoint layout.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
    bool cross_scale = false;  // part of a cross-stream fusion projection
  };

  Tensor<T>& add(const std::string& name, Tensor<T> t, bool trainable = true,
                 bool cross_scale = false) {
    FUSE3D_CHECK(!by_name_.count(name), "param '", name,
                 "' registered twice");
    t.set_requires_grad(trainable);
    by_name_.emplace(name, entries_.size());
    entries_.push_back(Entry{name, std::move(t), trainable, cross_scale});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const {
    return by_name_.count(name) != 0;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = by_name_.find(name);
    FUSE3D_CHECK(it != by_name_.end(), "unknown param '", name, "'");
    return entries_[it->second].tensor;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = by_name_.find(name);
    FUSE3D_CHECK(it != by_name_.end(), "unknown param '", name, "'");
    return entries_[it->second].tensor;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }

  std::size_t scalar_count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const Entry& e : entries_)
      if (!trainable_only || e.trainable) n += e.tensor.size();
    return n;
  }

  void zero_grads() {
    for (Entry& e : entries_) e.tensor.zero_grad();
  }

  // Zeroes every cross-stream projection and excludes it from training, which
  // reduces fusion blocks to independent single-stream paths.
  void freeze_cross_scale() {
    for (Entry& e : entries_) {
      if (!e.cross_scale) continue;
      std::fill(e.tensor.values().begin(), e.tensor.values().end(), T(0));
      e.trainable = false;
      e.tensor.set_requires_grad(false);
    }
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

// Fan-in-scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> fanin_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t = Tensor<T>::zeros(shape);
  // He-style bound: keeps activation scale roughly unit through GeLU conv
  // stacks. A 1/sqrt(fan_in) bound decays the signal ~3x per layer and
  // underflows float by the fourth encoder scale.
  const double bound = std::sqrt(6.0 / double(fan_in));
  for (T& v : t.values()) v = T(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
void register_linear(ParamStore<T>& ps, const std::string& name,
                     std::size_t out_ch, std::size_t in_ch, Rng& rng,
                     bool cross_scale = false) {
  ps.add(name + ".w", fanin_uniform<T>({out_ch, in_ch}, in_ch, rng), true,
         cross_scale);
  ps.add(name + ".b", Tensor<T>::zeros({out_ch}), true, cross_scale);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, ParamStore<T>& ps,
                 const std::string& name) {
  return pointwise_linear(x, ps.at(name + ".w"), ps.at(name + ".b"));
}

}  // namespace fuse3d
