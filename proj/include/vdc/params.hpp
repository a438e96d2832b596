/* vdc - video description with temporal attention.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vdc/errors.hpp"
#include "vdc/graph.hpp"
#include "vdc/rng.hpp"
#include "vdc/tensor.hpp"

namespace vdc {

/// Named parameter tensors in a stable insertion order. Insertion order is
/// part of the model contract: it fixes initialization draws, graph node
/// layout and checkpoint blob order.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
  };

  void add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{std::move(name), std::move(value)});
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second].value;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second].value;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.value.size();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  Entry& entry(std::size_t i) { return entries_[i]; }

  static ParamStore zeros_like(const ParamStore& other) {
    ParamStore out;
    for (const Entry& e : other.entries_) out.add(e.name, Tensor<T>::zeros(e.value.shape));
    return out;
  }

  template <class U>
  static ParamStore cast_from(const ParamStore<U>& other) {
    ParamStore out;
    for (std::size_t i = 0; i < other.size(); ++i) {
      const auto& e = other.entry(i);
      Tensor<T> v(e.value.shape);
      for (std::size_t j = 0; j < v.size(); ++j) v[j] = static_cast<T>(e.value[j]);
      out.add(e.name, std::move(v));
    }
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)); draw order follows
// row-major element order so a given seed always produces the same tensor.
template <class T>
void init_glorot(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (T& x : t.data) x = static_cast<T>(rng.uniform(-s, s));
}

/// Binds every entry of a ParamStore as a leaf in a graph. Values are copied
/// at bind time, so a store can be mutated and rebound for fresh passes.
template <class T>
class BoundParams {
 public:
  BoundParams(Graph<T>& graph, const ParamStore<T>& store) : graph_(&graph) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& e = store.entry(i);
      order_.push_back(e.name);
      ids_[e.name] = graph.leaf(e.value);
    }
  }

  typename Graph<T>::Id operator[](const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) throw ContractError("parameter not bound: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return ids_.count(name) != 0; }

  // Adds this graph's parameter gradients into `grads` (same names/shapes).
  void accumulate_grads(ParamStore<T>& grads) const {
    for (const std::string& name : order_) {
      const Tensor<T>& g = graph_->grad(ids_.at(name));
      Tensor<T>& dst = grads.at(name);
      if (!dst.same_shape(g)) {
        throw DimensionError("gradient shape mismatch for " + name + ": " + shape_str(dst.shape) +
                             " vs " + shape_str(g.shape));
      }
      for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
    }
  }

 private:
  Graph<T>* graph_;
  std::vector<std::string> order_;
  std::unordered_map<std::string, typename Graph<T>::Id> ids_;
};

}  // namespace vdc
