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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "vdc/errors.hpp"
#include "vdc/tensor.hpp"

namespace vdc {

namespace detail {

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Sum of a small buffer in ascending value order. Because the result only
// depends on the multiset of addends, any permutation of the inputs yields
// bit-identical output; the attention softmax and context sums rely on this.
template <class T>
T canonical_sum(std::vector<T>& terms) {
  std::sort(terms.begin(), terms.end());
  T s = T(0);
  for (const T& t : terms) s += t;
  return s;
}

}  // namespace detail

/// Append-only reverse-mode tape over the operation set the decoder and the
/// 3-D conv stack need. Node inputs always reference earlier nodes, so the
/// list is topologically ordered by construction.
template <class T>
class Graph {
 public:
  using Id = std::int32_t;
  using value_type = T;

  // Debug switches. `check_finite` validates every op output; the gradient
  // corruption factor exists as a negative control for the gradient checker
  // (a wrong backward rule must be caught, and that needs a way to make one).
  bool check_finite = false;
  T sigmoid_grad_scale = T(1);

  std::size_t node_count() const { return nodes_.size(); }

  const Tensor<T>& value(Id id) const { return nodes_[check_id(id)].value; }

  const Tensor<T>& grad(Id id) const {
    if (grads_.empty()) throw ContractError("grad() before backward()");
    return grads_[check_id(id)];
  }

  // ---- graph inputs ----

  Id leaf(Tensor<T> v) { return push(Op::kLeaf, {}, std::move(v)); }
  Id constant(Tensor<T> v) { return push(Op::kLeaf, {}, std::move(v)); }

  // ---- operations ----

  Id matmul(Id a, Id b) {
    const Tensor<T>& ta = value(a);
    const Tensor<T>& tb = value(b);
    if (ta.rank() != 2 || (tb.rank() != 2 && tb.rank() != 1)) {
      throw DimensionError("matmul requires rank-2 x rank-1/2 operands, got " +
                           shape_str(ta.shape) + " x " + shape_str(tb.shape));
    }
    const std::size_t k = tb.shape[0];
    if (ta.shape[1] != k) {
      throw DimensionError("matmul inner extents differ: " + shape_str(ta.shape) + " x " +
                           shape_str(tb.shape));
    }
    Tensor<T> out(tb.rank() == 2 ? Shape{ta.shape[0], tb.shape[1]} : Shape{ta.shape[0]});
    matmul_accum(ta, tb, out);
    return push(Op::kMatMul, {a, b}, std::move(out));
  }

  Id transpose(Id a) {
    return push(Op::kTranspose, {a}, transposed(value(a)));
  }

  Id add(Id a, Id b) { return add_n({a, b}); }

  Id add_n(std::vector<Id> ids) {
    if (ids.empty()) throw ContractError("add_n of zero operands");
    Tensor<T> out = value(ids[0]);
    for (std::size_t i = 1; i < ids.size(); ++i) {
      const Tensor<T>& t = value(ids[i]);
      if (!t.same_shape(out)) {
        throw DimensionError("add operand shapes differ: " + shape_str(out.shape) + " vs " +
                             shape_str(t.shape));
      }
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += t[j];
    }
    return push(Op::kAdd, std::move(ids), std::move(out));
  }

  // M[m x k] plus v[k] added to every row.
  Id add_rowvec(Id m, Id v) {
    const Tensor<T>& tm = value(m);
    const Tensor<T>& tv = value(v);
    if (tm.rank() != 2 || tv.rank() != 1 || tm.shape[1] != tv.shape[0]) {
      throw DimensionError("add_rowvec shapes incompatible: " + shape_str(tm.shape) + " vs " +
                           shape_str(tv.shape));
    }
    Tensor<T> out = tm;
    for (std::size_t i = 0; i < tm.rows(); ++i)
      for (std::size_t j = 0; j < tm.cols(); ++j) out.at2(i, j) += tv[j];
    return push(Op::kAddRowVec, {m, v}, std::move(out));
  }

  Id mul(Id a, Id b) {
    const Tensor<T>& ta = value(a);
    const Tensor<T>& tb = value(b);
    if (!ta.same_shape(tb)) {
      throw DimensionError("mul operand shapes differ: " + shape_str(ta.shape) + " vs " +
                           shape_str(tb.shape));
    }
    Tensor<T> out = ta;
    for (std::size_t j = 0; j < out.size(); ++j) out[j] *= tb[j];
    return push(Op::kMul, {a, b}, std::move(out));
  }

  Id scale(Id a, T s) {
    Tensor<T> out = value(a);
    for (T& x : out.data) x *= s;
    Id id = push(Op::kScale, {a}, std::move(out));
    nodes_[id].factor = s;
    return id;
  }

  Id tanh_op(Id a) {
    Tensor<T> out = value(a);
    for (T& x : out.data) x = std::tanh(x);
    return push(Op::kTanh, {a}, std::move(out));
  }

  Id sigmoid(Id a) {
    Tensor<T> out = value(a);
    for (T& x : out.data) x = detail::stable_sigmoid(x);
    return push(Op::kSigmoid, {a}, std::move(out));
  }

  Id relu(Id a) {
    Tensor<T> out = value(a);
    for (T& x : out.data) x = x > T(0) ? x : T(0);
    return push(Op::kRelu, {a}, std::move(out));
  }

  // Row-wise stabilized softmax; accepts a rank-1 tensor as a single row.
  Id softmax_rows(Id a) {
    const Tensor<T>& ta = value(a);
    if (ta.rank() != 1 && ta.rank() != 2) {
      throw DimensionError("softmax_rows requires rank-1/2, got " + shape_str(ta.shape));
    }
    const std::size_t rows = ta.rank() == 2 ? ta.shape[0] : 1;
    const std::size_t cols = ta.rank() == 2 ? ta.shape[1] : ta.shape[0];
    Tensor<T> out = ta;
    for (std::size_t i = 0; i < rows; ++i) {
      T* row = &out.data[i * cols];
      T mx = row[0];
      for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
      T sum = T(0);
      for (std::size_t j = 0; j < cols; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (std::size_t j = 0; j < cols; ++j) row[j] /= sum;
    }
    return push(Op::kSoftmax, {a}, std::move(out));
  }

  // Stabilized softmax over a rank-1 score vector with the denominator
  // accumulated in ascending value order, making the output exactly
  // equivariant under permutations of the scores. Used for attention
  // weights, where the permutation contract is part of the public API.
  Id softmax_sorted(Id a) {
    const Tensor<T>& ta = value(a);
    if (ta.rank() != 1) {
      throw DimensionError("softmax_sorted requires rank-1, got " + shape_str(ta.shape));
    }
    Tensor<T> out = ta;
    T mx = out[0];
    for (std::size_t j = 1; j < out.size(); ++j) mx = std::max(mx, out[j]);
    std::vector<T> terms(out.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] = std::exp(out[j] - mx);
      terms[j] = out[j];
    }
    const T sum = detail::canonical_sum(terms);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] /= sum;
    return push(Op::kSoftmax, {a}, std::move(out));
  }

  Id concat(std::vector<Id> parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat of zero parts");
    const Tensor<T>& first = value(parts[0]);
    const std::size_t rank = first.rank();
    if (axis >= rank) throw DimensionError("concat axis out of range");
    Shape out_shape = first.shape;
    for (std::size_t p = 1; p < parts.size(); ++p) {
      const Tensor<T>& t = value(parts[p]);
      if (t.rank() != rank) {
        throw DimensionError("concat rank mismatch: " + shape_str(first.shape) + " vs " +
                             shape_str(t.shape));
      }
      for (std::size_t d = 0; d < rank; ++d) {
        if (d != axis && t.shape[d] != first.shape[d]) {
          throw DimensionError("concat extents differ off-axis: " + shape_str(first.shape) +
                               " vs " + shape_str(t.shape));
        }
      }
      out_shape[axis] += t.shape[axis];
    }
    Tensor<T> out(out_shape);
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
    for (std::size_t d = axis + 1; d < rank; ++d) inner *= out_shape[d];
    const std::size_t out_row = out_shape[axis] * inner;
    std::size_t offset = 0;
    for (Id pid : parts) {
      const Tensor<T>& t = value(pid);
      const std::size_t part_row = t.shape[axis] * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        std::copy(t.data.begin() + o * part_row, t.data.begin() + (o + 1) * part_row,
                  out.data.begin() + o * out_row + offset);
      }
      offset += part_row;
    }
    Id id = push(Op::kConcat, std::move(parts), std::move(out));
    nodes_[id].axis = axis;
    return id;
  }

  Id embed_lookup(Id table, std::size_t index) {
    const Tensor<T>& e = value(table);
    if (e.rank() != 2) throw DimensionError("embed_lookup table must be rank-2");
    if (index >= e.rows()) {
      throw IndexError("embedding index " + std::to_string(index) + " out of range [0, " +
                       std::to_string(e.rows()) + ")");
    }
    Tensor<T> out({e.cols()});
    std::copy(e.data.begin() + index * e.cols(), e.data.begin() + (index + 1) * e.cols(),
              out.data.begin());
    Id id = push(Op::kEmbed, {table}, std::move(out));
    nodes_[id].index = index;
    return id;
  }

  // 3x3x3 cross-correlation with zero padding of 1, so spatiotemporal
  // extents are preserved. Input W x H x T x Cin, kernel 3x3x3 x Cin x Cout.
  Id conv3d(Id x, Id kernel, Id bias) {
    const Tensor<T>& tx = value(x);
    const Tensor<T>& tk = value(kernel);
    const Tensor<T>& tb = value(bias);
    if (tx.rank() != 4) throw DimensionError("conv3d input must be rank-4, got " + shape_str(tx.shape));
    if (tk.rank() != 5 || tk.shape[0] != 3 || tk.shape[1] != 3 || tk.shape[2] != 3) {
      throw DimensionError("conv3d kernel must be 3x3x3xCinxCout, got " + shape_str(tk.shape));
    }
    const std::size_t cin = tx.shape[3];
    const std::size_t cout = tk.shape[4];
    if (tk.shape[3] != cin) {
      throw DimensionError("conv3d channel mismatch: input " + shape_str(tx.shape) + " vs kernel " +
                           shape_str(tk.shape));
    }
    if (tb.rank() != 1 || tb.shape[0] != cout) {
      throw DimensionError("conv3d bias shape " + shape_str(tb.shape) + " does not match Cout " +
                           std::to_string(cout));
    }
    const std::size_t W = tx.shape[0], H = tx.shape[1], Tt = tx.shape[2];
    Tensor<T> out({W, H, Tt, cout});
    for (std::size_t w = 0; w < W; ++w) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t t = 0; t < Tt; ++t) {
          T* orow = &out.data[out.idx4(w, h, t, 0)];
          for (std::size_t co = 0; co < cout; ++co) orow[co] = tb[co];
          for (std::size_t dw = 0; dw < 3; ++dw) {
            const std::size_t iw = w + dw;
            if (iw < 1 || iw > W) continue;  // padded border
            for (std::size_t dh = 0; dh < 3; ++dh) {
              const std::size_t ih = h + dh;
              if (ih < 1 || ih > H) continue;
              for (std::size_t dt = 0; dt < 3; ++dt) {
                const std::size_t it = t + dt;
                if (it < 1 || it > Tt) continue;
                const T* xrow = &tx.data[tx.idx4(iw - 1, ih - 1, it - 1, 0)];
                const T* kbase = &tk.data[(((dw * 3 + dh) * 3 + dt) * cin) * cout];
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const T xv = xrow[ci];
                  const T* krow = kbase + ci * cout;
                  for (std::size_t co = 0; co < cout; ++co) orow[co] += xv * krow[co];
                }
              }
            }
          }
        }
      }
    }
    return push(Op::kConv3d, {x, kernel, bias}, std::move(out));
  }

  // Per-channel max pooling over the three spatiotemporal axes. On ties the
  // gradient goes to the first maximal element in (w, h, t) scan order.
  Id maxpool3d(Id x, std::array<std::size_t, 3> window, std::array<std::size_t, 3> stride) {
    const Tensor<T>& tx = value(x);
    if (tx.rank() != 4) throw DimensionError("maxpool3d input must be rank-4, got " + shape_str(tx.shape));
    for (int d = 0; d < 3; ++d) {
      if (window[d] < 1 || stride[d] < 1) throw ContractError("maxpool3d window/stride must be >= 1");
      if (window[d] > tx.shape[d]) {
        throw DimensionError("maxpool3d window " + std::to_string(window[d]) + " exceeds extent " +
                             std::to_string(tx.shape[d]) + " on axis " + std::to_string(d));
      }
    }
    const std::size_t C = tx.shape[3];
    Shape os(4);
    for (int d = 0; d < 3; ++d) os[d] = (tx.shape[d] - window[d]) / stride[d] + 1;
    os[3] = C;
    Tensor<T> out(os);
    std::vector<std::size_t> argmax(out.size());
    std::size_t oi = 0;
    for (std::size_t w = 0; w < os[0]; ++w) {
      for (std::size_t h = 0; h < os[1]; ++h) {
        for (std::size_t t = 0; t < os[2]; ++t) {
          for (std::size_t c = 0; c < C; ++c, ++oi) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t best_idx = 0;
            for (std::size_t dw = 0; dw < window[0]; ++dw)
              for (std::size_t dh = 0; dh < window[1]; ++dh)
                for (std::size_t dt = 0; dt < window[2]; ++dt) {
                  const std::size_t idx =
                      tx.idx4(w * stride[0] + dw, h * stride[1] + dh, t * stride[2] + dt, c);
                  if (tx.data[idx] > best) {
                    best = tx.data[idx];
                    best_idx = idx;
                  }
                }
            out.data[oi] = best;
            argmax[oi] = best_idx;
          }
        }
      }
    }
    Id id = push(Op::kMaxPool3d, {x}, std::move(out));
    nodes_[id].aux = std::move(argmax);
    return id;
  }

  // phi[j] = sum_i alpha[i] * V[i][j], summed per coordinate in ascending
  // term order: jointly permuting (V, alpha) leaves the result bit-identical.
  Id weighted_rowsum(Id rows, Id weights) {
    const Tensor<T>& tv = value(rows);
    const Tensor<T>& ta = value(weights);
    if (tv.rank() != 2 || ta.rank() != 1) {
      throw DimensionError("weighted_rowsum requires rank-2 rows and rank-1 weights, got " +
                           shape_str(tv.shape) + " and " + shape_str(ta.shape));
    }
    if (tv.rows() != ta.shape[0]) {
      throw DimensionError("weighted_rowsum length mismatch: " + shape_str(tv.shape) + " vs " +
                           shape_str(ta.shape));
    }
    const std::size_t n = tv.rows(), d = tv.cols();
    Tensor<T> out({d});
    std::vector<T> terms(n);
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i = 0; i < n; ++i) terms[i] = ta[i] * tv.at2(i, j);
      out[j] = detail::canonical_sum(terms);
    }
    return push(Op::kWeightedRowSum, {rows, weights}, std::move(out));
  }

  Id reshape(Id a, Shape s) {
    const Tensor<T>& ta = value(a);
    if (numel(s) != ta.size()) {
      throw DimensionError("reshape " + shape_str(ta.shape) + " -> " + shape_str(s) +
                           " changes element count");
    }
    Tensor<T> out(std::move(s), ta.data);
    return push(Op::kReshape, {a}, std::move(out));
  }

  Id sum(Id a) {
    const Tensor<T>& ta = value(a);
    T s = T(0);
    for (const T& v : ta.data) s += v;
    return push(Op::kSum, {a}, Tensor<T>({1}, {s}));
  }

  // Negative log-likelihood of `target` under softmax(logits), computed via
  // log-sum-exp; log(softmax(x)) is never formed.
  Id nll_logits(Id logits, std::size_t target) {
    const Tensor<T>& tl = value(logits);
    if (tl.rank() != 1) throw DimensionError("nll_logits requires rank-1 logits");
    if (target >= tl.size()) {
      throw IndexError("nll target " + std::to_string(target) + " out of range [0, " +
                       std::to_string(tl.size()) + ")");
    }
    T mx = tl[0];
    for (std::size_t j = 1; j < tl.size(); ++j) mx = std::max(mx, tl[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < tl.size(); ++j) sum += std::exp(tl[j] - mx);
    const T loss = mx + std::log(sum) - tl[target];
    Id id = push(Op::kNllLogits, {logits}, Tensor<T>({1}, {loss}));
    nodes_[id].index = target;
    return id;
  }

  // ---- reverse sweep ----

  // Populates gradients for every node reachable from `loss`; unreachable
  // nodes keep zero gradients of matching shape.
  void backward(Id loss) {
    check_id(loss);
    if (nodes_[loss].value.size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_str(nodes_[loss].value.shape));
    }
    grads_.clear();
    grads_.reserve(nodes_.size());
    for (const Node& n : nodes_) grads_.emplace_back(Tensor<T>::zeros(n.value.shape));

    std::vector<char> reach(nodes_.size(), 0);
    reach[loss] = 1;
    for (Id id = loss; id >= 0; --id) {
      if (!reach[id]) continue;
      for (Id in : nodes_[id].inputs) reach[in] = 1;
    }

    grads_[loss].data[0] = T(1);
    for (Id id = loss; id >= 0; --id) {
      if (!reach[id]) continue;
      propagate(id);
    }
  }

 private:
  enum class Op {
    kLeaf,
    kMatMul,
    kTranspose,
    kAdd,
    kAddRowVec,
    kMul,
    kScale,
    kTanh,
    kSigmoid,
    kRelu,
    kSoftmax,
    kConcat,
    kEmbed,
    kConv3d,
    kMaxPool3d,
    kWeightedRowSum,
    kReshape,
    kSum,
    kNllLogits,
  };

  struct Node {
    Op op;
    std::vector<Id> inputs;
    Tensor<T> value;
    std::size_t index = 0;         // embed row / nll target
    std::size_t axis = 0;          // concat axis
    T factor = T(1);               // scale
    std::vector<std::size_t> aux;  // maxpool argmax
  };

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;

  Id check_id(Id id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw ContractError("invalid graph node id " + std::to_string(id));
    }
    return id;
  }

  Id push(Op op, std::vector<Id> inputs, Tensor<T> value) {
    for (Id in : inputs) check_id(in);
    if (check_finite) value.require_finite("graph op output");
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  void propagate(Id id) {
    Node& n = nodes_[id];
    const Tensor<T>& g = grads_[id];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatMul: {
        const Tensor<T>& a = nodes_[n.inputs[0]].value;
        const Tensor<T>& b = nodes_[n.inputs[1]].value;
        Tensor<T>& da = grads_[n.inputs[0]];
        Tensor<T>& db = grads_[n.inputs[1]];
        const std::size_t m = a.shape[0], k = a.shape[1];
        const std::size_t p = (b.rank() == 2) ? b.shape[1] : 1;
        // dA += g * B^T ; dB += A^T * g
        for (std::size_t i = 0; i < m; ++i) {
          const T* grow = &g.data[i * p];
          const T* arow = &a.data[i * k];
          T* darow = &da.data[i * k];
          for (std::size_t kk = 0; kk < k; ++kk) {
            const T* brow = &b.data[kk * p];
            T acc = T(0);
            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
            darow[kk] += acc;
            T* dbrow = &db.data[kk * p];
            const T av = arow[kk];
            for (std::size_t j = 0; j < p; ++j) dbrow[j] += av * grow[j];
          }
        }
        break;
      }
      case Op::kTranspose: {
        Tensor<T>& da = grads_[n.inputs[0]];
        for (std::size_t i = 0; i < n.value.shape[0]; ++i)
          for (std::size_t j = 0; j < n.value.shape[1]; ++j)
            da.at2(j, i) += g.at2(i, j);
        break;
      }
      case Op::kAdd: {
        for (Id in : n.inputs) {
          Tensor<T>& d = grads_[in];
          for (std::size_t j = 0; j < g.size(); ++j) d[j] += g[j];
        }
        break;
      }
      case Op::kAddRowVec: {
        Tensor<T>& dm = grads_[n.inputs[0]];
        Tensor<T>& dv = grads_[n.inputs[1]];
        const std::size_t rows = n.value.shape[0], cols = n.value.shape[1];
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) {
            dm.at2(i, j) += g.at2(i, j);
            dv[j] += g.at2(i, j);
          }
        break;
      }
      case Op::kMul: {
        const Tensor<T>& a = nodes_[n.inputs[0]].value;
        const Tensor<T>& b = nodes_[n.inputs[1]].value;
        Tensor<T>& da = grads_[n.inputs[0]];
        Tensor<T>& db = grads_[n.inputs[1]];
        for (std::size_t j = 0; j < g.size(); ++j) {
          da[j] += g[j] * b[j];
          db[j] += g[j] * a[j];
        }
        break;
      }
      case Op::kScale: {
        Tensor<T>& da = grads_[n.inputs[0]];
        for (std::size_t j = 0; j < g.size(); ++j) da[j] += g[j] * n.factor;
        break;
      }
      case Op::kTanh: {
        Tensor<T>& da = grads_[n.inputs[0]];
        for (std::size_t j = 0; j < g.size(); ++j)
          da[j] += g[j] * (T(1) - n.value[j] * n.value[j]);
        break;
      }
      case Op::kSigmoid: {
        Tensor<T>& da = grads_[n.inputs[0]];
        for (std::size_t j = 0; j < g.size(); ++j)
          da[j] += sigmoid_grad_scale * g[j] * n.value[j] * (T(1) - n.value[j]);
        break;
      }
      case Op::kRelu: {
        const Tensor<T>& a = nodes_[n.inputs[0]].value;
        Tensor<T>& da = grads_[n.inputs[0]];
        for (std::size_t j = 0; j < g.size(); ++j)
          if (a[j] > T(0)) da[j] += g[j];
        break;
      }
      case Op::kSoftmax: {
        Tensor<T>& da = grads_[n.inputs[0]];
        const std::size_t rows = n.value.rank() == 2 ? n.value.shape[0] : 1;
        const std::size_t cols = n.value.rank() == 2 ? n.value.shape[1] : n.value.shape[0];
        for (std::size_t i = 0; i < rows; ++i) {
          const T* y = &n.value.data[i * cols];
          const T* gy = &g.data[i * cols];
          T dot = T(0);
          for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
          T* d = &da.data[i * cols];
          for (std::size_t j = 0; j < cols; ++j) d[j] += y[j] * (gy[j] - dot);
        }
        break;
      }
      case Op::kConcat: {
        const std::size_t rank = n.value.rank();
        std::size_t outer = 1, inner = 1;
        for (std::size_t d = 0; d < n.axis; ++d) outer *= n.value.shape[d];
        for (std::size_t d = n.axis + 1; d < rank; ++d) inner *= n.value.shape[d];
        const std::size_t out_row = n.value.shape[n.axis] * inner;
        std::size_t offset = 0;
        for (Id pid : n.inputs) {
          Tensor<T>& dp = grads_[pid];
          const std::size_t part_row = nodes_[pid].value.shape[n.axis] * inner;
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < part_row; ++j)
              dp.data[o * part_row + j] += g.data[o * out_row + offset + j];
          offset += part_row;
        }
        break;
      }
      case Op::kEmbed: {
        Tensor<T>& de = grads_[n.inputs[0]];
        const std::size_t cols = n.value.shape[0];
        for (std::size_t j = 0; j < cols; ++j) de.data[n.index * cols + j] += g[j];
        break;
      }
      case Op::kConv3d: {
        const Tensor<T>& x = nodes_[n.inputs[0]].value;
        const Tensor<T>& k = nodes_[n.inputs[1]].value;
        Tensor<T>& dx = grads_[n.inputs[0]];
        Tensor<T>& dk = grads_[n.inputs[1]];
        Tensor<T>& db = grads_[n.inputs[2]];
        const std::size_t W = x.shape[0], H = x.shape[1], Tt = x.shape[2];
        const std::size_t cin = x.shape[3], cout = k.shape[4];
        for (std::size_t w = 0; w < W; ++w) {
          for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < Tt; ++t) {
              const T* grow = &g.data[n.value.idx4(w, h, t, 0)];
              for (std::size_t co = 0; co < cout; ++co) db[co] += grow[co];
              for (std::size_t dw = 0; dw < 3; ++dw) {
                const std::size_t iw = w + dw;
                if (iw < 1 || iw > W) continue;
                for (std::size_t dh = 0; dh < 3; ++dh) {
                  const std::size_t ih = h + dh;
                  if (ih < 1 || ih > H) continue;
                  for (std::size_t dt = 0; dt < 3; ++dt) {
                    const std::size_t it = t + dt;
                    if (it < 1 || it > Tt) continue;
                    const std::size_t xoff = x.idx4(iw - 1, ih - 1, it - 1, 0);
                    const std::size_t koff = (((dw * 3 + dh) * 3 + dt) * cin) * cout;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                      const T xv = x.data[xoff + ci];
                      const T* krow = &k.data[koff + ci * cout];
                      T acc = T(0);
                      for (std::size_t co = 0; co < cout; ++co) {
                        acc += krow[co] * grow[co];
                        dk.data[koff + ci * cout + co] += xv * grow[co];
                      }
                      dx.data[xoff + ci] += acc;
                    }
                  }
                }
              }
            }
          }
        }
        break;
      }
      case Op::kMaxPool3d: {
        Tensor<T>& dx = grads_[n.inputs[0]];
        for (std::size_t oi = 0; oi < n.value.size(); ++oi) dx.data[n.aux[oi]] += g[oi];
        break;
      }
      case Op::kWeightedRowSum: {
        const Tensor<T>& v = nodes_[n.inputs[0]].value;
        const Tensor<T>& a = nodes_[n.inputs[1]].value;
        Tensor<T>& dv = grads_[n.inputs[0]];
        Tensor<T>& da = grads_[n.inputs[1]];
        const std::size_t rows = v.rows(), cols = v.cols();
        for (std::size_t i = 0; i < rows; ++i) {
          T acc = T(0);
          for (std::size_t j = 0; j < cols; ++j) {
            dv.at2(i, j) += g[j] * a[i];
            acc += g[j] * v.at2(i, j);
          }
          da[i] += acc;
        }
        break;
      }
      case Op::kReshape: {
        Tensor<T>& da = grads_[n.inputs[0]];
        for (std::size_t j = 0; j < g.size(); ++j) da.data[j] += g.data[j];
        break;
      }
      case Op::kSum: {
        Tensor<T>& da = grads_[n.inputs[0]];
        for (T& v : da.data) v += g[0];
        break;
      }
      case Op::kNllLogits: {
        const Tensor<T>& l = nodes_[n.inputs[0]].value;
        Tensor<T>& dl = grads_[n.inputs[0]];
        T mx = l[0];
        for (std::size_t j = 1; j < l.size(); ++j) mx = std::max(mx, l[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < l.size(); ++j) sum += std::exp(l[j] - mx);
        for (std::size_t j = 0; j < l.size(); ++j)
          dl[j] += g[0] * std::exp(l[j] - mx) / sum;
        dl[n.index] -= g[0];
        break;
      }
    }
  }
};

}  // namespace vdc
