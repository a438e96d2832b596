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

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vdc/errors.hpp"

namespace vdc {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense n-dimensional array, row-major. The scalar type selects the
/// working precision (float for training speed, double for verification).
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(numel(shape), T(0)) {
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extent must be positive, got " + shape_str(shape));
    }
  }
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor vector(std::initializer_list<T> vals) {
    return Tensor({vals.size()}, std::vector<T>(vals));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = T(1);
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t extent(std::size_t axis) const { return shape.at(axis); }

  std::size_t rows() const {
    if (rank() != 2) throw DimensionError("rows() requires rank-2, got " + shape_str(shape));
    return shape[0];
  }
  std::size_t cols() const {
    if (rank() != 2) throw DimensionError("cols() requires rank-2, got " + shape_str(shape));
    return shape[1];
  }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  const T& at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  // Flat index for a rank-4 tensor (the conv/pool layout W x H x T x C).
  std::size_t idx4(std::size_t w, std::size_t h, std::size_t t, std::size_t c) const {
    return ((w * shape[1] + h) * shape[2] + t) * shape[3] + c;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const T& v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void require_finite(const char* what) const {
    if (!all_finite()) throw NumericError(std::string("non-finite values in ") + what);
  }
};

template <class T>
Tensor<T> transposed(const Tensor<T>& m) {
  if (m.rank() != 2) throw DimensionError("transpose requires rank-2, got " + shape_str(m.shape));
  Tensor<T> out({m.cols(), m.rows()});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out.at2(j, i) = m.at2(i, j);
  return out;
}

// C += A * B with the usual rank checks done by the caller. Accumulation
// runs in a fixed i,k,j order so results are reproducible bit-for-bit.
template <class T>
void matmul_accum(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
  const std::size_t m = a.shape[0];
  const std::size_t k = a.shape[1];
  const std::size_t p = (b.rank() == 2) ? b.shape[1] : 1;
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = &a.data[i * k];
    T* crow = &c.data[i * p];
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = &b.data[kk * p];
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace vdc
