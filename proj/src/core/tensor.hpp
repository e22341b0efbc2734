#pragma once

#include <algorithm>
#include <initializer_list>
#include <numeric>
#include <sstream>

#include "core/common.hpp"

namespace sre {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    if (d < 1) fail(err::shape, "shape extents must be >= 1");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t i = 0; i < s.size(); ++i) ss << (i ? "," : "") << s[i];
  ss << ']';
  return ss.str();
}

// Dense row-major tensor. Treated as an immutable value by library
// operations: every op returns a fresh tensor. Hot paths index the raw
// buffer directly.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
      fail(err::shape, "data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  T& at(std::initializer_list<std::int64_t> idx) {
    return data_[static_cast<std::size_t>(offset(idx))];
  }
  const T& at(std::initializer_list<std::int64_t> idx) const {
    return data_[static_cast<std::size_t>(offset(idx))];
  }

  std::int64_t offset(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != shape_.size()) {
      fail(err::shape, "index rank mismatch");
    }
    std::int64_t off = 0;
    std::size_t a = 0;
    for (auto i : idx) {
      if (i < 0 || i >= shape_[a]) fail(err::shape, "index out of bounds");
      off = off * shape_[a] + i;
      ++a;
    }
    return off;
  }

  // Same data, new shape (element counts must agree).
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      fail(err::shape, "reshape " + shape_str(shape_) + " -> " +
                           shape_str(shape) + " changes element count");
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) {
      d[i] = static_cast<U>(data_[i]);
    }
    return Tensor<U>(shape_, std::move(d));
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* context) {
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(static_cast<double>(t[i]))) {
      fail(err::not_finite, std::string(context) + ": non-finite value at flat index " +
                                std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// matmul: c[i][j] = sum_t a[i][t] * b[t][j], accumulated in T, t ascending.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2) fail(err::shape, "matmul expects rank-2 tensors");
  if (a.dim(1) != b.dim(0)) {
    fail(err::shape, "matmul inner dimensions disagree: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> c(Shape{m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t t = 0; t < k; ++t) {
      const T av = pa[i * k + t];
      const T* brow = pb + t * n;
      T* crow = pc + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  ensure_finite(c, "matmul");
  return c;
}

// Zero-cost identity helper for tests and kernels.
template <typename T>
Tensor<T> identity_matrix(std::int64_t n) {
  Tensor<T> m(Shape{n, n});
  for (std::int64_t i = 0; i < n; ++i) m[i * n + i] = T{1};
  return m;
}

// ---------------------------------------------------------------------------
// pad: grows the trailing `spatial` axes by `amount` cells per edge filled
// with `value`; leading axes are batched.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> pad(const Tensor<T>& x, int spatial, std::int64_t amount, T value) {
  if (amount < 0) fail(err::argument, "pad amount must be >= 0");
  if (spatial < 1 || spatial > x.ndim()) fail(err::shape, "pad: bad spatial rank");
  if (amount == 0) return x;

  Shape out_shape = x.shape();
  const int nd = x.ndim();
  std::int64_t lead = 1;
  for (int i = 0; i < nd - spatial; ++i) lead *= x.dim(i);
  for (int i = nd - spatial; i < nd; ++i) out_shape[static_cast<std::size_t>(i)] += 2 * amount;

  Tensor<T> out(out_shape, value);

  std::vector<std::int64_t> in_sp(x.shape().end() - spatial, x.shape().end());
  std::vector<std::int64_t> out_sp(out_shape.end() - spatial, out_shape.end());
  std::int64_t in_cells = 1, out_cells = 1;
  for (int i = 0; i < spatial; ++i) {
    in_cells *= in_sp[static_cast<std::size_t>(i)];
    out_cells *= out_sp[static_cast<std::size_t>(i)];
  }

  const T* src = x.data();
  T* dst = out.data();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(spatial), 0);
  for (std::int64_t l = 0; l < lead; ++l) {
    const T* s = src + l * in_cells;
    T* d = dst + l * out_cells;
    std::fill(idx.begin(), idx.end(), 0);
    for (std::int64_t c = 0; c < in_cells; ++c) {
      std::int64_t off = 0;
      for (int i = 0; i < spatial; ++i) {
        off = off * out_sp[static_cast<std::size_t>(i)] +
              (idx[static_cast<std::size_t>(i)] + amount);
      }
      d[off] = s[c];
      for (int i = spatial - 1; i >= 0; --i) {
        if (++idx[static_cast<std::size_t>(i)] < in_sp[static_cast<std::size_t>(i)]) break;
        idx[static_cast<std::size_t>(i)] = 0;
      }
    }
  }
  ensure_finite(out, "pad");
  return out;
}

// ---------------------------------------------------------------------------
// reduce_mean over an axis set; remaining axes keep their order.
// Accumulation runs in T, flat raster order.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, const std::vector<int>& axes) {
  const int nd = x.ndim();
  std::vector<bool> reduce(static_cast<std::size_t>(nd), false);
  for (int a : axes) {
    if (a < 0 || a >= nd) fail(err::shape, "reduce_mean: axis out of range");
    reduce[static_cast<std::size_t>(a)] = true;
  }
  Shape out_shape;
  std::int64_t count = 1;
  for (int i = 0; i < nd; ++i) {
    if (reduce[static_cast<std::size_t>(i)]) {
      count *= x.dim(i);
    } else {
      out_shape.push_back(x.dim(i));
    }
  }
  if (count == 0) fail(err::empty_axis, "reduce_mean over empty extent");
  if (out_shape.empty()) out_shape.push_back(1);

  Tensor<T> out(out_shape);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(nd), 0);
  const T* src = x.data();
  for (std::int64_t flat = 0; flat < x.numel(); ++flat) {
    std::int64_t off = 0;
    for (int i = 0; i < nd; ++i) {
      if (!reduce[static_cast<std::size_t>(i)]) {
        off = off * x.dim(i) + idx[static_cast<std::size_t>(i)];
      }
    }
    out[off] += src[flat];
    for (int i = nd - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] < x.dim(i)) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
  const T inv = T{1} / static_cast<T>(count);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= inv;
  ensure_finite(out, "reduce_mean");
  return out;
}

}  // namespace sre
