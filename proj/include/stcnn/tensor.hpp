// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "stcnn/check.hpp"
#include "stcnn/rng.hpp"

namespace stcnn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense tensor with a shared contiguous buffer. Copies are shallow; use
// clone() for a deep copy. Activations are treated as immutable once an op
// has produced them.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(static_cast<std::size_t>(numel(shape_)), fill)) {
    for (auto d : shape_) STCNN_CHECK(d > 0, "tensor extents must be positive, got " << shape_str(shape_));
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(values))) {
    STCNN_CHECK(numel(shape_) == static_cast<std::int64_t>(data_->size()),
                "shape " << shape_str(shape_) << " does not match buffer of " << data_->size());
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  bool defined() const { return static_cast<bool>(data_); }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  T& operator[](std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  // Same buffer, new shape (element count must agree).
  Tensor reshaped(Shape s) const {
    STCNN_CHECK(numel(s) == size(), "reshape " << shape_str(shape_) << " -> " << shape_str(s));
    Tensor t;
    t.shape_ = std::move(s);
    t.data_ = data_;
    return t;
  }

  void fill(T v) { std::fill(data_->begin(), data_->end(), v); }

  void fill_normal(Rng& rng, double mean, double stddev) {
    for (auto& v : *data_) v = static_cast<T>(rng.normal(mean, stddev));
  }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (auto& v : *data_) v = static_cast<T>(rng.uniform(lo, hi));
  }

  T sum() const { return std::accumulate(data_->begin(), data_->end(), T(0)); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t(shape_);
    for (std::int64_t i = 0; i < size(); ++i) t[i] = static_cast<U>((*data_)[static_cast<std::size_t>(i)]);
    return t;
  }

 private:
  template <typename U>
  friend class Tensor;

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
};

template <typename T>
bool same_data(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  STCNN_CHECK(a.size() == b.size(), "size mismatch " << a.size() << " vs " << b.size());
  double m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace stcnn
