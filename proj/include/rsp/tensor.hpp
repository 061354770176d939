#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "rsp/common.hpp"

namespace rsp {

// Dense row-major tensor. Rank <= 4 in practice ([N,C,H,W] activations,
// [N,D] features, [D] vectors).
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> v;

  TensorT() = default;
  explicit TensorT(std::initializer_list<int> s) : shape(s) { v.assign(numel(), T(0)); }
  explicit TensorT(const std::vector<int>& s) : shape(s) { v.assign(numel(), T(0)); }

  std::size_t numel() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return shape.empty() ? 0 : n;
  }

  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape.size()); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& at2(int i, int j) { return v[static_cast<std::size_t>(i) * dim(1) + j]; }
  T at2(int i, int j) const { return v[static_cast<std::size_t>(i) * dim(1) + j]; }

  T& at4(int n, int c, int y, int x) {
    return v[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }
  T at4(int n, int c, int y, int x) const {
    return v[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(T(0)); }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
bool all_finite(const TensorT<T>& t) {
  for (T x : t.v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

}  // namespace rsp
