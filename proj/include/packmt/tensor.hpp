#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "packmt/common.hpp"

namespace packmt {

/// Dense row-major tensor. Weight matrices use (out_features, in_features)
/// layout, embeddings (vocab, d_model).
template <typename T>
struct TensorT {
  std::vector<int64_t> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), T(0));
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  T* row(int64_t i) { return data.data() + i * cols(); }
  const T* row(int64_t i) const { return data.data() + i * cols(); }

  T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
  T at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const TensorT& other) const { return shape == other.shape; }

  bool operator==(const TensorT&) const = default;

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

/// C (m,n) = A (m,k) * B^T where B is (n,k). Accumulates when `accumulate`.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k,
             bool accumulate = false) {
  for (int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc = accumulate ? ci[j] : T(0);
      for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

/// C (m,n) = A (m,k) * B (k,n). Accumulates when `accumulate`.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k,
             bool accumulate = false) {
  for (int64_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    if (!accumulate) {
      for (int64_t j = 0; j < n; ++j) ci[j] = T(0);
    }
    const T* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

/// C (m,n) += A^T (k,m) * B (k,n) given A as (k,m). Used for weight grads.
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k) {
  for (int64_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      T av = ap[i];
      if (av == T(0)) continue;
      T* ci = c + i * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace packmt
