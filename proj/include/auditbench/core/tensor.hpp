#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace auditbench {

/// Dense row-major float tensor. Images are C x H x W, batches N x C x H x W.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0f);
  }
  Tensor(std::vector<std::size_t> s, float fill) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::size_t numel() const { return data.size(); }
  bool empty() const { return data.empty(); }

  std::size_t dim(std::size_t i) const { return shape.at(i); }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
    return *this;
  }
  Tensor& operator*=(float s) {
    for (float& v : data) v *= s;
    return *this;
  }

  void fill(float v) { std::fill(data.begin(), data.end(), v); }

  void clamp_(float lo, float hi) {
    for (float& v : data) v = v < lo ? lo : (v > hi ? hi : v);
  }

  float linf_norm() const {
    float m = 0.0f;
    for (float v : data) m = std::max(m, std::fabs(v));
    return m;
  }

  float l2_norm() const {
    double s = 0.0;
    for (float v : data) s += double(v) * v;
    return float(std::sqrt(s));
  }

  bool all_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void require_same_shape(const Tensor& o) const {
    if (shape != o.shape) throw std::invalid_argument("tensor shape mismatch");
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
inline Tensor operator*(Tensor a, float s) { return a *= s; }

inline float dot(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += double(a[i]) * b[i];
  return float(s);
}

/// Cosine similarity of two flattened tensors; returns 0 for zero-norm inputs.
inline float cosine(const Tensor& a, const Tensor& b) {
  float na = a.l2_norm(), nb = b.l2_norm();
  if (na == 0.0f || nb == 0.0f) return 0.0f;
  return dot(a, b) / (na * nb);
}

}  // namespace auditbench
