#pragma once

#include <cstdint>
#include <vector>

#include "uop/common.hpp"

namespace uop {

class Rng;

// Dense row-major double tensor. Rank 1..3 in practice: vectors, matrices and
// CHW feature maps. Plain data; differentiable ops live on the Tape.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), v(numel_of(shape), 0.0) {}
  Tensor(std::vector<int64_t> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
    UOP_CHECK(static_cast<int64_t>(v.size()) == numel_of(shape), "tensor data/shape mismatch");
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int64_t> s, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor randn(std::vector<int64_t> s, Rng& rng, double sigma = 1.0);

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t rows() const { return shape.at(0); }
  int64_t cols() const { return shape.at(1); }

  double& at(int64_t i) { return v[i]; }
  double at(int64_t i) const { return v[i]; }
  double& at(int64_t i, int64_t j) { return v[i * shape[1] + j]; }
  double at(int64_t i, int64_t j) const { return v[i * shape[1] + j]; }
  // CHW access.
  double& at(int64_t c, int64_t y, int64_t x) { return v[(c * shape[1] + y) * shape[2] + x]; }
  double at(int64_t c, int64_t y, int64_t x) const { return v[(c * shape[1] + y) * shape[2] + x]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  std::string shape_str() const;
};

}  // namespace uop
