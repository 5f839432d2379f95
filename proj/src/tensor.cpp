#include "uop/tensor.hpp"

#include <cmath>
#include <sstream>

#include "uop/rng.hpp"

namespace uop {

Tensor Tensor::full(std::vector<int64_t> s, double value) {
  Tensor t(std::move(s));
  for (auto& x : t.v) x = value;
  return t;
}

Tensor Tensor::randn(std::vector<int64_t> s, Rng& rng, double sigma) {
  Tensor t(std::move(s));
  for (auto& x : t.v) x = rng.normal() * sigma;
  return t;
}

bool Tensor::all_finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace uop
