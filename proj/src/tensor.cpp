#include "bifl/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace bifl {

size_t Tensor::numel_of(const std::vector<int>& s) {
  size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::runtime_error("tensor dimension must be positive, got " + std::to_string(d));
    n *= size_t(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), v(numel_of(shape), 0.0) {}

void Tensor::fill(double x) { std::fill(v.begin(), v.end(), x); }

std::string Tensor::shape_str() const {
  std::string out = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace bifl
