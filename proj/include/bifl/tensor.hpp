#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace bifl {

// Dense row-major tensor: a shape and flat storage, nothing else. Layers do
// their own index arithmetic. Double storage end to end; files that persist
// parameters narrow to float32 at the serialization boundary.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  static size_t numel_of(const std::vector<int>& s);
  size_t numel() const { return v.size(); }
  bool empty() const { return v.empty(); }

  double& operator[](size_t i) { return v[i]; }
  double operator[](size_t i) const { return v[i]; }

  // 2-D convenience; shape must be {rows, cols}.
  double& at(int r, int c) { return v[size_t(r) * shape[1] + c]; }
  double at(int r, int c) const { return v[size_t(r) * shape[1] + c]; }

  void fill(double x);
  std::string shape_str() const;
};

}  // namespace bifl
