#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace dcmrl {

// Dense row-major matrix of doubles. Every tensor is rank 2; a scalar is 1x1
// and a vector is 1xN.
struct Tensor {
  std::array<std::size_t, 2> shape{0, 0};
  std::vector<double> data;
  std::vector<double> grad;  // empty unless gradients were requested

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape{rows, cols}, data(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return shape[0]; }
  std::size_t cols() const { return shape[1]; }
  std::size_t size() const { return data.size(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double item() const;

  double* row_ptr(std::size_t r) { return data.data() + r * cols(); }
  const double* row_ptr(std::size_t r) const { return data.data() + r * cols(); }

  void zero_grad();
  std::string shape_str() const;
};

// A named learnable tensor. Gradients accumulate into value.grad.
struct Parameter {
  std::string name;
  Tensor value;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    value.grad.assign(value.size(), 0.0);
  }
};

// FNV-1a over the raw bytes of every parameter, used for frozen-module checks.
std::uint64_t checksum(const std::vector<const Parameter*>& params);

}  // namespace dcmrl
