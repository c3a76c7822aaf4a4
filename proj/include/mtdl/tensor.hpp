#ifndef MTDL_TENSOR_HPP_
#define MTDL_TENSOR_HPP_

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace mtdl {

// Dense row-major tensor of 64-bit floats. Rank 1 covers vectors, rank 2
// matrices; scalars are rank-1 tensors of length 1.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t numel() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool is_scalar() const { return shape.size() == 1 && shape[0] == 1; }
  bool is_vector() const { return shape.size() == 1; }
  bool is_matrix() const { return shape.size() == 2; }

  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 0; }
  std::size_t cols() const { return shape.size() == 2 ? shape[1] : 0; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // Row-major element access for matrices.
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  double scalar_value() const { return data[0]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  std::string shape_str() const;
};

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace mtdl

#endif  // MTDL_TENSOR_HPP_
