#include "mtdl/tensor.hpp"

#include <cmath>
#include <numeric>

#include "mtdl/errors.hpp"

namespace mtdl {

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(n, 0.0);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t;
  t.shape = {1};
  t.data = {value};
  return t;
}

Tensor Tensor::vector(std::vector<double> values) {
  Tensor t;
  t.shape = {values.size()};
  t.data = std::move(values);
  return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(values.size()) +
                     " does not match shape [" + std::to_string(rows) + " x " +
                     std::to_string(cols) + "]");
  }
  Tensor t;
  t.shape = {rows, cols};
  t.data = std::move(values);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const { return mtdl::shape_str(shape); }

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += " x ";
    s += std::to_string(shape[i]);
  }
  s += "]";
  return s;
}

}  // namespace mtdl
