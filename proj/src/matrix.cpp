#include "platoon/matrix.hpp"

#include "platoon/errors.hpp"

namespace platoon {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw ShapeError("Matrix: data size mismatch");
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double value) {
  for (double& x : data_) x = value;
}

}  // namespace platoon
