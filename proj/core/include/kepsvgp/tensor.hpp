#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "kepsvgp/errors.hpp"

namespace kepsvgp {

enum class Precision { Double, Single };

/// Dense row-major real array. Values are held as doubles; Single precision
/// quantizes every stored value through float so that a single-precision run
/// carries genuine float32 resolution while the arithmetic kernels stay in
/// one code path.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, Precision precision = Precision::Double);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values,
         Precision precision = Precision::Double);

  static Tensor zeros(std::vector<std::size_t> shape, Precision precision = Precision::Double);
  static Tensor full(std::vector<std::size_t> shape, double value,
                     Precision precision = Precision::Double);
  static Tensor eye(std::size_t n, Precision precision = Precision::Double);
  static Tensor row_vector(std::vector<double> values, Precision precision = Precision::Double);
  static Tensor column_vector(std::vector<double> values, Precision precision = Precision::Double);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       Precision precision = Precision::Double);

  const std::vector<std::size_t>& shape() const { return shape_; }
  Precision precision() const { return precision_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;

  /// Rows/cols of a rank-2 tensor (vectors are treated as n x 1 or 1 x n by callers).
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_cache_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_cache_ + j]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  /// Throws NonFiniteValue naming `op` if any entry is NaN/Inf.
  void require_finite(const char* op) const;
  /// Re-quantizes through float when precision is Single.
  void quantize();

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::size_t cols_cache_ = 1;  // extent of last axis, for 2-d indexing
  Precision precision_ = Precision::Double;
};

/// Frobenius norm over all entries.
double frobenius_norm(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Combines precisions: Single only when every operand is Single.
Precision combine_precision(Precision a, Precision b);

std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace kepsvgp
