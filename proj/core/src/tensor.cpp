#include "kepsvgp/tensor.hpp"

#include <cmath>
#include <sstream>

namespace kepsvgp {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, Precision precision)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0), precision_(precision) {
  cols_cache_ = shape_.empty() ? 1 : shape_.back();
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values, Precision precision)
    : shape_(std::move(shape)), data_(std::move(values)), precision_(precision) {
  if (shape_product(shape_) != data_.size()) {
    fail(ErrorKind::ShapeMismatch, "tensor shape " + shape_to_string(shape_) + " does not match " +
                                       std::to_string(data_.size()) + " values");
  }
  cols_cache_ = shape_.empty() ? 1 : shape_.back();
  quantize();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, Precision precision) {
  return Tensor(std::move(shape), precision);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, Precision precision) {
  Tensor t(std::move(shape), precision);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = value;
  t.quantize();
  return t;
}

Tensor Tensor::eye(std::size_t n, Precision precision) {
  Tensor t({n, n}, precision);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::row_vector(std::vector<double> values, Precision precision) {
  std::size_t n = values.size();
  return Tensor({1, n}, std::move(values), precision);
}

Tensor Tensor::column_vector(std::vector<double> values, Precision precision) {
  std::size_t n = values.size();
  return Tensor({n, 1}, std::move(values), precision);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      Precision precision) {
  return Tensor({rows, cols}, std::move(values), precision);
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    fail(ErrorKind::ShapeMismatch, "axis " + std::to_string(axis) + " out of rank " +
                                       std::to_string(shape_.size()) + " tensor");
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) {
    fail(ErrorKind::ShapeMismatch, "rows() on tensor of shape " + shape_string());
  }
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) {
    fail(ErrorKind::ShapeMismatch, "cols() on tensor of shape " + shape_string());
  }
  return shape_[1];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::require_finite(const char* op) const {
  if (!all_finite()) {
    fail(ErrorKind::NonFiniteValue, std::string(op) + " produced a NaN/Inf entry");
  }
}

void Tensor::quantize() {
  if (precision_ == Precision::Single) {
    for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
  }
}

std::string Tensor::shape_string() const { return shape_to_string(shape_); }

double frobenius_norm(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::ShapeMismatch,
         "max_abs_diff shapes " + a.shape_string() + " vs " + b.shape_string());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Precision combine_precision(Precision a, Precision b) {
  return (a == Precision::Single && b == Precision::Single) ? Precision::Single
                                                            : Precision::Double;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace kepsvgp
