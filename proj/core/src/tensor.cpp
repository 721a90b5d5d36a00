#include "rislab/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rislab {

RealTensor::RealTensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

RealTensor::RealTensor(std::size_t rows, std::size_t cols,
                       std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("RealTensor: data length " +
                                std::to_string(data_.size()) +
                                " does not match shape " + shape_str());
  }
}

RealTensor RealTensor::scalar(double v) {
  RealTensor t(1, 1);
  t.data_[0] = v;
  return t;
}

RealTensor RealTensor::row(std::vector<double> v) {
  const std::size_t n = v.size();
  return RealTensor(1, n, std::move(v));
}

std::string RealTensor::shape_str() const {
  std::ostringstream os;
  os << "(" << rows_ << ", " << cols_ << ")";
  return os.str();
}

void RealTensor::check_finite(const std::string& what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw std::domain_error("non-finite value in " + what + " at flat index " +
                              std::to_string(i));
    }
  }
}

double RealTensor::max_abs_diff(const RealTensor& a, const RealTensor& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("max_abs_diff: shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.data_.size(); ++i) {
    m = std::max(m, std::abs(a.data_[i] - b.data_[i]));
  }
  return m;
}

}  // namespace rislab
