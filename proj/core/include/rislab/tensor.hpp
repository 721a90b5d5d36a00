#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace rislab {

/**
 * Dense row-major matrix of 64-bit floats.
 *
 * Everything in the differentiable stack is expressed as a two-dimensional
 * tensor: row vectors are 1 x n, column vectors n x 1, scalars 1 x 1.  The
 * data layout invariant (data length == rows * cols) is enforced on
 * construction; finiteness is checked by consumers via check_finite().
 */
class RealTensor {
 public:
  RealTensor() = default;
  RealTensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  RealTensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static RealTensor scalar(double v);
  static RealTensor row(std::vector<double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t numel() const { return data_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  bool same_shape(const RealTensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  std::string shape_str() const;

  /** Throws std::domain_error naming `what` if any entry is NaN or Inf. */
  void check_finite(const std::string& what) const;

  /** Max |a-b| over entries; shapes must match. */
  static double max_abs_diff(const RealTensor& a, const RealTensor& b);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace rislab
