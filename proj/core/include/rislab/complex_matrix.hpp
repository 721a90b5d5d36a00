#pragma once

#include <complex>
#include <cstddef>
#include <string>
#include <vector>

namespace rislab {

using cplx = std::complex<double>;

/**
 * Dense row-major complex matrix used by the non-differentiable classical
 * solvers (channel synthesis, WMMSE, manifold phase optimization).
 */
class ComplexMatrix {
 public:
  ComplexMatrix() = default;
  ComplexMatrix(std::size_t rows, std::size_t cols, cplx fill = cplx(0.0, 0.0));

  static ComplexMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t numel() const { return a_.size(); }
  bool empty() const { return a_.empty(); }

  cplx& at(std::size_t r, std::size_t c) { return a_[r * cols_ + c]; }
  cplx at(std::size_t r, std::size_t c) const { return a_[r * cols_ + c]; }
  cplx* data() { return a_.data(); }
  const cplx* data() const { return a_.data(); }

  bool same_shape(const ComplexMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  std::string shape_str() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<cplx> a_;
};

/** C = A * B (shape-checked). */
ComplexMatrix multiply(const ComplexMatrix& a, const ComplexMatrix& b);
/** Conjugate transpose. */
ComplexMatrix hermitian(const ComplexMatrix& a);
/** Square diagonal matrix from a 1 x n or n x 1 vector. */
ComplexMatrix diag_from_vector(const ComplexMatrix& v);
double frobenius_norm(const ComplexMatrix& a);
ComplexMatrix scalar_multiply(const ComplexMatrix& a, cplx s);
ComplexMatrix add(const ComplexMatrix& a, const ComplexMatrix& b);
ComplexMatrix subtract(const ComplexMatrix& a, const ComplexMatrix& b);

/**
 * Solves A x = b for Hermitian positive-definite A.  Rejects (std::domain_error)
 * when A is not positive definite or its spectral condition number exceeds 1e12.
 */
ComplexMatrix solve_hpd(const ComplexMatrix& a, const ComplexMatrix& b);

}  // namespace rislab
