#include "rislab/complex_matrix.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rislab {
namespace {

using ECMat =
    Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ECMap = Eigen::Map<const ECMat>;
using EMap = Eigen::Map<ECMat>;

ECMap map_of(const ComplexMatrix& m) {
  return ECMap(m.data(), static_cast<Eigen::Index>(m.rows()),
               static_cast<Eigen::Index>(m.cols()));
}

EMap map_of(ComplexMatrix& m) {
  return EMap(m.data(), static_cast<Eigen::Index>(m.rows()),
              static_cast<Eigen::Index>(m.cols()));
}

}  // namespace

ComplexMatrix::ComplexMatrix(std::size_t rows, std::size_t cols, cplx fill)
    : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

ComplexMatrix ComplexMatrix::identity(std::size_t n) {
  ComplexMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = cplx(1.0, 0.0);
  return m;
}

std::string ComplexMatrix::shape_str() const {
  std::ostringstream os;
  os << "(" << rows_ << ", " << cols_ << ")";
  return os.str();
}

ComplexMatrix multiply(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("complex multiply: shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
  }
  ComplexMatrix c(a.rows(), b.cols());
  map_of(c).noalias() = map_of(a) * map_of(b);
  return c;
}

ComplexMatrix hermitian(const ComplexMatrix& a) {
  ComplexMatrix c(a.cols(), a.rows());
  map_of(c) = map_of(a).adjoint();
  return c;
}

ComplexMatrix diag_from_vector(const ComplexMatrix& v) {
  if (v.rows() != 1 && v.cols() != 1) {
    throw std::invalid_argument("diag_from_vector: expected a vector, got " +
                                v.shape_str());
  }
  const std::size_t n = v.numel();
  ComplexMatrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) d.at(i, i) = v.data()[i];
  return d;
}

double frobenius_norm(const ComplexMatrix& a) { return map_of(a).norm(); }

ComplexMatrix scalar_multiply(const ComplexMatrix& a, cplx s) {
  ComplexMatrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.numel(); ++i) c.data()[i] = a.data()[i] * s;
  return c;
}

ComplexMatrix add(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("complex add: shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
  ComplexMatrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.numel(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
  return c;
}

ComplexMatrix subtract(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("complex subtract: shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
  ComplexMatrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.numel(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
  return c;
}

ComplexMatrix solve_hpd(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument("solve_hpd: matrix not square, " + a.shape_str());
  }
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("solve_hpd: rhs shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
  ECMat A = map_of(a);
  // Spectral condition estimate; these systems are small (antenna count sized),
  // so the exact symmetric eigendecomposition is cheap and reliable.
  Eigen::SelfAdjointEigenSolver<ECMat> eig(A);
  if (eig.info() != Eigen::Success) {
    throw std::domain_error("solve_hpd: eigendecomposition failed");
  }
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  if (lmin <= 0.0 || lmax / lmin > 1e12) {
    std::ostringstream os;
    os << "solve_hpd: matrix not positive definite or ill-conditioned"
       << " (lambda_min=" << lmin << ", lambda_max=" << lmax << ")";
    throw std::domain_error(os.str());
  }
  Eigen::LLT<ECMat> llt(A);
  if (llt.info() != Eigen::Success) {
    throw std::domain_error("solve_hpd: Cholesky factorization failed");
  }
  ComplexMatrix x(b.rows(), b.cols());
  map_of(x) = llt.solve(map_of(b));
  return x;
}

}  // namespace rislab
