#include "mpq/matrix.hpp"

#include "mpq/error.hpp"

namespace mpq {

void matmul(const Matrix& a, const Matrix& b, Matrix& out, const Matrix* bias) {
  if (a.cols() != b.rows()) fail(ErrorKind::kInternal, "matmul shape mismatch");
  const std::size_t n = a.rows();
  const std::size_t k = a.cols();
  const std::size_t m = b.cols();
  out.assign_zero(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = &out(i, 0);
    if (bias != nullptr) {
      for (std::size_t j = 0; j < m; ++j) o[j] = (*bias)[j];
    }
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* br = b.row(p).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  if (a.rows() != b.rows()) fail(ErrorKind::kInternal, "matmul_tn shape mismatch");
  if (!accumulate || !(out.rows() == a.cols() && out.cols() == b.cols())) {
    out.assign_zero(a.cols(), b.cols());
  }
  const std::size_t m = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* br = b.row(r).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double av = a(r, i);
      if (av == 0.0) continue;
      double* o = &out(i, 0);
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols()) fail(ErrorKind::kInternal, "matmul_nt shape mismatch");
  out.assign_zero(a.rows(), b.rows());
  const std::size_t k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.row(j).data();
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out(i, j) = s;
    }
  }
}

void column_sums(const Matrix& a, Matrix& out, bool accumulate) {
  if (!accumulate || !(out.rows() == 1 && out.cols() == a.cols())) out.assign_zero(1, a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out[c] += a(r, c);
  }
}

}  // namespace mpq
