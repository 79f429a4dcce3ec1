#include "gemm.hpp"

#include <vector>

namespace mhflid::detail {

namespace {

void transpose_into(const real* src, std::size_t rows, std::size_t cols, std::vector<real>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const real* a,
          const real* b, real* c, bool accumulate) {
  thread_local std::vector<real> a_buf, b_buf;
  thread_local std::vector<double> acc;

  if (trans_a) {
    transpose_into(a, k, m, a_buf);
    a = a_buf.data();
  }
  if (trans_b) {
    transpose_into(b, n, k, b_buf);
    b = b_buf.data();
  }
  acc.resize(n);
  for (std::size_t i = 0; i < m; ++i) {
    double* acc_row = acc.data();
    for (std::size_t j = 0; j < n; ++j) acc_row[j] = 0.0;
    const real* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a_row[p];
      if (av == 0.0) continue;
      const real* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc_row[j] += av * static_cast<double>(b_row[j]);
    }
    real* c_row = c + i * n;
    if (accumulate) {
      for (std::size_t j = 0; j < n; ++j) c_row[j] = static_cast<real>(c_row[j] + acc_row[j]);
    } else {
      for (std::size_t j = 0; j < n; ++j) c_row[j] = static_cast<real>(acc_row[j]);
    }
  }
}

}  // namespace mhflid::detail
