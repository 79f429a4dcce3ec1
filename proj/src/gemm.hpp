#pragma once

#include <cstddef>

#include "mhflid/tensor.hpp"

namespace mhflid::detail {

// C[m x n] (+)= op(A) * op(B), row-major, double accumulation.
// op(A) is m x k: A is stored m x k, or k x m when trans_a.
// op(B) is k x n: B is stored k x n, or n x k when trans_b.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const real* a,
          const real* b, real* c, bool accumulate);

}  // namespace mhflid::detail
