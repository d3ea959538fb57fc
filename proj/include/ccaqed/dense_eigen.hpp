#pragma once

#include <Eigen/Dense>
#include <lapacke.h>

#include <string>

#include "ccaqed/error.hpp"

namespace ccaqed {

/// In-place symmetric eigendecomposition (LAPACK divide and conquer).
/// On return `a` holds orthonormal eigenvectors as columns and `w` the
/// eigenvalues in ascending order.
inline void symmetric_eigen(Eigen::MatrixXd& a, Eigen::VectorXd& w) {
  const auto n = static_cast<lapack_int>(a.rows());
  w.resize(n);
  if (n == 0) return;
  const lapack_int info =
      LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'U', n, a.data(), n, w.data());
  if (info != 0)
    throw NumericalError("dsyevd failed with info=" + std::to_string(info));
}

}  // namespace ccaqed
