#pragma once

#include <cstddef>
#include <vector>

#include "divens/tensor.hpp"

namespace divens::linalg {

/// LU factorization with partial pivoting of a small dense square matrix.
struct Lu {
  std::size_t n = 0;
  std::vector<double> factors;  // packed L (unit diagonal) and U
  std::vector<std::size_t> pivots;
  int sign = 1;
  bool singular = false;  // an exactly zero pivot was met

  double determinant() const;
  /// log|det|; caller checks the sign.
  double log_abs_determinant() const;
  Tensor inverse() const;
};

Lu lu_factor(const Tensor& square);

/// 1-norm condition number estimate computed from the explicit inverse
/// (infinite when the factorization is singular).
double condition_1norm(const Tensor& square, const Lu& lu);

double determinant(const Tensor& square);
Tensor inverse(const Tensor& square);

}  // namespace divens::linalg
