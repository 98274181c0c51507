#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fewshot/errors.hpp"

namespace fewshot {

using Vector = std::vector<double>;

/// Dense row-major matrix of 64-bit reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  std::span<double> row(std::size_t i) {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

bool operator==(const Matrix& a, const Matrix& b);

// elementwise / BLAS-ish helpers
Matrix multiply(const Matrix& a, const Matrix& b);        // A B
Matrix multiply_abt(const Matrix& a, const Matrix& b);    // A B^T
Matrix multiply_atb(const Matrix& a, const Matrix& b);    // A^T B
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);

/// Lower-triangular Cholesky factor of an SPD matrix; kept around so callers
/// can re-use the factorization for extra right-hand sides.
class CholeskyFactor {
 public:
  explicit CholeskyFactor(const Matrix& a);

  Matrix solve(const Matrix& rhs) const;
  Vector solve(const Vector& rhs) const;

  std::size_t dim() const { return l_.rows(); }

 private:
  Matrix l_;
};

/// Solves a X = rhs for SPD a. Throws NotPositiveDefinite when a pivot
/// drops to <= 1e-12 and InvalidArgument when a is visibly asymmetric.
Matrix cholesky_solve(const Matrix& a, const Matrix& rhs);

/// Row-wise softmax, stabilized by subtracting each row's max.
Matrix softmax_rows(const Matrix& m);

/// Row-wise layer normalization with affine gain/bias. A constant row
/// normalizes to zeros (then + bias) instead of blowing up.
Matrix layer_norm_rows(const Matrix& m, const Vector& gain, const Vector& bias,
                       double eps = 1e-5);

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Values are sorted descending; vectors are the matching columns.
struct EigenDecomposition {
  Vector values;
  Matrix vectors;
};
EigenDecomposition jacobi_eigh(const Matrix& a);

/// Projects points onto the top-2 principal axes of their covariance.
/// Axes are sign-fixed (largest-magnitude component positive).
Matrix pca_2d(const Matrix& points);

}  // namespace fewshot
