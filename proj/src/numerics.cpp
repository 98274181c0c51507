#include "fewshot/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fewshot {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw ShapeMismatch("matrix data length does not match rows*cols");
  if (!all_finite()) throw InvalidArgument("matrix entries must be finite");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a.data() == b.data();
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeMismatch("multiply: inner dims differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Matrix multiply_abt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeMismatch("multiply_abt: dims differ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

Matrix multiply_atb(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeMismatch("multiply_atb: dims differ");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("add: shapes differ");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("subtract: shapes differ");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::fabs(v));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("max_abs_diff: shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

namespace {

constexpr double kPivotFloor = 1e-12;

void check_square_symmetric(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0)
    throw ShapeMismatch("cholesky: matrix must be square and nonempty");
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) {
      const double lhs = a(i, j), rhs = a(j, i);
      if (std::fabs(lhs - rhs) >
          1e-10 * (1.0 + std::max(std::fabs(lhs), std::fabs(rhs))))
        throw InvalidArgument("cholesky: matrix is not symmetric");
    }
}

}  // namespace

CholeskyFactor::CholeskyFactor(const Matrix& a) : l_(a.rows(), a.cols()) {
  check_square_symmetric(a);
  const std::size_t n = a.rows();
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j) - dot(l_.row(j).subspan(0, j), l_.row(j).subspan(0, j));
    if (d <= kPivotFloor)
      throw NotPositiveDefinite("cholesky pivot " + std::to_string(d) +
                                " at column " + std::to_string(j));
    l_(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      const double s =
          dot(l_.row(i).subspan(0, j), l_.row(j).subspan(0, j));
      l_(i, j) = (a(i, j) - s) / l_(j, j);
    }
  }
}

Matrix CholeskyFactor::solve(const Matrix& rhs) const {
  const std::size_t n = l_.rows();
  if (rhs.rows() != n) throw ShapeMismatch("cholesky solve: rhs rows differ");
  Matrix x = rhs;
  // L y = rhs
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l_(i, k) * x(k, c);
      x(i, c) = s / l_(i, i);
    }
  // L^T x = y
  for (std::size_t ii = n; ii-- > 0;)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double s = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= l_(k, ii) * x(k, c);
      x(ii, c) = s / l_(ii, ii);
    }
  return x;
}

Vector CholeskyFactor::solve(const Vector& rhs) const {
  Matrix col(rhs.size(), 1, rhs);
  return solve(col).data();
}

Matrix cholesky_solve(const Matrix& a, const Matrix& rhs) {
  if (a.rows() != rhs.rows())
    throw ShapeMismatch("cholesky_solve: rhs rows differ from matrix");
  return CholeskyFactor(a).solve(rhs);
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double mx = m(i, 0);
    for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double e = std::exp(m(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) /= sum;
  }
  return out;
}

Matrix layer_norm_rows(const Matrix& m, const Vector& gain, const Vector& bias,
                       double eps) {
  if (gain.size() != m.cols() || bias.size() != m.cols())
    throw ShapeMismatch("layer_norm_rows: gain/bias length must equal cols");
  if (eps <= 0.0) throw InvalidArgument("layer_norm_rows: eps must be > 0");
  const double d = static_cast<double>(m.cols());
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) mean += m(i, j);
    mean /= d;
    double var = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double c = m(i, j) - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m.cols(); ++j)
      out(i, j) = gain[j] * (m(i, j) - mean) * inv + bias[j];
  }
  return out;
}

EigenDecomposition jacobi_eigh(const Matrix& a) {
  check_square_symmetric(a);
  const std::size_t n = a.rows();
  Matrix m = a;
  Matrix v = Matrix::identity(n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
    if (off <= 1e-30 * std::max(1.0, max_abs(m))) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (std::fabs(apq) <
            1e-18 * (std::fabs(m(p, p)) + std::fabs(m(q, q)) + 1e-300))
          continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return m(x, x) > m(y, y); });
  EigenDecomposition out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = m(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

Matrix pca_2d(const Matrix& points) {
  const std::size_t m = points.rows(), d = points.cols();
  if (m < 3) throw InvalidArgument("pca_2d: need at least 3 points");
  if (d < 2) throw InvalidArgument("pca_2d: need at least 2 dimensions");
  Vector mean(d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += points(i, j);
  for (double& v : mean) v /= static_cast<double>(m);
  Matrix centered(m, d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j)
      centered(i, j) = points(i, j) - mean[j];
  Matrix cov = multiply_atb(centered, centered);
  for (double& v : cov.data()) v /= static_cast<double>(m - 1);
  const EigenDecomposition eig = jacobi_eigh(cov);
  if (eig.values[1] <= 1e-12 * std::max(1.0, eig.values[0]))
    throw DegenerateInput("pca_2d: covariance rank < 2 (points collinear)");
  Matrix axes(d, 2);
  for (int j = 0; j < 2; ++j) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < d; ++i)
      if (std::fabs(eig.vectors(i, j)) > std::fabs(eig.vectors(arg, j)))
        arg = i;
    const double flip = eig.vectors(arg, j) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < d; ++i) axes(i, j) = flip * eig.vectors(i, j);
  }
  return multiply(centered, axes);
}

}  // namespace fewshot
