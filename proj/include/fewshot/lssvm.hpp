#pragma once

#include <optional>
#include <vector>

#include "fewshot/coding.hpp"
#include "fewshot/numerics.hpp"

namespace fewshot {

enum class KernelKind { Linear, RBF };

struct KernelSpec {
  KernelKind kind = KernelKind::Linear;
  double sigma = 1.0;  // RBF bandwidth
};

/// K(xa_i, xb_j) for every pair of rows.
Matrix kernel_matrix(const KernelSpec& spec, const Matrix& xa,
                     const Matrix& xb);

struct LssvmConfig {
  double gamma = 0.1;
  KernelSpec kernel;
  DecodeMode decode = DecodeMode::LinearApprox;
  /// Scale s of the bias stationarity row (-s b + y^T alpha = 0).
  /// 1 is the KKT-consistent choice; 2 reproduces the alternative printed
  /// system for comparison.
  double bias_stationarity_scale = 1.0;
};

/// One reduced SPD subproblem: G = Omega + (1/s) y y^T over the samples
/// whose code is nonzero, with unit right-hand side.
struct KktBlock {
  std::vector<int> active;   // indices into the support set
  std::vector<double> y;     // +-1 codes of the active samples
  Matrix omega;              // y_i y_j K(x_i, x_j) + delta_ij / gamma
  Matrix g;                  // omega + (1/s) y y^T
};

std::vector<KktBlock> assemble_kkt_blocks(const Matrix& support_x,
                                          const std::vector<int>& encoded_y,
                                          const CodingMatrix& coding,
                                          const LssvmConfig& cfg);

/// Fitted multi-class LSSVM: per-subproblem duals, biases and the Cholesky
/// factors kept for the implicit-gradient pass.
struct LssvmModel {
  Matrix support_x;
  std::vector<int> encoded_y;  // n x L row-major
  CodingMatrix coding;
  LssvmConfig config;
  std::vector<KktBlock> blocks;
  std::vector<Vector> alpha;           // per subproblem, over active samples
  std::vector<double> bias;
  std::vector<CholeskyFactor> factors;
};

LssvmModel fit_lssvm(const Matrix& support_x, const std::vector<int>& support_y,
                     const CodingMatrix& coding, const LssvmConfig& cfg);

/// c_l(x) = sum_i alpha_l^i y_i^l K(x_i, x) + b_l, one column per subproblem.
Matrix decision_values(const LssvmModel& model, const Matrix& query_x);

DecodeResult lssvm_predict(const LssvmModel& model, const Matrix& query_x);

struct LssvmGrads {
  Matrix support_x;
  Matrix query_x;
};

/// Vector-Jacobian product of LinearApprox class scores with respect to the
/// support and query features, differentiating through the KKT solve by the
/// implicit function theorem (one extra back-substitution per subproblem).
LssvmGrads lssvm_vjp(const LssvmModel& model, const Matrix& query_x,
                     const Matrix& upstream_class_scores);

}  // namespace fewshot
