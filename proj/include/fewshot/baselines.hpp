#pragma once

#include <vector>

#include "fewshot/lssvm.hpp"
#include "fewshot/numerics.hpp"

namespace fewshot {

enum class LearnerKind { PrototypeNN, Ridge, Lssvm };

/// Uniform switch over the three base learners. Only the fields matching
/// `kind` are consulted at fit time.
struct BaseLearnerSpec {
  LearnerKind kind = LearnerKind::Lssvm;
  double ridge_lambda = 1.0;  // Ridge only
  LssvmConfig lssvm;          // Lssvm only
};

struct PrototypeModel {
  Matrix prototypes;  // [way x d], row c = mean of class-c support
};

struct RidgeModel {
  Matrix support_x;  // kept for the cross Gram at score time
  Matrix dual_coef;  // [n x way] = (X X^T + lambda I)^{-1} T
};

struct LearnerModel {
  LearnerKind kind = LearnerKind::PrototypeNN;
  int way = 0;
  PrototypeModel proto;
  RidgeModel ridge;
  LssvmModel lssvm;
};

/// Per-class mean feature rows; every class in 0..way-1 must be present.
Matrix class_means(const Matrix& x, const std::vector<int>& labels, int way);

PrototypeModel fit_prototype_nn(const Matrix& support_x,
                                const std::vector<int>& support_y, int way);

/// One-vs-all +-1 targets, dual linear ridge.
RidgeModel fit_ridge(const Matrix& support_x, const std::vector<int>& support_y,
                     int way, double lambda);

/// Dispatches on spec.kind. The Lssvm path uses `coding` when given and
/// falls back to one-vs-all over `way` classes.
LearnerModel fit_learner(const BaseLearnerSpec& spec, const Matrix& support_x,
                         const std::vector<int>& support_y, int way,
                         const CodingMatrix* coding = nullptr);

/// Class scores [m x way]; higher is better, argmax is the prediction.
/// The Lssvm path returns the decoded scores of the configured decode mode,
/// so argmax reproduces lssvm_predict labels exactly.
Matrix learner_score(const BaseLearnerSpec& spec, const LearnerModel& model,
                     const Matrix& query_x);

/// Row argmax with ties broken toward the lowest class index.
std::vector<int> predict_labels(const Matrix& class_scores);

}  // namespace fewshot
