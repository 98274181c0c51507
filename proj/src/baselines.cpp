#include "fewshot/baselines.hpp"

#include <string>

namespace fewshot {

namespace {

std::vector<int> class_counts(const std::vector<int>& labels, std::size_t n,
                              int way) {
  if (way < 2) throw InsufficientClasses("learner needs at least 2 classes");
  if (labels.size() != n)
    throw ShapeMismatch("label count does not match sample count");
  std::vector<int> count(way, 0);
  for (int v : labels) {
    if (v < 0 || v >= way)
      throw LabelOutOfRange("label " + std::to_string(v) + " outside 0.." +
                            std::to_string(way - 1));
    ++count[v];
  }
  return count;
}

}  // namespace

Matrix class_means(const Matrix& x, const std::vector<int>& labels, int way) {
  const std::vector<int> count = class_counts(labels, x.rows(), way);
  for (int c = 0; c < way; ++c)
    if (count[c] == 0)
      throw InsufficientSamples("class " + std::to_string(c) +
                                " has no samples");
  Matrix means(static_cast<std::size_t>(way), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const int c = labels[i];
    for (std::size_t j = 0; j < x.cols(); ++j) means(c, j) += x(i, j);
  }
  for (int c = 0; c < way; ++c)
    for (std::size_t j = 0; j < x.cols(); ++j) means(c, j) /= count[c];
  return means;
}

PrototypeModel fit_prototype_nn(const Matrix& support_x,
                                const std::vector<int>& support_y, int way) {
  return {class_means(support_x, support_y, way)};
}

RidgeModel fit_ridge(const Matrix& support_x, const std::vector<int>& support_y,
                     int way, double lambda) {
  if (lambda <= 0.0) throw InvalidArgument("ridge lambda must be > 0");
  const std::vector<int> count = class_counts(support_y, support_x.rows(), way);
  for (int c = 0; c < way; ++c)
    if (count[c] == 0)
      throw InsufficientSamples("class " + std::to_string(c) +
                                " has no samples");
  const std::size_t n = support_x.rows();
  Matrix k = multiply_abt(support_x, support_x);
  for (std::size_t i = 0; i < n; ++i) k(i, i) += lambda;
  Matrix targets(n, static_cast<std::size_t>(way));
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < way; ++c)
      targets(i, c) = support_y[i] == c ? 1.0 : -1.0;
  RidgeModel model;
  model.support_x = support_x;
  model.dual_coef = cholesky_solve(k, targets);
  return model;
}

LearnerModel fit_learner(const BaseLearnerSpec& spec, const Matrix& support_x,
                         const std::vector<int>& support_y, int way,
                         const CodingMatrix* coding) {
  LearnerModel model;
  model.kind = spec.kind;
  model.way = way;
  switch (spec.kind) {
    case LearnerKind::PrototypeNN:
      model.proto = fit_prototype_nn(support_x, support_y, way);
      return model;
    case LearnerKind::Ridge:
      model.ridge = fit_ridge(support_x, support_y, way, spec.ridge_lambda);
      return model;
    case LearnerKind::Lssvm: {
      if (coding == nullptr) {
        const CodingMatrix ova =
            build_coding_matrix(CodingScheme::OneVsAll, way);
        model.lssvm = fit_lssvm(support_x, support_y, ova, spec.lssvm);
      } else {
        if (coding->c != way)
          throw ShapeMismatch("coding matrix class count != way");
        model.lssvm = fit_lssvm(support_x, support_y, *coding, spec.lssvm);
      }
      return model;
    }
  }
  throw InvalidArgument("unknown learner kind");
}

Matrix learner_score(const BaseLearnerSpec& spec, const LearnerModel& model,
                     const Matrix& query_x) {
  if (spec.kind != model.kind)
    throw KindMismatch("spec kind does not match fitted model kind");
  switch (model.kind) {
    case LearnerKind::PrototypeNN: {
      const Matrix& p = model.proto.prototypes;
      if (query_x.cols() != p.cols())
        throw ShapeMismatch("query dim differs from prototypes");
      Matrix scores(query_x.rows(), p.rows());
      for (std::size_t q = 0; q < query_x.rows(); ++q)
        for (std::size_t c = 0; c < p.rows(); ++c)
          scores(q, c) = -squared_distance(query_x.row(q), p.row(c));
      return scores;
    }
    case LearnerKind::Ridge: {
      const Matrix cross = multiply_abt(query_x, model.ridge.support_x);
      return multiply(cross, model.ridge.dual_coef);
    }
    case LearnerKind::Lssvm:
      return lssvm_predict(model.lssvm, query_x).class_scores;
  }
  throw InvalidArgument("unknown learner kind");
}

std::vector<int> predict_labels(const Matrix& class_scores) {
  std::vector<int> labels(class_scores.rows());
  for (std::size_t q = 0; q < class_scores.rows(); ++q) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < class_scores.cols(); ++c)
      if (class_scores(q, c) > class_scores(q, best)) best = c;
    labels[q] = static_cast<int>(best);
  }
  return labels;
}

}  // namespace fewshot
