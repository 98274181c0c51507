#include "fewshot/psm.hpp"

#include <cstddef>

namespace fewshot {

namespace {

struct PseudoBlock {
  std::vector<Vector> rows;
  std::vector<int> labels;
};

/// One prototype per class that received at least one pseudo label.
PseudoBlock prototypes_of(const Matrix& query_x, const std::vector<int>& labels,
                          int way) {
  PseudoBlock block;
  for (int c = 0; c < way; ++c) {
    Vector mean(query_x.cols(), 0.0);
    int count = 0;
    for (std::size_t q = 0; q < query_x.rows(); ++q) {
      if (labels[q] != c) continue;
      ++count;
      for (std::size_t j = 0; j < query_x.cols(); ++j) mean[j] += query_x(q, j);
    }
    if (count == 0) continue;
    for (double& v : mean) v /= count;
    block.rows.push_back(std::move(mean));
    block.labels.push_back(c);
  }
  return block;
}

Matrix stack(const Matrix& base, const PseudoBlock& extra,
             std::vector<int>* labels_out, const std::vector<int>& base_y) {
  Matrix out(base.rows() + extra.rows.size(), base.cols());
  for (std::size_t i = 0; i < base.rows(); ++i)
    for (std::size_t j = 0; j < base.cols(); ++j) out(i, j) = base(i, j);
  for (std::size_t k = 0; k < extra.rows.size(); ++k)
    for (std::size_t j = 0; j < base.cols(); ++j)
      out(base.rows() + k, j) = extra.rows[k][j];
  *labels_out = base_y;
  labels_out->insert(labels_out->end(), extra.labels.begin(),
                     extra.labels.end());
  return out;
}

}  // namespace

PsmResult psm_iterate(const BaseLearnerSpec& spec, const Matrix& support_x,
                      const std::vector<int>& support_y, int way,
                      const Matrix& query_x, const PsmConfig& psm,
                      const CodingMatrix* coding) {
  if (psm.iterations < 0) throw InvalidArgument("psm iterations must be >= 0");
  if (query_x.rows() == 0)
    throw EmptyQuery("psm needs at least one query sample");

  PsmResult result;
  if (psm.iterations == 0) {
    const LearnerModel model =
        fit_learner(spec, support_x, support_y, way, coding);
    result.labels = predict_labels(learner_score(spec, model, query_x));
    result.trace.push_back(result.labels);
    return result;
  }

  PseudoBlock pseudo;
  for (int t = 0; t < psm.iterations; ++t) {
    std::vector<int> cur_y;
    const Matrix cur_x = stack(support_x, pseudo, &cur_y, support_y);
    const LearnerModel model = fit_learner(spec, cur_x, cur_y, way, coding);
    result.labels = predict_labels(learner_score(spec, model, query_x));
    result.trace.push_back(result.labels);

    PseudoBlock fresh = prototypes_of(query_x, result.labels, way);
    if (psm.accumulate) {
      pseudo.rows.insert(pseudo.rows.end(), fresh.rows.begin(),
                         fresh.rows.end());
      pseudo.labels.insert(pseudo.labels.end(), fresh.labels.begin(),
                           fresh.labels.end());
    } else {
      pseudo = std::move(fresh);
    }
  }
  return result;
}

}  // namespace fewshot
