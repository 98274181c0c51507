#pragma once

#include <vector>

#include "fewshot/baselines.hpp"

namespace fewshot {

struct PsmConfig {
  int iterations = 10;
  /// true keeps pseudo samples from earlier iterations; false rebuilds the
  /// pseudo block from scratch each round.
  bool accumulate = true;
};

struct PsmResult {
  std::vector<int> labels;  // final query predictions
  /// trace[t] holds the pseudo-labels produced by fit t+1. With
  /// iterations = 0 a single plain prediction is recorded, so
  /// trace.back() == labels always.
  std::vector<std::vector<int>> trace;
};

/// Iterated pseudo-support refinement: fit on the current support, label the
/// queries, append one query prototype per predicted class, repeat.
PsmResult psm_iterate(const BaseLearnerSpec& spec, const Matrix& support_x,
                      const std::vector<int>& support_y, int way,
                      const Matrix& query_x, const PsmConfig& psm,
                      const CodingMatrix* coding = nullptr);

}  // namespace fewshot
