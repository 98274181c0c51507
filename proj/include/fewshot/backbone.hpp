#pragma once

#include <cstddef>
#include <vector>

#include "fewshot/numerics.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

/// Fully connected stack with ReLU between layers (never after the last).
/// Zero layers is the identity map.
struct BackboneParams {
  std::vector<Matrix> weights;  // layer i: [d_i x d_{i+1}]
  std::vector<Vector> biases;   // layer i: d_{i+1}
};

/// Glorot-uniform weights, zero biases, for widths d_in -> widths[0] -> ...
BackboneParams backbone_init(std::size_t d_in,
                             const std::vector<std::size_t>& widths, Rng& rng);

std::size_t backbone_output_dim(const BackboneParams& params,
                                std::size_t d_in);

struct BackboneCache {
  bool valid = false;
  Matrix input;
  std::vector<Matrix> post_act;  // layer outputs after ReLU (last: pre-ReLU)
};

Matrix backbone_forward(const BackboneParams& params, const Matrix& x,
                        BackboneCache* cache = nullptr);

struct BackboneGrads {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Matrix input;
};

BackboneGrads backbone_vjp(const BackboneParams& params,
                           const BackboneCache& cache, const Matrix& upstream);

/// Elementwise in-place accumulation helpers used when summing grads over
/// support and query passes or across a batch.
void accumulate(BackboneGrads& into, const BackboneGrads& from);

}  // namespace fewshot
