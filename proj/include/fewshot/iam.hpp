#pragma once

#include <cstddef>
#include <vector>

#include "fewshot/numerics.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

/// Two-layer bottleneck: forward(x) = relu(x w1) w2, hidden width
/// max(1, floor(d_in / r)).
struct BottleneckMap {
  Matrix w1;  // [d_in x hidden]
  Matrix w2;  // [hidden x d_out]
};

/// Attention block that adjusts support features against the query set:
/// Q = map_q(S), K = map_k(Qry), V = map_v(Qry),
/// A = softmax_rows(Q K^T / sqrt(d_k)) V, rows of A averaged per support
/// class, output = layer_norm(S + dropout(map_h(A))).
struct IamParams {
  BottleneckMap map_q;  // d -> d_k
  BottleneckMap map_k;  // d -> d_k
  BottleneckMap map_v;  // d -> d_v
  BottleneckMap map_h;  // d_v -> d
  Vector ln_gain;       // d
  Vector ln_bias;       // d
  double dropout_rate = 0.1;
  std::size_t d = 0;
  std::size_t d_k = 0;
  std::size_t d_v = 0;
  int r = 8;
};

enum class IamMode { Train, Eval };

/// Forward intermediates kept for iam_vjp. Only train-mode caches are
/// accepted by the backward pass.
struct IamCache {
  bool valid = false;
  IamMode mode = IamMode::Eval;
  Matrix support_x;
  std::vector<int> support_y;
  Matrix query_x;
  Matrix q_hidden, q_out;        // map_q stages
  Matrix k_hidden, k_out;        // map_k stages
  Matrix v_hidden, v_out;        // map_v stages
  Matrix attn;                   // softmax rows [NK x NQ]
  Matrix a_proto;                // prototype-replaced P V [NK x d_v]
  Matrix h_hidden, h_out;        // map_h stages
  Matrix dropout_mask;           // 0 or 1/(1-rate), all-ones in eval
  Matrix pre_ln;                 // S + dropped residual
};

/// Glorot-uniform weights; map_h.w2 starts at zero so a fresh module's
/// residual branch vanishes and the output is exactly layer_norm(S).
IamParams iam_init_params(std::size_t d, std::size_t d_k, std::size_t d_v,
                          int r, Rng& rng);

Matrix iam_forward(const IamParams& params, const Matrix& support_x,
                   const std::vector<int>& support_y, const Matrix& query_x,
                   IamMode mode, Rng& rng, IamCache* cache = nullptr);

/// Gradients mirror the parameter layout; dropout_rate/d/d_k/d_v/r carry no
/// gradient and stay zero-initialized.
struct IamGrads {
  IamParams params;
  Matrix support_x;
  Matrix query_x;
};

IamGrads iam_vjp(const IamParams& params, const IamCache& cache,
                 const Matrix& upstream);

/// Replaces every row with the mean of rows sharing its label. Idempotent.
Matrix replace_rows_with_class_means(const Matrix& rows,
                                     const std::vector<int>& labels);

}  // namespace fewshot
