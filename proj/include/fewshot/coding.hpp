#pragma once

#include <utility>
#include <vector>

#include "fewshot/numerics.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

enum class CodingScheme { OneVsAll, OneVsOne, RandomDense };

/// C x L codebook over {-1, 0, +1} mapping classes to binary subproblems.
/// Invariants: no all-zero or repeated column, all rows distinct, and every
/// column carries both signs so each subproblem is a real binary task.
struct CodingMatrix {
  CodingScheme scheme = CodingScheme::OneVsAll;
  int c = 0;  // classes
  int l = 0;  // subproblems
  std::vector<int> entries;  // row-major C x L

  int at(int r, int col) const { return entries[r * l + col]; }
};

/// Columns for RandomDense: ceil(10 * log2(c)) over {-1, +1}, capped at the
/// 2^c - 2 sign patterns that can appear without duplicating a column.
int random_dense_columns(int c);

CodingMatrix build_coding_matrix(CodingScheme scheme, int c,
                                 Rng* rng = nullptr);

/// entry (i, l) = M[labels[i], l]
std::vector<int> encode_labels(const CodingMatrix& m,
                               const std::vector<int>& labels);

enum class DecodeMode { Hamming, LinearApprox };

struct DecodeResult {
  std::vector<int> labels;
  Matrix class_scores;  // [n x C], higher is better in both modes
};

/// Hamming: argmin_r sum_l (1 - sgn(M_rl * sgn(c_l))) / 2 with sgn(0) = +1.
/// LinearApprox: argmax_r sum_l M_rl * c_l (scores kept for the loss).
/// Ties break toward the lowest class index.
DecodeResult decode_scores(const CodingMatrix& m, const Matrix& c_values,
                           DecodeMode mode);

}  // namespace fewshot
