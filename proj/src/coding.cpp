#include "fewshot/coding.hpp"

#include <cmath>
#include <string>

namespace fewshot {

namespace {

bool column_ok(const std::vector<int>& col, const CodingMatrix& m,
               int filled) {
  int pos = 0, neg = 0;
  for (int v : col) (v > 0 ? pos : neg)++;
  if (pos == 0 || neg == 0) return false;  // single-sign column
  for (int lc = 0; lc < filled; ++lc) {
    bool same = true;
    for (int r = 0; r < m.c && same; ++r) same = m.at(r, lc) == col[r];
    if (same) return false;
  }
  return true;
}

bool rows_distinct(const CodingMatrix& m) {
  for (int a = 0; a < m.c; ++a)
    for (int b = a + 1; b < m.c; ++b) {
      bool same = true;
      for (int lc = 0; lc < m.l && same; ++lc)
        same = m.at(a, lc) == m.at(b, lc);
      if (same) return false;
    }
  return true;
}

}  // namespace

int random_dense_columns(int c) {
  const int wanted =
      static_cast<int>(std::ceil(10.0 * std::log2(static_cast<double>(c))));
  // only 2^c - 2 sign patterns carry both signs; more columns than that
  // cannot stay pairwise distinct
  if (c < 30 && (1 << c) - 2 < wanted) return (1 << c) - 2;
  return wanted;
}

CodingMatrix build_coding_matrix(CodingScheme scheme, int c, Rng* rng) {
  if (c < 2) throw InvalidArgument("coding matrix needs c >= 2");
  CodingMatrix m;
  m.scheme = scheme;
  m.c = c;
  switch (scheme) {
    case CodingScheme::OneVsAll: {
      m.l = c;
      m.entries.assign(static_cast<std::size_t>(c) * c, -1);
      for (int r = 0; r < c; ++r) m.entries[r * c + r] = +1;
      break;
    }
    case CodingScheme::OneVsOne: {
      m.l = c * (c - 1) / 2;
      m.entries.assign(static_cast<std::size_t>(c) * m.l, 0);
      int col = 0;
      for (int a = 0; a < c; ++a)
        for (int b = a + 1; b < c; ++b, ++col) {
          m.entries[a * m.l + col] = +1;
          m.entries[b * m.l + col] = -1;
        }
      break;
    }
    case CodingScheme::RandomDense: {
      if (rng == nullptr)
        throw InvalidArgument("RandomDense coding needs an rng_state");
      m.l = random_dense_columns(c);
      m.entries.assign(static_cast<std::size_t>(c) * m.l, 0);
      std::vector<int> col(c);
      for (int attempt = 0; attempt < 1000; ++attempt) {
        for (int lc = 0; lc < m.l; ++lc) {
          do {
            for (int r = 0; r < c; ++r)
              col[r] = rng->next_u32() & 1u ? +1 : -1;
          } while (!column_ok(col, m, lc));
          for (int r = 0; r < c; ++r) m.entries[r * m.l + lc] = col[r];
        }
        if (rows_distinct(m)) return m;
      }
      throw InvalidArgument("RandomDense coding failed to satisfy invariants");
    }
  }
  return m;
}

std::vector<int> encode_labels(const CodingMatrix& m,
                               const std::vector<int>& labels) {
  std::vector<int> out(labels.size() * m.l);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= m.c)
      throw LabelOutOfRange("encode_labels: label " + std::to_string(y) +
                            " outside 0.." + std::to_string(m.c - 1));
    for (int lc = 0; lc < m.l; ++lc) out[i * m.l + lc] = m.at(y, lc);
  }
  return out;
}

DecodeResult decode_scores(const CodingMatrix& m, const Matrix& c_values,
                           DecodeMode mode) {
  if (static_cast<int>(c_values.cols()) != m.l)
    throw ShapeMismatch("decode_scores: c_values cols != L");
  const std::size_t n = c_values.rows();
  DecodeResult out;
  out.labels.resize(n);
  out.class_scores = Matrix(n, m.c);

  for (std::size_t i = 0; i < n; ++i) {
    if (mode == DecodeMode::LinearApprox) {
      for (int r = 0; r < m.c; ++r) {
        double s = 0.0;
        for (int lc = 0; lc < m.l; ++lc)
          s += static_cast<double>(m.at(r, lc)) * c_values(i, lc);
        out.class_scores(i, r) = s;
      }
    } else {
      for (int r = 0; r < m.c; ++r) {
        double dist = 0.0;
        for (int lc = 0; lc < m.l; ++lc) {
          // sgn(0) = +1 keeps the distance total and deterministic
          const double prod =
              static_cast<double>(m.at(r, lc)) *
              (c_values(i, lc) >= 0.0 ? 1.0 : -1.0);
          dist += (1.0 - (prod >= 0.0 ? 1.0 : -1.0)) * 0.5;
        }
        out.class_scores(i, r) = -dist;
      }
    }
    int best = 0;
    for (int r = 1; r < m.c; ++r)
      if (out.class_scores(i, r) > out.class_scores(i, best)) best = r;
    out.labels[i] = best;
  }
  return out;
}

}  // namespace fewshot
