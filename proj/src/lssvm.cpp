#include "fewshot/lssvm.hpp"

#include <cassert>
#include <cmath>
#include <string>

namespace fewshot {

Matrix kernel_matrix(const KernelSpec& spec, const Matrix& xa,
                     const Matrix& xb) {
  if (xa.cols() != xb.cols())
    throw ShapeMismatch("kernel_matrix: feature dims differ");
  switch (spec.kind) {
    case KernelKind::Linear:
      return multiply_abt(xa, xb);
    case KernelKind::RBF: {
      if (spec.sigma <= 0.0)
        throw InvalidArgument("RBF kernel needs sigma > 0");
      Matrix out(xa.rows(), xb.rows());
      const double inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
      for (std::size_t i = 0; i < xa.rows(); ++i)
        for (std::size_t j = 0; j < xb.rows(); ++j)
          out(i, j) = std::exp(-squared_distance(xa.row(i), xb.row(j)) * inv);
      return out;
    }
  }
  throw UnsupportedKernelGradient("unknown kernel kind");
}

std::vector<KktBlock> assemble_kkt_blocks(const Matrix& support_x,
                                          const std::vector<int>& encoded_y,
                                          const CodingMatrix& coding,
                                          const LssvmConfig& cfg) {
  if (cfg.gamma <= 0.0) throw InvalidArgument("lssvm: gamma must be > 0");
  const std::size_t n = support_x.rows();
  if (encoded_y.size() != n * static_cast<std::size_t>(coding.l))
    throw ShapeMismatch("assemble_kkt_blocks: encoded labels shape");
  const Matrix gram = kernel_matrix(cfg.kernel, support_x, support_x);
  const double inv_s = 1.0 / cfg.bias_stationarity_scale;

  std::vector<KktBlock> blocks(coding.l);
  for (int lc = 0; lc < coding.l; ++lc) {
    KktBlock& blk = blocks[lc];
    int pos = 0, neg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int code = encoded_y[i * coding.l + lc];
      if (code == 0) continue;  // zero-coded samples sit this subproblem out
      blk.active.push_back(static_cast<int>(i));
      blk.y.push_back(static_cast<double>(code));
      (code > 0 ? pos : neg)++;
    }
    if (pos == 0 || neg == 0)
      throw DegenerateSubproblem("subproblem " + std::to_string(lc) +
                                 " sees only one label sign");
    const std::size_t m = blk.active.size();
    blk.omega = Matrix(m, m);
    blk.g = Matrix(m, m);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b) {
        const double w =
            blk.y[a] * blk.y[b] * gram(blk.active[a], blk.active[b]);
        blk.omega(a, b) = w + (a == b ? 1.0 / cfg.gamma : 0.0);
        blk.g(a, b) = blk.omega(a, b) + inv_s * blk.y[a] * blk.y[b];
      }
  }
  return blocks;
}

LssvmModel fit_lssvm(const Matrix& support_x, const std::vector<int>& support_y,
                     const CodingMatrix& coding, const LssvmConfig& cfg) {
  LssvmModel model;
  model.support_x = support_x;
  model.encoded_y = encode_labels(coding, support_y);
  model.coding = coding;
  model.config = cfg;
  model.blocks = assemble_kkt_blocks(support_x, model.encoded_y, coding, cfg);

  const double inv_s = 1.0 / cfg.bias_stationarity_scale;
  for (const KktBlock& blk : model.blocks) {
    model.factors.emplace_back(blk.g);
    const Vector ones(blk.active.size(), 1.0);
    Vector a = model.factors.back().solve(ones);
    double b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) b += blk.y[i] * a[i];
    b *= inv_s;
    model.alpha.push_back(std::move(a));
    model.bias.push_back(b);
  }

#ifndef NDEBUG
  // KKT residuals of the unreduced system
  for (std::size_t lc = 0; lc < model.blocks.size(); ++lc) {
    const KktBlock& blk = model.blocks[lc];
    const Vector& a = model.alpha[lc];
    double stat = -cfg.bias_stationarity_scale * model.bias[lc];
    for (std::size_t i = 0; i < a.size(); ++i) stat += blk.y[i] * a[i];
    assert(std::fabs(stat) <= 1e-8);
    for (std::size_t i = 0; i < a.size(); ++i) {
      double r = blk.y[i] * model.bias[lc] - 1.0;
      for (std::size_t j = 0; j < a.size(); ++j) r += blk.omega(i, j) * a[j];
      assert(std::fabs(r) <= 1e-8);
    }
  }
#endif
  return model;
}

Matrix decision_values(const LssvmModel& model, const Matrix& query_x) {
  if (query_x.cols() != model.support_x.cols())
    throw ShapeMismatch("decision_values: query dim differs from support");
  const Matrix cross =
      kernel_matrix(model.config.kernel, model.support_x, query_x);
  const std::size_t m = query_x.rows();
  Matrix out(m, model.blocks.size());
  for (std::size_t lc = 0; lc < model.blocks.size(); ++lc) {
    const KktBlock& blk = model.blocks[lc];
    const Vector& a = model.alpha[lc];
    for (std::size_t q = 0; q < m; ++q) {
      double c = model.bias[lc];
      for (std::size_t i = 0; i < blk.active.size(); ++i)
        c += a[i] * blk.y[i] * cross(blk.active[i], q);
      out(q, lc) = c;
    }
  }
  return out;
}

DecodeResult lssvm_predict(const LssvmModel& model, const Matrix& query_x) {
  return decode_scores(model.coding, decision_values(model, query_x),
                       model.config.decode);
}

namespace {

/// Accumulates kbar * dK(a_row, b_row) into the two feature gradients.
void kernel_pair_backward(const KernelSpec& spec, std::span<const double> a,
                          std::span<const double> b, double kbar, double k_ab,
                          std::span<double> a_grad, std::span<double> b_grad) {
  switch (spec.kind) {
    case KernelKind::Linear:
      for (std::size_t j = 0; j < a.size(); ++j) {
        a_grad[j] += kbar * b[j];
        b_grad[j] += kbar * a[j];
      }
      return;
    case KernelKind::RBF: {
      const double w = kbar * k_ab / (spec.sigma * spec.sigma);
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = b[j] - a[j];
        a_grad[j] += w * diff;
        b_grad[j] -= w * diff;
      }
      return;
    }
  }
  throw UnsupportedKernelGradient("no derivative rule for this kernel");
}

}  // namespace

LssvmGrads lssvm_vjp(const LssvmModel& model, const Matrix& query_x,
                     const Matrix& upstream_class_scores) {
  const std::size_t m = query_x.rows();
  if (upstream_class_scores.rows() != m ||
      static_cast<int>(upstream_class_scores.cols()) != model.coding.c)
    throw ShapeMismatch("lssvm_vjp: upstream shape");
  if (!upstream_class_scores.all_finite())
    throw InvalidArgument("lssvm_vjp: upstream must be finite");

  const KernelSpec& kernel = model.config.kernel;
  const Matrix gram = kernel_matrix(kernel, model.support_x, model.support_x);
  const Matrix cross = kernel_matrix(kernel, model.support_x, query_x);

  LssvmGrads grads;
  grads.support_x = Matrix(model.support_x.rows(), model.support_x.cols());
  grads.query_x = Matrix(m, query_x.cols());

  // scores = c_values  M^T  =>  cbar = upstream  M
  Matrix cbar(m, model.coding.l);
  for (std::size_t q = 0; q < m; ++q)
    for (int lc = 0; lc < model.coding.l; ++lc) {
      double s = 0.0;
      for (int r = 0; r < model.coding.c; ++r)
        s += upstream_class_scores(q, r) *
             static_cast<double>(model.coding.at(r, lc));
      cbar(q, lc) = s;
    }

  const double inv_s = 1.0 / model.config.bias_stationarity_scale;
  for (std::size_t lc = 0; lc < model.blocks.size(); ++lc) {
    const KktBlock& blk = model.blocks[lc];
    const Vector& alpha = model.alpha[lc];
    const std::size_t na = blk.active.size();

    // direct paths through c_l(q) = sum_i alpha_i y_i K(x_i, q) + b
    Vector alpha_bar(na, 0.0);
    double bias_bar = 0.0;
    for (std::size_t q = 0; q < m; ++q) {
      const double cb = cbar(q, lc);
      if (cb == 0.0) continue;
      bias_bar += cb;
      for (std::size_t i = 0; i < na; ++i) {
        const int si = blk.active[i];
        alpha_bar[i] += cb * blk.y[i] * cross(si, q);
        kernel_pair_backward(kernel, model.support_x.row(si), query_x.row(q),
                             cb * alpha[i] * blk.y[i], cross(si, q),
                             grads.support_x.row(si), grads.query_x.row(q));
      }
    }

    // b = (1/s) y^T alpha
    for (std::size_t i = 0; i < na; ++i)
      alpha_bar[i] += inv_s * blk.y[i] * bias_bar;

    // alpha = G^{-1} 1: Gbar = -u alpha^T with u = G^{-1} alpha_bar,
    // then G_ij = y_i y_j (K_ij + 1/s) + delta/gamma pushes into the kernel.
    const Vector u = model.factors[lc].solve(alpha_bar);
    for (std::size_t i = 0; i < na; ++i) {
      const int si = blk.active[i];
      for (std::size_t j = 0; j < na; ++j) {
        const int sj = blk.active[j];
        const double gbar = -u[i] * alpha[j];
        const double kbar = gbar * blk.y[i] * blk.y[j];
        if (kbar == 0.0) continue;
        kernel_pair_backward(kernel, model.support_x.row(si),
                             model.support_x.row(sj), kbar, gram(si, sj),
                             grads.support_x.row(si), grads.support_x.row(sj));
      }
    }
  }
  return grads;
}

}  // namespace fewshot
