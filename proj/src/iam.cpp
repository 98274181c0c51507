#include "fewshot/iam.hpp"

#include <cmath>
#include <cstddef>

#include "fewshot/errors.hpp"

namespace fewshot {

namespace {

constexpr double kLnEps = 1e-5;

std::size_t hidden_width(std::size_t d_in, int r) {
  if (r < 1) throw InvalidArgument("reduction ratio must be >= 1");
  const std::size_t h = d_in / static_cast<std::size_t>(r);
  return h == 0 ? 1 : h;
}

Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (double& v : w.data()) v = (2.0 * rng.next_double() - 1.0) * bound;
  return w;
}

BottleneckMap init_map(std::size_t d_in, std::size_t d_out, int r, Rng& rng,
                       bool zero_out_layer) {
  const std::size_t h = hidden_width(d_in, r);
  BottleneckMap map;
  map.w1 = glorot_uniform(d_in, h, rng);
  map.w2 = zero_out_layer ? Matrix(h, d_out) : glorot_uniform(h, d_out, rng);
  return map;
}

struct BottleneckStages {
  Matrix hidden;  // post-relu
  Matrix out;
};

BottleneckStages map_forward(const BottleneckMap& map, const Matrix& x) {
  BottleneckStages s;
  s.hidden = multiply(x, map.w1);
  for (double& v : s.hidden.data()) v = v > 0.0 ? v : 0.0;
  s.out = multiply(s.hidden, map.w2);
  return s;
}

/// Reverse of map_forward; accumulates weight grads, returns d input.
Matrix map_backward(const BottleneckMap& map, const Matrix& x,
                    const Matrix& hidden, const Matrix& upstream,
                    BottleneckMap& grads) {
  grads.w2 = multiply_atb(hidden, upstream);
  Matrix dhidden = multiply_abt(upstream, map.w2);
  for (std::size_t i = 0; i < dhidden.size(); ++i)
    if (hidden.data()[i] <= 0.0) dhidden.data()[i] = 0.0;
  grads.w1 = multiply_atb(x, dhidden);
  return multiply_abt(dhidden, map.w1);
}

Matrix softmax_backward(const Matrix& p, const Matrix& dp) {
  Matrix dz(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const double inner = dot(dp.row(i), p.row(i));
    for (std::size_t j = 0; j < p.cols(); ++j)
      dz(i, j) = p(i, j) * (dp(i, j) - inner);
  }
  return dz;
}

IamParams zeros_like(const IamParams& p) {
  IamParams z;
  z.map_q = {Matrix(p.map_q.w1.rows(), p.map_q.w1.cols()),
             Matrix(p.map_q.w2.rows(), p.map_q.w2.cols())};
  z.map_k = {Matrix(p.map_k.w1.rows(), p.map_k.w1.cols()),
             Matrix(p.map_k.w2.rows(), p.map_k.w2.cols())};
  z.map_v = {Matrix(p.map_v.w1.rows(), p.map_v.w1.cols()),
             Matrix(p.map_v.w2.rows(), p.map_v.w2.cols())};
  z.map_h = {Matrix(p.map_h.w1.rows(), p.map_h.w1.cols()),
             Matrix(p.map_h.w2.rows(), p.map_h.w2.cols())};
  z.ln_gain.assign(p.ln_gain.size(), 0.0);
  z.ln_bias.assign(p.ln_bias.size(), 0.0);
  z.dropout_rate = 0.0;
  z.d = p.d;
  z.d_k = p.d_k;
  z.d_v = p.d_v;
  z.r = p.r;
  return z;
}

}  // namespace

Matrix replace_rows_with_class_means(const Matrix& rows,
                                     const std::vector<int>& labels) {
  if (labels.size() != rows.rows())
    throw ShapeMismatch("label count does not match row count");
  Matrix out(rows.rows(), rows.cols());
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    int count = 0;
    for (std::size_t j = 0; j < rows.rows(); ++j) {
      if (labels[j] != labels[i]) continue;
      ++count;
      for (std::size_t c = 0; c < rows.cols(); ++c) out(i, c) += rows(j, c);
    }
    for (std::size_t c = 0; c < rows.cols(); ++c) out(i, c) /= count;
  }
  return out;
}

IamParams iam_init_params(std::size_t d, std::size_t d_k, std::size_t d_v,
                          int r, Rng& rng) {
  if (d < 1 || d_k < 1 || d_v < 1)
    throw InvalidArgument("attention widths must be >= 1");
  IamParams p;
  p.d = d;
  p.d_k = d_k;
  p.d_v = d_v;
  p.r = r;
  p.map_q = init_map(d, d_k, r, rng, false);
  p.map_k = init_map(d, d_k, r, rng, false);
  p.map_v = init_map(d, d_v, r, rng, false);
  p.map_h = init_map(d_v, d, r, rng, true);
  p.ln_gain.assign(d, 1.0);
  p.ln_bias.assign(d, 0.0);
  return p;
}

Matrix iam_forward(const IamParams& params, const Matrix& support_x,
                   const std::vector<int>& support_y, const Matrix& query_x,
                   IamMode mode, Rng& rng, IamCache* cache) {
  if (support_x.cols() != params.d || query_x.cols() != params.d)
    throw ShapeMismatch("feature dim does not match params.d");
  if (support_y.size() != support_x.rows())
    throw ShapeMismatch("support label count mismatch");
  if (query_x.rows() == 0)
    throw ShapeMismatch("attention needs at least one query row");

  const BottleneckStages q = map_forward(params.map_q, support_x);
  const BottleneckStages k = map_forward(params.map_k, query_x);
  const BottleneckStages v = map_forward(params.map_v, query_x);

  const double scale = 1.0 / std::sqrt(static_cast<double>(params.d_k));
  Matrix logits = multiply_abt(q.out, k.out);
  for (double& e : logits.data()) e *= scale;
  const Matrix attn = softmax_rows(logits);
  const Matrix a_proto =
      replace_rows_with_class_means(multiply(attn, v.out), support_y);
  const BottleneckStages h = map_forward(params.map_h, a_proto);

  Matrix mask(h.out.rows(), h.out.cols());
  if (mode == IamMode::Train && params.dropout_rate > 0.0) {
    const double keep = 1.0 - params.dropout_rate;
    for (double& e : mask.data())
      e = rng.next_double() >= params.dropout_rate ? 1.0 / keep : 0.0;
  } else {
    for (double& e : mask.data()) e = 1.0;
  }

  Matrix pre_ln = support_x;
  for (std::size_t i = 0; i < pre_ln.size(); ++i)
    pre_ln.data()[i] += h.out.data()[i] * mask.data()[i];
  Matrix out = layer_norm_rows(pre_ln, params.ln_gain, params.ln_bias, kLnEps);

  if (cache != nullptr) {
    cache->valid = true;
    cache->mode = mode;
    cache->support_x = support_x;
    cache->support_y = support_y;
    cache->query_x = query_x;
    cache->q_hidden = q.hidden;
    cache->q_out = q.out;
    cache->k_hidden = k.hidden;
    cache->k_out = k.out;
    cache->v_hidden = v.hidden;
    cache->v_out = v.out;
    cache->attn = attn;
    cache->a_proto = a_proto;
    cache->h_hidden = h.hidden;
    cache->h_out = h.out;
    cache->dropout_mask = mask;
    cache->pre_ln = pre_ln;
  }
  return out;
}

IamGrads iam_vjp(const IamParams& params, const IamCache& cache,
                 const Matrix& upstream) {
  if (!cache.valid || cache.mode != IamMode::Train)
    throw StaleCache("iam_vjp needs a cache from a train-mode forward");
  if (cache.support_x.cols() != params.d ||
      cache.q_out.cols() != params.d_k || cache.k_out.cols() != params.d_k ||
      cache.v_out.cols() != params.d_v ||
      cache.q_hidden.cols() != params.map_q.w1.cols() ||
      cache.k_hidden.cols() != params.map_k.w1.cols() ||
      cache.v_hidden.cols() != params.map_v.w1.cols() ||
      cache.h_hidden.cols() != params.map_h.w2.rows())
    throw StaleCache("cache does not match these params");
  if (upstream.rows() != cache.support_x.rows() ||
      upstream.cols() != cache.support_x.cols())
    throw ShapeMismatch("upstream shape differs from adjusted support");

  IamGrads grads;
  grads.params = zeros_like(params);
  grads.query_x = Matrix(cache.query_x.rows(), cache.query_x.cols());

  // layer norm: y = gain * xhat + bias, xhat = (x - mu) / sqrt(var + eps)
  const Matrix& x = cache.pre_ln;
  const std::size_t d = x.cols();
  Matrix dpre(x.rows(), d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLnEps);

    double g_mean = 0.0, gx_mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (x(i, j) - mu) * inv;
      const double g = upstream(i, j) * params.ln_gain[j];
      grads.params.ln_gain[j] += upstream(i, j) * xhat;
      grads.params.ln_bias[j] += upstream(i, j);
      g_mean += g;
      gx_mean += g * xhat;
    }
    g_mean /= static_cast<double>(d);
    gx_mean /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (x(i, j) - mu) * inv;
      const double g = upstream(i, j) * params.ln_gain[j];
      dpre(i, j) = inv * (g - g_mean - xhat * gx_mean);
    }
  }

  // residual: pre_ln = S + mask * h_out
  grads.support_x = dpre;
  Matrix dh_out = dpre;
  for (std::size_t i = 0; i < dh_out.size(); ++i)
    dh_out.data()[i] *= cache.dropout_mask.data()[i];

  Matrix da_proto = map_backward(params.map_h, cache.a_proto, cache.h_hidden,
                                 dh_out, grads.params.map_h);
  // prototype averaging is symmetric, so its adjoint is itself
  const Matrix da_att =
      replace_rows_with_class_means(da_proto, cache.support_y);

  Matrix dattn = multiply_abt(da_att, cache.v_out);
  const Matrix dv_out = multiply_atb(cache.attn, da_att);
  Matrix dlogits = softmax_backward(cache.attn, dattn);
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.d_k));
  for (double& e : dlogits.data()) e *= scale;
  const Matrix dq_out = multiply(dlogits, cache.k_out);
  const Matrix dk_out = multiply_atb(dlogits, cache.q_out);

  Matrix ds_q = map_backward(params.map_q, cache.support_x, cache.q_hidden,
                             dq_out, grads.params.map_q);
  for (std::size_t i = 0; i < ds_q.size(); ++i)
    grads.support_x.data()[i] += ds_q.data()[i];

  Matrix dq_k = map_backward(params.map_k, cache.query_x, cache.k_hidden,
                             dk_out, grads.params.map_k);
  Matrix dq_v = map_backward(params.map_v, cache.query_x, cache.v_hidden,
                             dv_out, grads.params.map_v);
  for (std::size_t i = 0; i < grads.query_x.size(); ++i)
    grads.query_x.data()[i] = dq_k.data()[i] + dq_v.data()[i];

  return grads;
}

}  // namespace fewshot
