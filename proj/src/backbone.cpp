#include "fewshot/backbone.hpp"

#include <cmath>

#include "fewshot/errors.hpp"

namespace fewshot {

BackboneParams backbone_init(std::size_t d_in,
                             const std::vector<std::size_t>& widths,
                             Rng& rng) {
  BackboneParams p;
  std::size_t prev = d_in;
  for (std::size_t w : widths) {
    if (w == 0) throw InvalidArgument("zero-width backbone layer");
    const double bound = std::sqrt(6.0 / static_cast<double>(prev + w));
    Matrix weight(prev, w);
    for (double& v : weight.data()) v = (2.0 * rng.next_double() - 1.0) * bound;
    p.weights.push_back(std::move(weight));
    p.biases.emplace_back(w, 0.0);
    prev = w;
  }
  return p;
}

std::size_t backbone_output_dim(const BackboneParams& params,
                                std::size_t d_in) {
  return params.weights.empty() ? d_in : params.weights.back().cols();
}

Matrix backbone_forward(const BackboneParams& params, const Matrix& x,
                        BackboneCache* cache) {
  if (params.weights.size() != params.biases.size())
    throw ShapeMismatch("backbone weight/bias count mismatch");
  if (cache != nullptr) {
    cache->valid = true;
    cache->input = x;
    cache->post_act.clear();
  }
  Matrix a = x;
  const std::size_t layers = params.weights.size();
  for (std::size_t i = 0; i < layers; ++i) {
    if (a.cols() != params.weights[i].rows())
      throw ShapeMismatch("backbone layer input dim mismatch");
    Matrix z = multiply(a, params.weights[i]);
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t c = 0; c < z.cols(); ++c)
        z(r, c) += params.biases[i][c];
    if (i + 1 < layers)
      for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
    if (cache != nullptr) cache->post_act.push_back(z);
    a = std::move(z);
  }
  return a;
}

BackboneGrads backbone_vjp(const BackboneParams& params,
                           const BackboneCache& cache,
                           const Matrix& upstream) {
  if (!cache.valid || cache.post_act.size() != params.weights.size())
    throw StaleCache("backbone cache does not match params");
  BackboneGrads grads;
  grads.weights.resize(params.weights.size());
  grads.biases.resize(params.biases.size());

  Matrix d = upstream;
  for (std::size_t i = params.weights.size(); i-- > 0;) {
    const Matrix& a_in = i == 0 ? cache.input : cache.post_act[i - 1];
    grads.weights[i] = multiply_atb(a_in, d);
    Vector& db = grads.biases[i];
    db.assign(params.biases[i].size(), 0.0);
    for (std::size_t r = 0; r < d.rows(); ++r)
      for (std::size_t c = 0; c < d.cols(); ++c) db[c] += d(r, c);
    d = multiply_abt(d, params.weights[i]);
    if (i > 0)
      for (std::size_t e = 0; e < d.size(); ++e)
        if (a_in.data()[e] <= 0.0) d.data()[e] = 0.0;
  }
  grads.input = std::move(d);
  return grads;
}

void accumulate(BackboneGrads& into, const BackboneGrads& from) {
  if (into.weights.empty() && into.biases.empty() && into.input.size() == 0) {
    into = from;
    return;
  }
  for (std::size_t i = 0; i < into.weights.size(); ++i)
    for (std::size_t e = 0; e < into.weights[i].size(); ++e)
      into.weights[i].data()[e] += from.weights[i].data()[e];
  for (std::size_t i = 0; i < into.biases.size(); ++i)
    for (std::size_t e = 0; e < into.biases[i].size(); ++e)
      into.biases[i][e] += from.biases[i][e];
}

}  // namespace fewshot
