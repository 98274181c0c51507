#include "fewshot/meta.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace fewshot {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void add_in(Matrix& a, const Matrix& b) {
  for (std::size_t e = 0; e < a.size(); ++e) a.data()[e] += b.data()[e];
}

void add_in(Vector& a, const Vector& b) {
  for (std::size_t e = 0; e < a.size(); ++e) a[e] += b[e];
}

void add_in(BottleneckMap& a, const BottleneckMap& b) {
  add_in(a.w1, b.w1);
  add_in(a.w2, b.w2);
}

void add_in(IamParams& a, const IamParams& b) {
  add_in(a.map_q, b.map_q);
  add_in(a.map_k, b.map_k);
  add_in(a.map_v, b.map_v);
  add_in(a.map_h, b.map_h);
  add_in(a.ln_gain, b.ln_gain);
  add_in(a.ln_bias, b.ln_bias);
}

template <typename Params, typename Span>
std::vector<Span> views_of(Params& p) {
  std::vector<Span> out;
  auto mat = [&out](auto& m) { out.push_back(Span(m.data().data(), m.size())); };
  auto vec = [&out](auto& v) { out.push_back(Span(v.data(), v.size())); };
  for (std::size_t i = 0; i < p.backbone.weights.size(); ++i) {
    mat(p.backbone.weights[i]);
    vec(p.backbone.biases[i]);
  }
  if (p.use_iam) {
    mat(p.iam.map_q.w1);
    mat(p.iam.map_q.w2);
    mat(p.iam.map_k.w1);
    mat(p.iam.map_k.w2);
    mat(p.iam.map_v.w1);
    mat(p.iam.map_v.w2);
    mat(p.iam.map_h.w1);
    mat(p.iam.map_h.w2);
    vec(p.iam.ln_gain);
    vec(p.iam.ln_bias);
  }
  return out;
}

double episode_accuracy(const std::vector<int>& predicted,
                        const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || truth.empty())
    throw ShapeMismatch("prediction/label count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (predicted[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace

Episode draw_episode(const EpisodeSource& src, int way, int shot,
                     int query_per_class, Rng& rng) {
  if (src.synth != nullptr)
    return sample_synthetic_episode(*src.synth, way, shot, query_per_class,
                                    rng);
  if (src.bank != nullptr)
    return draw_episode_from_bank(*src.bank, src.split, way, shot,
                                  query_per_class, rng);
  throw InvalidArgument("episode source has neither synth spec nor bank");
}

std::vector<std::span<double>> tensor_views(TrainableParams& p) {
  return views_of<TrainableParams, std::span<double>>(p);
}

std::vector<std::span<const double>> tensor_views(const TrainableParams& p) {
  return views_of<const TrainableParams, std::span<const double>>(p);
}

MetaLossResult meta_loss(const Matrix& class_scores,
                         const std::vector<int>& labels) {
  const std::size_t m = class_scores.rows();
  const std::size_t c = class_scores.cols();
  if (m == 0) throw ShapeMismatch("loss needs at least one query");
  if (labels.size() != m)
    throw ShapeMismatch("label count does not match score rows");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= c)
      throw LabelOutOfRange("loss label " + std::to_string(l));

  MetaLossResult out;
  out.dscores = Matrix(m, c);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = class_scores(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, class_scores(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      denom += std::exp(class_scores(i, j) - mx);
    out.loss +=
        (std::log(denom) + mx - class_scores(i, labels[i])) * inv_m;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(class_scores(i, j) - mx) / denom;
      out.dscores(i, j) =
          (p - (static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0)) * inv_m;
    }
  }
  return out;
}

void sgd_step(const std::vector<std::span<double>>& params,
              const std::vector<std::span<const double>>& grads,
              SgdState& state, const SgdConfig& cfg) {
  if (params.size() != grads.size())
    throw ShapeMismatch("param/grad tensor count mismatch");
  if (state.velocity.empty()) state.velocity.resize(params.size());
  if (state.velocity.size() != params.size())
    throw ShapeMismatch("optimizer state does not match tensor count");
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto p = params[t];
    auto g = grads[t];
    Vector& v = state.velocity[t];
    if (v.empty()) v.assign(p.size(), 0.0);
    if (g.size() != p.size() || v.size() != p.size())
      throw ShapeMismatch("tensor " + std::to_string(t) + " shape drifted");
    for (std::size_t e = 0; e < p.size(); ++e) {
      const double gw = g[e] + cfg.weight_decay * p[e];
      v[e] = cfg.momentum * v[e] + gw;
      const double step = cfg.nesterov ? gw + cfg.momentum * v[e] : v[e];
      p[e] -= cfg.lr * step;
    }
  }
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (cfg.lr_milestones.size() != cfg.lr_factors.size())
    throw InvalidArgument("lr milestones/factors length mismatch");
  double lr = cfg.lr_init;
  for (std::size_t i = 0; i < cfg.lr_milestones.size(); ++i)
    if (epoch >= cfg.lr_milestones[i]) lr *= cfg.lr_factors[i];
  return lr;
}

void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads < 1) throw InvalidArgument("threads must be >= 1");
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::pair<double, double> mean_ci95(const std::vector<double>& xs) {
  if (xs.empty()) throw InvalidArgument("empty sample");
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= n;
  return {mean, 1.96 * std::sqrt(var) / std::sqrt(n)};
}

namespace {

/// Forward + backward for one training episode; returns the loss and adds
/// this episode's parameter gradients into `grads`.
double episode_backward(const TrainConfig& cfg, const TrainableParams& params,
                        const CodingMatrix& coding, const Episode& e,
                        Rng& dropout_rng, TrainableParams& grads) {
  const bool has_backbone = !params.backbone.weights.empty();
  BackboneCache cache_s, cache_q;
  Matrix feats_s = has_backbone
                       ? backbone_forward(params.backbone, e.support_x, &cache_s)
                       : e.support_x;
  Matrix feats_q = has_backbone
                       ? backbone_forward(params.backbone, e.query_x, &cache_q)
                       : e.query_x;

  IamCache icache;
  Matrix adjusted = feats_s;
  if (params.use_iam)
    adjusted = iam_forward(params.iam, feats_s, e.support_y, feats_q,
                           IamMode::Train, dropout_rng, &icache);

  const LssvmModel model = fit_lssvm(adjusted, e.support_y, coding, cfg.lssvm);
  const DecodeResult dec = decode_scores(
      coding, decision_values(model, feats_q), DecodeMode::LinearApprox);
  const MetaLossResult ml = meta_loss(dec.class_scores, e.query_y);

  const LssvmGrads lg = lssvm_vjp(model, feats_q, ml.dscores);
  Matrix d_feats_s;
  Matrix d_feats_q = lg.query_x;
  if (params.use_iam) {
    const IamGrads ig = iam_vjp(params.iam, icache, lg.support_x);
    add_in(grads.iam, ig.params);
    d_feats_s = ig.support_x;
    add_in(d_feats_q, ig.query_x);
  } else {
    d_feats_s = lg.support_x;
  }

  if (has_backbone) {
    const BackboneGrads gs = backbone_vjp(params.backbone, cache_s, d_feats_s);
    const BackboneGrads gq = backbone_vjp(params.backbone, cache_q, d_feats_q);
    for (std::size_t i = 0; i < grads.backbone.weights.size(); ++i) {
      add_in(grads.backbone.weights[i], gs.weights[i]);
      add_in(grads.backbone.weights[i], gq.weights[i]);
      add_in(grads.backbone.biases[i], gs.biases[i]);
      add_in(grads.backbone.biases[i], gq.biases[i]);
    }
  }
  return ml.loss;
}

struct EpisodeOutcome {
  double acc = 0.0;
  double fit_us = 0.0;
};

EpisodeOutcome eval_episode(const Episode& e, const TrainableParams* params,
                            const EvalOptions& opt, const CodingMatrix& coding,
                            Rng& rng) {
  const bool has_backbone =
      params != nullptr && !params->backbone.weights.empty();
  Matrix feats_s =
      has_backbone ? backbone_forward(params->backbone, e.support_x)
                   : e.support_x;
  Matrix feats_q = has_backbone
                       ? backbone_forward(params->backbone, e.query_x)
                       : e.query_x;
  if (opt.use_iam) {
    if (params == nullptr || !params->use_iam)
      throw InvalidArgument("iam evaluation needs iam params");
    feats_s = iam_forward(params->iam, feats_s, e.support_y, feats_q,
                          IamMode::Eval, rng);
  }
  const auto t0 = Clock::now();
  const PsmResult r = psm_iterate(opt.learner, feats_s, e.support_y, e.way,
                                  feats_q, opt.psm, &coding);
  const double us = seconds_since(t0) * 1e6;
  return {episode_accuracy(r.labels, e.query_y), us};
}

CodingMatrix coding_for(CodingScheme scheme, int way, std::uint64_t seed) {
  Rng rng = Rng(seed).split(0xC0D1);
  return build_coding_matrix(scheme, way, &rng);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const EpisodeSource& train_src,
                  const EpisodeSource& val_src, TrainableParams init) {
  if (cfg.epochs < 1 || cfg.batches_per_epoch < 1 ||
      cfg.episodes_per_batch < 1)
    throw InvalidArgument("training counts must be >= 1");

  TrainableParams params = std::move(init);
  const CodingMatrix coding = coding_for(cfg.coding, cfg.way, cfg.seed);
  Rng episode_rng = Rng(cfg.seed).split(1);
  Rng dropout_rng = Rng(cfg.seed).split(2);
  const std::uint64_t val_seed = Rng(cfg.seed).split(3).key();

  SgdState sgd;
  TrainResult out;
  out.best = params;
  out.best_val_acc = -1.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    for (int batch = 1; batch <= cfg.batches_per_epoch; ++batch) {
      TrainableParams grads = params;
      for (auto view : tensor_views(grads))
        std::fill(view.begin(), view.end(), 0.0);

      double batch_loss = 0.0;
      for (int ep = 0; ep < cfg.episodes_per_batch; ++ep) {
        const Episode e = draw_episode(train_src, cfg.way, cfg.train_shot,
                                       cfg.query_train, episode_rng);
        batch_loss +=
            episode_backward(cfg, params, coding, e, dropout_rng, grads);
      }
      batch_loss /= cfg.episodes_per_batch;
      if (!std::isfinite(batch_loss))
        throw NonFiniteLoss("loss diverged at epoch " + std::to_string(epoch) +
                            " batch " + std::to_string(batch));
      for (auto view : tensor_views(grads))
        for (double& v : view) v /= cfg.episodes_per_batch;

      sgd_step(tensor_views(params), tensor_views(std::as_const(grads)), sgd,
               {lr, cfg.momentum, cfg.nesterov, cfg.weight_decay});
      out.log.push_back({epoch, batch, batch_loss, lr});
    }

    EvalOptions vopt;
    vopt.learner.kind = LearnerKind::Lssvm;
    vopt.learner.lssvm = cfg.lssvm;
    vopt.coding = cfg.coding;
    vopt.use_iam = cfg.use_iam;
    vopt.psm.iterations = 0;
    vopt.way = cfg.way;
    vopt.shot = cfg.val_shot;
    vopt.query = cfg.query_test;
    vopt.seed = val_seed;
    vopt.threads = cfg.threads;
    const EvalReport vr = evaluate(val_src, &params, vopt,
                                   static_cast<std::size_t>(cfg.val_episodes));
    out.val_acc.push_back(vr.mean_acc);
    if (vr.mean_acc > out.best_val_acc) {
      out.best_val_acc = vr.mean_acc;
      out.best = params;
    }
  }
  return out;
}

EvalReport evaluate(const EpisodeSource& src, const TrainableParams* params,
                    const EvalOptions& opt, std::size_t episodes) {
  if (episodes < 1) throw InvalidArgument("evaluate needs episodes >= 1");
  const CodingMatrix coding = coding_for(opt.coding, opt.way, opt.seed);

  EvalReport rep;
  rep.episodes = episodes;
  rep.per_episode_acc.assign(episodes, 0.0);
  std::vector<double> fit_us(episodes, 0.0);

  const Rng root(opt.seed);
  const auto t0 = Clock::now();
  parallel_for(episodes, opt.threads, [&](std::size_t i) {
    Rng rng = root.split(i);
    const Episode e = draw_episode(src, opt.way, opt.shot, opt.query, rng);
    const EpisodeOutcome r = eval_episode(e, params, opt, coding, rng);
    rep.per_episode_acc[i] = r.acc;
    fit_us[i] = r.fit_us;
  });
  rep.wall_clock_total_s = seconds_since(t0);

  std::tie(rep.mean_acc, rep.ci95) = mean_ci95(rep.per_episode_acc);
  rep.fit_us_min = std::numeric_limits<double>::infinity();
  for (double us : fit_us) {
    rep.fit_us_mean += us / static_cast<double>(episodes);
    rep.fit_us_min = std::min(rep.fit_us_min, us);
    rep.fit_us_max = std::max(rep.fit_us_max, us);
  }
  return rep;
}

std::vector<BenchRow> benchmark_timing(
    const std::vector<std::pair<std::string, BaseLearnerSpec>>& specs,
    const EpisodeSource& src, int way, int shot, int query,
    std::size_t episodes, std::uint64_t seed, CodingScheme coding_scheme) {
  if (episodes < 100) throw InvalidArgument("benchmark needs episodes >= 100");
  const CodingMatrix coding = coding_for(coding_scheme, way, seed);
  const Rng root(seed);

  std::vector<BenchRow> rows;
  for (const auto& [name, spec] : specs) {
    std::vector<double> accs(episodes, 0.0);
    double total_s = 0.0;
    for (std::size_t i = 0; i < episodes; ++i) {
      Rng rng = root.split(i);
      const Episode e = draw_episode(src, way, shot, query, rng);
      const auto t0 = Clock::now();
      const LearnerModel model =
          fit_learner(spec, e.support_x, e.support_y, e.way, &coding);
      const std::vector<int> labels =
          predict_labels(learner_score(spec, model, e.query_x));
      total_s += seconds_since(t0);
      accs[i] = episode_accuracy(labels, e.query_y);
    }
    BenchRow row;
    row.learner = name;
    std::tie(row.mean_acc, row.ci95) = mean_ci95(accs);
    row.total_s = total_s;
    row.per_episode_us = total_s * 1e6 / static_cast<double>(episodes);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fewshot
