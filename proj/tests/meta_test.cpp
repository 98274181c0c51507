#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <utility>
#include <vector>

#include "doctest.h"
#include "fewshot/meta.hpp"
#include "oracles.hpp"

using namespace fewshot;

namespace {

TrainableParams toy_trainable(std::size_t d_in,
                              const std::vector<std::size_t>& widths,
                              bool use_iam, std::uint64_t seed) {
  TrainableParams p;
  Rng brng(seed);
  p.backbone = backbone_init(d_in, widths, brng);
  if (use_iam) {
    const std::size_t d = backbone_output_dim(p.backbone, d_in);
    Rng irng(seed + 1);
    p.iam = iam_init_params(d, d, d, 2, irng);
    p.iam.dropout_rate = 0.0;
    Rng wiggle(seed + 2);
    for (std::size_t i = 0; i < p.iam.map_h.w2.rows(); ++i)
      for (std::size_t j = 0; j < p.iam.map_h.w2.cols(); ++j)
        p.iam.map_h.w2(i, j) = 0.3 * wiggle.next_gaussian();
    p.use_iam = true;
  }
  return p;
}

bool same_tensors(const TrainableParams& a, const TrainableParams& b) {
  const auto va = tensor_views(a);
  const auto vb = tensor_views(b);
  if (va.size() != vb.size()) return false;
  for (std::size_t t = 0; t < va.size(); ++t) {
    if (va[t].size() != vb[t].size()) return false;
    for (std::size_t i = 0; i < va[t].size(); ++i)
      if (va[t][i] != vb[t][i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("uniform scores cost exactly log way") {
  Matrix scores(6, 4);
  for (double& v : scores.data()) v = 0.7;
  const std::vector<int> labels{0, 1, 2, 3, 0, 1};
  const MetaLossResult r = meta_loss(scores, labels);
  CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // gradient: (softmax - onehot) / m with uniform softmax
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double onehot = labels[i] == static_cast<int>(j) ? 1.0 : 0.0;
      CHECK(r.dscores(i, j) ==
            doctest::Approx((0.25 - onehot) / 6.0).epsilon(1e-12));
    }
}

TEST_CASE("loss gradient matches finite differences") {
  Rng rng(1);
  Matrix scores = oracles::random_matrix(5, 3, rng, 2.0);
  const std::vector<int> labels{2, 0, 1, 1, 0};
  const MetaLossResult r = meta_loss(scores, labels);
  for (std::size_t i = 0; i < scores.rows(); ++i)
    for (std::size_t j = 0; j < scores.cols(); ++j) {
      const double fd = oracles::central_diff(
          [&] { return meta_loss(scores, labels).loss; }, &scores(i, j));
      CHECK(oracles::rel_err(r.dscores(i, j), fd) <= 1e-5);
    }
}

TEST_CASE("loss rejects bad labels and empty batches") {
  Matrix scores(2, 3, {1, 0, 0, 0, 1, 0});
  CHECK_THROWS_AS(meta_loss(scores, {0, 3}), LabelOutOfRange);
  CHECK_THROWS_AS(meta_loss(scores, {0, -1}), LabelOutOfRange);
  CHECK_THROWS_AS(meta_loss(scores, {0}), ShapeMismatch);
  CHECK_THROWS_AS(meta_loss(Matrix(0, 3), {}), ShapeMismatch);
}

TEST_CASE("backbone init shapes, zero biases, determinism") {
  Rng a(3), b(3);
  const BackboneParams p = backbone_init(4, {8, 3}, a);
  const BackboneParams q = backbone_init(4, {8, 3}, b);
  REQUIRE(p.weights.size() == 2);
  CHECK(p.weights[0].rows() == 4);
  CHECK(p.weights[0].cols() == 8);
  CHECK(p.weights[1].rows() == 8);
  CHECK(p.weights[1].cols() == 3);
  CHECK(p.biases[0].size() == 8);
  CHECK(p.biases[1].size() == 3);
  for (double v : p.biases[0]) CHECK(v == 0.0);
  CHECK(p.weights[0] == q.weights[0]);
  CHECK(p.weights[1] == q.weights[1]);
  CHECK(backbone_output_dim(p, 4) == 3);

  Rng c(4);
  CHECK_THROWS_AS(backbone_init(4, {0}, c), InvalidArgument);
}

TEST_CASE("empty backbone is the identity map") {
  BackboneParams p;
  Rng rng(5);
  const Matrix x = oracles::random_matrix(3, 4, rng);
  CHECK(backbone_forward(p, x) == x);
  CHECK(backbone_output_dim(p, 4) == 4);
}

TEST_CASE("relu sits between layers but never after the last") {
  BackboneParams one;
  one.weights.push_back(Matrix(2, 1, {1, -1}));
  one.biases.push_back(Vector{0.5});
  const Matrix x(2, 2, {3, 1, -1, 4});
  const Matrix out1 = backbone_forward(one, x);
  CHECK(out1(0, 0) == doctest::Approx(2.5));
  CHECK(out1(1, 0) == doctest::Approx(-4.5));  // stays negative

  BackboneParams two = one;
  two.biases[0] = Vector{-5.0};  // drives both rows negative pre-relu
  two.weights.push_back(Matrix(1, 1, {3.0}));
  two.biases.push_back(Vector{0.25});
  const Matrix out2 = backbone_forward(two, x);
  CHECK(out2(0, 0) == doctest::Approx(0.25));  // relu clipped the hidden unit
  CHECK(out2(1, 0) == doctest::Approx(0.25));
}

TEST_CASE("backbone gradients match finite differences") {
  Rng rng(6);
  BackboneParams p = backbone_init(3, {4, 2}, rng);
  // nonzero biases so their gradient has something to say
  for (auto& b : p.biases)
    for (double& v : b) v = 0.05 * rng.next_gaussian();
  Matrix x = oracles::random_matrix(5, 3, rng);
  const Matrix w = oracles::random_matrix(5, 2, rng);

  auto loss = [&] {
    const Matrix out = backbone_forward(p, x);
    double s = 0.0;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) s += w(i, j) * out(i, j);
    return s;
  };

  BackboneCache cache;
  (void)backbone_forward(p, x, &cache);
  const BackboneGrads g = backbone_vjp(p, cache, w);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    for (std::size_t i = 0; i < p.weights[l].rows(); ++i)
      for (std::size_t j = 0; j < p.weights[l].cols(); ++j) {
        const double fd = oracles::central_diff(loss, &p.weights[l](i, j));
        CHECK(oracles::rel_err(g.weights[l](i, j), fd) <= 1e-4);
      }
    for (std::size_t j = 0; j < p.biases[l].size(); ++j) {
      const double fd = oracles::central_diff(loss, &p.biases[l][j]);
      CHECK(oracles::rel_err(g.biases[l][j], fd) <= 1e-4);
    }
  }
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double fd = oracles::central_diff(loss, &x(i, j));
      CHECK(oracles::rel_err(g.input(i, j), fd) <= 1e-4);
    }
}

TEST_CASE("backbone backward needs a matching cache") {
  Rng rng(7);
  const BackboneParams p = backbone_init(3, {2}, rng);
  BackboneCache cache;
  CHECK_THROWS_AS(backbone_vjp(p, cache, Matrix(2, 2)), StaleCache);

  const Matrix x = oracles::random_matrix(2, 3, rng);
  (void)backbone_forward(p, x, &cache);
  Rng rng2(8);
  const BackboneParams deeper = backbone_init(3, {2, 2}, rng2);
  CHECK_THROWS_AS(backbone_vjp(deeper, cache, Matrix(2, 2)), StaleCache);
}

TEST_CASE("grad accumulation adds elementwise and adopts empties") {
  Rng rng(9);
  const BackboneParams p = backbone_init(2, {3}, rng);
  const Matrix x = oracles::random_matrix(4, 2, rng);
  const Matrix w = oracles::random_matrix(4, 3, rng);
  BackboneCache cache;
  (void)backbone_forward(p, x, &cache);
  const BackboneGrads g = backbone_vjp(p, cache, w);

  BackboneGrads sum;
  accumulate(sum, g);
  accumulate(sum, g);
  CHECK(max_abs_diff(sum.weights[0], g.weights[0]) > 0.0);
  for (std::size_t e = 0; e < g.weights[0].size(); ++e)
    CHECK(sum.weights[0].data()[e] ==
          doctest::Approx(2.0 * g.weights[0].data()[e]));
  for (std::size_t j = 0; j < g.biases[0].size(); ++j)
    CHECK(sum.biases[0][j] == doctest::Approx(2.0 * g.biases[0][j]));
}

TEST_CASE("tensor views expose every trainable tensor in order") {
  TrainableParams p = toy_trainable(4, {3, 2}, false, 10);
  auto views = tensor_views(p);
  REQUIRE(views.size() == 4);
  CHECK(views[0].size() == 12);
  CHECK(views[1].size() == 3);
  CHECK(views[2].size() == 6);
  CHECK(views[3].size() == 2);
  CHECK(views[0].data() == &p.backbone.weights[0](0, 0));
  CHECK(views[1].data() == p.backbone.biases[0].data());

  views[0][0] = 42.0;
  CHECK(p.backbone.weights[0](0, 0) == 42.0);

  TrainableParams q = toy_trainable(4, {3, 2}, true, 11);
  auto qviews = tensor_views(q);
  REQUIRE(qviews.size() == 14);
  CHECK(qviews[4].data() == &q.iam.map_q.w1(0, 0));
  CHECK(qviews[12].size() == q.iam.ln_gain.size());
  CHECK(qviews[13].data() == q.iam.ln_bias.data());

  const TrainableParams& cq = q;
  auto cviews = tensor_views(cq);
  REQUIRE(cviews.size() == qviews.size());
  for (std::size_t t = 0; t < cviews.size(); ++t)
    CHECK(cviews[t].data() == qviews[t].data());
}

TEST_CASE("sgd plain step is p -= lr * (g + wd * p)") {
  Vector p{1.0, -2.0};
  const Vector g{0.5, 0.25};
  SgdState state;
  sgd_step({std::span<double>(p)}, {std::span<const double>(g)}, state,
           {0.1, 0.0, false, 0.2});
  CHECK(p[0] == doctest::Approx(0.93).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(-1.985).epsilon(1e-12));
}

TEST_CASE("nesterov first step applies (1 + mu) times the gradient") {
  Vector p{1.0};
  const Vector g{0.4};
  SgdState state;
  sgd_step({std::span<double>(p)}, {std::span<const double>(g)}, state,
           {0.1, 0.9, true, 0.0});
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 1.9 * 0.4).epsilon(1e-12));
}

TEST_CASE("heavy-ball velocity compounds across steps") {
  Vector p{0.0};
  const Vector g{1.0};
  SgdState state;
  const SgdConfig cfg{0.1, 0.5, false, 0.0};
  sgd_step({std::span<double>(p)}, {std::span<const double>(g)}, state, cfg);
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-12));
  sgd_step({std::span<double>(p)}, {std::span<const double>(g)}, state, cfg);
  CHECK(p[0] == doctest::Approx(-0.25).epsilon(1e-12));  // v grew to 1.5
}

TEST_CASE("zero gradients and zero decay leave parameters alone") {
  Vector p{3.0, -1.0, 7.5};
  const Vector g{0.0, 0.0, 0.0};
  SgdState state;
  for (int i = 0; i < 3; ++i)
    sgd_step({std::span<double>(p)}, {std::span<const double>(g)}, state,
             {0.5, 0.9, true, 0.0});
  CHECK(p[0] == 3.0);
  CHECK(p[1] == -1.0);
  CHECK(p[2] == 7.5);
}

TEST_CASE("momentum sgd drives a quadratic to its minimum") {
  Vector p{4.0, -3.0, 0.5};
  const Vector target{1.0, 2.0, -0.75};
  SgdState state;
  for (int step = 0; step < 300; ++step) {
    Vector g(3);
    for (int i = 0; i < 3; ++i) g[i] = p[i] - target[i];
    sgd_step({std::span<double>(p)}, {std::span<const double>(g)}, state,
             {0.05, 0.9, true, 0.0});
  }
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(p[i] - target[i]) <= 1e-8);
}

TEST_CASE("sgd rejects mismatched tensor lists") {
  Vector p{1.0};
  Vector p2{1.0, 2.0};
  const Vector g{0.5};
  SgdState state;
  CHECK_THROWS_AS(
      sgd_step({std::span<double>(p), std::span<double>(p2)},
               {std::span<const double>(g)}, state, {0.1, 0.9, true, 0.0}),
      ShapeMismatch);
  sgd_step({std::span<double>(p)}, {std::span<const double>(g)}, state,
           {0.1, 0.9, true, 0.0});
  // the state is now sized for one tensor of one element
  Vector g2{0.5, 0.5};
  CHECK_THROWS_AS(
      sgd_step({std::span<double>(p2)}, {std::span<const double>(g2)}, state,
               {0.1, 0.9, true, 0.0}),
      ShapeMismatch);
}

TEST_CASE("learning rate drops multiplicatively at each milestone") {
  TrainConfig cfg;
  cfg.lr_init = 0.1;
  CHECK(lr_schedule(1, cfg) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_schedule(19, cfg) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_schedule(20, cfg) == doctest::Approx(0.006).epsilon(1e-12));
  CHECK(lr_schedule(40, cfg) == doctest::Approx(0.0012).epsilon(1e-12));
  CHECK(lr_schedule(50, cfg) == doctest::Approx(0.00024).epsilon(1e-12));
  CHECK(lr_schedule(60, cfg) == doctest::Approx(0.00024).epsilon(1e-12));

  cfg.lr_milestones = {5};
  cfg.lr_factors = {};
  CHECK_THROWS_AS(lr_schedule(1, cfg), InvalidArgument);
}

TEST_CASE("episode sources validate and bank draws respect the split") {
  EpisodeSource empty;
  Rng rng(12);
  CHECK_THROWS_AS(draw_episode(empty, 2, 1, 1, rng), InvalidArgument);

  // constant per-class features make the source class readable off a draw
  FeatureBank bank;
  bank.dim = 2;
  for (int c = 0; c < 6; ++c) {
    bank.classes.push_back(c);
    bank.samples.push_back(std::vector<Vector>(4, Vector{double(c), double(c)}));
  }
  EpisodeSource src;
  src.bank = &bank;
  src.split = {1, 3};
  for (int rep = 0; rep < 20; ++rep) {
    const Episode e = draw_episode(src, 2, 1, 2, rng);
    validate_episode(e);
    for (std::size_t i = 0; i < e.support_x.rows(); ++i) {
      const double v = e.support_x(i, 0);
      CHECK((v == 1.0 || v == 3.0));
    }
    for (std::size_t i = 0; i < e.query_x.rows(); ++i) {
      const double v = e.query_x(i, 0);
      CHECK((v == 1.0 || v == 3.0));
    }
  }
}

TEST_CASE("full pipeline gradients survive the chain") {
  SynthSpec spec;
  spec.dim = 6;
  spec.within_class_std = 0.7;
  Rng erng(13);
  const Episode e = sample_synthetic_episode(spec, 3, 2, 4, erng);

  TrainableParams tp = toy_trainable(6, {5}, true, 14);
  const CodingMatrix coding = build_coding_matrix(CodingScheme::OneVsAll, 3);
  LssvmConfig lcfg;
  lcfg.gamma = 2.0;

  auto loss = [&] {
    Rng fwd(15);
    const Matrix fs = backbone_forward(tp.backbone, e.support_x);
    const Matrix fq = backbone_forward(tp.backbone, e.query_x);
    const Matrix adj =
        iam_forward(tp.iam, fs, e.support_y, fq, IamMode::Train, fwd);
    const LssvmModel model = fit_lssvm(adj, e.support_y, coding, lcfg);
    const DecodeResult dec = decode_scores(
        coding, decision_values(model, fq), DecodeMode::LinearApprox);
    return meta_loss(dec.class_scores, e.query_y).loss;
  };

  // analytic pass mirrors one training episode
  Rng fwd(15);
  BackboneCache cs, cq;
  const Matrix fs = backbone_forward(tp.backbone, e.support_x, &cs);
  const Matrix fq = backbone_forward(tp.backbone, e.query_x, &cq);
  IamCache ic;
  const Matrix adj =
      iam_forward(tp.iam, fs, e.support_y, fq, IamMode::Train, fwd, &ic);
  const LssvmModel model = fit_lssvm(adj, e.support_y, coding, lcfg);
  const DecodeResult dec = decode_scores(
      coding, decision_values(model, fq), DecodeMode::LinearApprox);
  const MetaLossResult ml = meta_loss(dec.class_scores, e.query_y);

  const LssvmGrads lg = lssvm_vjp(model, fq, ml.dscores);
  const IamGrads ig = iam_vjp(tp.iam, ic, lg.support_x);
  Matrix dq = lg.query_x;
  for (std::size_t i = 0; i < dq.rows(); ++i)
    for (std::size_t j = 0; j < dq.cols(); ++j) dq(i, j) += ig.query_x(i, j);
  const BackboneGrads gs = backbone_vjp(tp.backbone, cs, ig.support_x);
  const BackboneGrads gq = backbone_vjp(tp.backbone, cq, dq);

  int checked = 0;
  for (std::size_t l = 0; l < tp.backbone.weights.size(); ++l)
    for (std::size_t i = 0; i < tp.backbone.weights[l].rows(); ++i)
      for (std::size_t j = 0; j < tp.backbone.weights[l].cols(); ++j) {
        const double an = gs.weights[l](i, j) + gq.weights[l](i, j);
        const double fd =
            oracles::central_diff(loss, &tp.backbone.weights[l](i, j));
        CHECK(oracles::rel_err(an, fd) <= 1e-3);
        ++checked;
      }
  for (std::size_t l = 0; l < tp.backbone.biases.size(); ++l)
    for (std::size_t j = 0; j < tp.backbone.biases[l].size(); ++j) {
      const double an = gs.biases[l][j] + gq.biases[l][j];
      const double fd = oracles::central_diff(loss, &tp.backbone.biases[l][j]);
      CHECK(oracles::rel_err(an, fd) <= 1e-3);
      ++checked;
    }
  const std::vector<std::pair<Matrix*, const Matrix*>> mats = {
      {&tp.iam.map_q.w1, &ig.params.map_q.w1},
      {&tp.iam.map_q.w2, &ig.params.map_q.w2},
      {&tp.iam.map_k.w1, &ig.params.map_k.w1},
      {&tp.iam.map_k.w2, &ig.params.map_k.w2},
      {&tp.iam.map_v.w1, &ig.params.map_v.w1},
      {&tp.iam.map_v.w2, &ig.params.map_v.w2},
      {&tp.iam.map_h.w1, &ig.params.map_h.w1},
      {&tp.iam.map_h.w2, &ig.params.map_h.w2}};
  for (const auto& [param, grad] : mats)
    for (std::size_t i = 0; i < param->rows(); ++i)
      for (std::size_t j = 0; j < param->cols(); ++j) {
        const double fd = oracles::central_diff(loss, &(*param)(i, j));
        CHECK(oracles::rel_err((*grad)(i, j), fd) <= 1e-3);
        ++checked;
      }
  for (std::size_t j = 0; j < tp.iam.ln_gain.size(); ++j) {
    CHECK(oracles::rel_err(ig.params.ln_gain[j],
                           oracles::central_diff(loss, &tp.iam.ln_gain[j])) <=
          1e-3);
    CHECK(oracles::rel_err(ig.params.ln_bias[j],
                           oracles::central_diff(loss, &tp.iam.ln_bias[j])) <=
          1e-3);
    checked += 2;
  }
  CHECK(checked > 100);
}

TEST_CASE("training is deterministic end to end") {
  SynthSpec spec;
  spec.dim = 5;
  spec.within_class_std = 0.6;
  EpisodeSource src;
  src.synth = &spec;

  TrainConfig cfg;
  cfg.way = 3;
  cfg.train_shot = 2;
  cfg.test_shot = 1;
  cfg.query_train = 4;
  cfg.query_test = 4;
  cfg.epochs = 2;
  cfg.batches_per_epoch = 3;
  cfg.episodes_per_batch = 2;
  cfg.lr_init = 0.02;
  cfg.seed = 16;
  cfg.val_shot = 1;
  cfg.val_episodes = 8;
  cfg.use_iam = true;

  const TrainResult r1 = train(cfg, src, src, toy_trainable(5, {5}, true, 17));
  const TrainResult r2 = train(cfg, src, src, toy_trainable(5, {5}, true, 17));

  REQUIRE(r1.log.size() == 6);
  CHECK(r1.log.front().epoch == 1);
  CHECK(r1.log.front().batch == 1);
  CHECK(r1.log.back().epoch == 2);
  CHECK(r1.log.back().batch == 3);
  CHECK(r1.val_acc.size() == 2);
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].loss == r2.log[i].loss);
    CHECK(r1.log[i].lr == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(std::isfinite(r1.log[i].loss));
  }
  CHECK(r1.val_acc == r2.val_acc);
  CHECK(r1.best_val_acc == r2.best_val_acc);
  CHECK(same_tensors(r1.best, r2.best));

  double best = -1.0;
  for (double v : r1.val_acc) best = std::max(best, v);
  CHECK(r1.best_val_acc == best);
}

TEST_CASE("training rejects non-positive counts and asymmetric shots work") {
  SynthSpec spec;
  spec.dim = 4;
  EpisodeSource src;
  src.synth = &spec;
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(cfg, src, src, TrainableParams{}), InvalidArgument);

  // train at five shot, validate at one: different episode geometry per phase
  cfg = TrainConfig{};
  cfg.way = 2;
  cfg.train_shot = 5;
  cfg.test_shot = 1;
  cfg.val_shot = 1;
  cfg.query_train = 3;
  cfg.query_test = 3;
  cfg.epochs = 1;
  cfg.batches_per_epoch = 2;
  cfg.episodes_per_batch = 1;
  cfg.val_episodes = 4;
  cfg.use_iam = false;
  cfg.seed = 18;
  const TrainResult r = train(cfg, src, src, toy_trainable(4, {4}, false, 19));
  CHECK(r.log.size() == 2);
  CHECK(r.best_val_acc >= 0.0);
}

TEST_CASE("evaluation is exact on noise-free classes") {
  SynthSpec spec;
  spec.dim = 8;
  spec.within_class_std = 1e-9;
  EpisodeSource src;
  src.synth = &spec;
  EvalOptions opt;
  // near-interpolating fit; the default gamma trades training accuracy for
  // regularization and drops a handful of separable queries
  opt.learner.lssvm.gamma = 100.0;
  opt.way = 5;
  opt.shot = 1;
  opt.query = 6;
  opt.seed = 20;
  const EvalReport rep = evaluate(src, nullptr, opt, 50);
  CHECK(rep.episodes == 50);
  CHECK(rep.mean_acc == 1.0);
  CHECK(rep.ci95 == 0.0);
  CHECK(rep.fit_us_min > 0.0);
  CHECK(rep.fit_us_max >= rep.fit_us_min);
}

TEST_CASE("a single evaluation episode has no interval") {
  SynthSpec spec;
  spec.dim = 6;
  EpisodeSource src;
  src.synth = &spec;
  EvalOptions opt;
  opt.way = 3;
  opt.query = 5;
  opt.seed = 21;
  const EvalReport rep = evaluate(src, nullptr, opt, 1);
  CHECK(rep.episodes == 1);
  CHECK(rep.ci95 == 0.0);
}

TEST_CASE("evaluation repeats bit-identically and ignores thread count") {
  SynthSpec spec;
  spec.dim = 10;
  spec.within_class_std = 0.9;
  EpisodeSource src;
  src.synth = &spec;
  EvalOptions opt;
  opt.way = 4;
  opt.shot = 2;
  opt.query = 7;
  opt.seed = 22;
  opt.psm = PsmConfig{3, true};
  const EvalReport a = evaluate(src, nullptr, opt, 40);
  const EvalReport b = evaluate(src, nullptr, opt, 40);
  CHECK(a.per_episode_acc == b.per_episode_acc);
  CHECK(a.mean_acc == b.mean_acc);
  CHECK(a.ci95 == b.ci95);

  opt.threads = 4;
  const EvalReport c = evaluate(src, nullptr, opt, 40);
  CHECK(a.per_episode_acc == c.per_episode_acc);

  // ci95 recomputed from scratch against the reported sample
  double mean = 0.0;
  for (double v : a.per_episode_acc) mean += v;
  mean /= 40.0;
  double var = 0.0;
  for (double v : a.per_episode_acc) var += (v - mean) * (v - mean);
  var /= 40.0;
  CHECK(a.mean_acc == doctest::Approx(mean).epsilon(1e-12));
  CHECK(a.ci95 ==
        doctest::Approx(1.96 * std::sqrt(var) / std::sqrt(40.0)).epsilon(1e-12));
}

TEST_CASE("evaluation validates its arguments") {
  SynthSpec spec;
  EpisodeSource src;
  src.synth = &spec;
  EvalOptions opt;
  CHECK_THROWS_AS(evaluate(src, nullptr, opt, 0), InvalidArgument);
  opt.use_iam = true;
  CHECK_THROWS_AS(evaluate(src, nullptr, opt, 2), InvalidArgument);
  TrainableParams no_iam;
  CHECK_THROWS_AS(evaluate(src, &no_iam, opt, 2), InvalidArgument);
  opt.threads = 0;
  opt.use_iam = false;
  CHECK_THROWS_AS(evaluate(src, nullptr, opt, 2), InvalidArgument);
}

TEST_CASE("timing table keeps learner order and repeats exactly") {
  SynthSpec spec;
  spec.dim = 6;
  spec.within_class_std = 0.5;
  EpisodeSource src;
  src.synth = &spec;

  BaseLearnerSpec svm;
  BaseLearnerSpec nn;
  nn.kind = LearnerKind::PrototypeNN;
  BaseLearnerSpec ridge;
  ridge.kind = LearnerKind::Ridge;
  const std::vector<std::pair<std::string, BaseLearnerSpec>> specs = {
      {"lssvm", svm}, {"proto_nn", nn}, {"ridge", ridge}};

  CHECK_THROWS_AS(benchmark_timing(specs, src, 3, 1, 4, 99, 23),
                  InvalidArgument);

  const auto rows = benchmark_timing(specs, src, 3, 1, 4, 120, 23);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].learner == "lssvm");
  CHECK(rows[1].learner == "proto_nn");
  CHECK(rows[2].learner == "ridge");
  for (const auto& r : rows) {
    CHECK(r.mean_acc > 0.4);
    CHECK(r.per_episode_us > 0.0);
    CHECK(r.total_s >= 0.0);
  }
  const auto again = benchmark_timing(specs, src, 3, 1, 4, 120, 23);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].mean_acc == again[i].mean_acc);
    CHECK(rows[i].ci95 == again[i].ci95);
  }
}

TEST_CASE("sample statistics helper matches its definition") {
  const std::vector<double> xs{0.2, 0.4, 0.9};
  const auto [mean, ci] = mean_ci95(xs);
  CHECK(mean == doctest::Approx(0.5).epsilon(1e-12));
  const double var = ((0.2 - 0.5) * (0.2 - 0.5) + (0.4 - 0.5) * (0.4 - 0.5) +
                      (0.9 - 0.5) * (0.9 - 0.5)) /
                     3.0;
  CHECK(ci == doctest::Approx(1.96 * std::sqrt(var) / std::sqrt(3.0))
                  .epsilon(1e-12));
  CHECK_THROWS_AS(mean_ci95({}), InvalidArgument);
}

TEST_CASE("parallel loops cover every index and surface exceptions") {
  std::vector<int> hit(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { hit[i] += 1; });
  for (int h : hit) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 2,
                               [](std::size_t i) {
                                 if (i == 7) throw InvalidArgument("boom");
                               }),
                  InvalidArgument);
  CHECK_THROWS_AS(parallel_for(3, 0, [](std::size_t) {}), InvalidArgument);
}
