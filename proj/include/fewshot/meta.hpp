#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fewshot/backbone.hpp"
#include "fewshot/baselines.hpp"
#include "fewshot/episode.hpp"
#include "fewshot/iam.hpp"
#include "fewshot/psm.hpp"

namespace fewshot {

/// Episode provider: exactly one of synth/bank is set. Bank draws are
/// restricted to the `split` class ids.
struct EpisodeSource {
  const SynthSpec* synth = nullptr;
  const FeatureBank* bank = nullptr;
  std::vector<int> split;
};

Episode draw_episode(const EpisodeSource& src, int way, int shot,
                     int query_per_class, Rng& rng);

/// Everything the optimizer touches. IAM tensors join only when use_iam.
struct TrainableParams {
  BackboneParams backbone;
  IamParams iam;
  bool use_iam = false;
};

/// Flat views over every trainable tensor, in a fixed documented order:
/// backbone layer weights/biases, then map_q/k/v/h w1,w2, ln gain, ln bias.
std::vector<std::span<double>> tensor_views(TrainableParams& p);
std::vector<std::span<const double>> tensor_views(const TrainableParams& p);

struct MetaLossResult {
  double loss = 0.0;
  Matrix dscores;  // (softmax - onehot) / m
};

/// Mean cross-entropy of row-softmaxed class scores.
MetaLossResult meta_loss(const Matrix& class_scores,
                         const std::vector<int>& labels);

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 5e-4;
};

struct SgdState {
  std::vector<Vector> velocity;  // lazily sized to match the tensor list
};

/// Classical-L2 Nesterov SGD: g += wd*p; v = mu*v + g; p -= lr*(g + mu*v)
/// (or p -= lr*v without Nesterov).
void sgd_step(const std::vector<std::span<double>>& params,
              const std::vector<std::span<const double>>& grads,
              SgdState& state, const SgdConfig& cfg);

struct TrainConfig {
  int way = 5;
  int train_shot = 5;
  int test_shot = 1;
  int query_train = 6;
  int query_test = 15;
  int epochs = 60;
  int batches_per_epoch = 1000;
  int episodes_per_batch = 8;
  double lr_init = 0.1;
  std::vector<int> lr_milestones{20, 40, 50};
  std::vector<double> lr_factors{0.06, 0.2, 0.2};
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  int val_shot = 5;     // model selection protocol, independent of test_shot
  int val_episodes = 200;
  bool use_iam = true;
  LssvmConfig lssvm;
  CodingScheme coding = CodingScheme::OneVsAll;
  int threads = 1;
};

/// lr_init times every factor whose milestone epoch has been reached.
double lr_schedule(int epoch, const TrainConfig& cfg);

struct TrainLogEntry {
  int epoch = 0;
  int batch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  TrainableParams best;  // highest validation accuracy
  double best_val_acc = 0.0;
  std::vector<TrainLogEntry> log;      // one entry per batch
  std::vector<double> val_acc;         // one entry per epoch
};

/// Episodic meta-training: per batch, backbone -> IAM (train mode) ->
/// LSSVM -> cross-entropy, gradients assembled from the hand-written
/// vector-Jacobian products, one SGD step per batch. PSM never runs here.
TrainResult train(const TrainConfig& cfg, const EpisodeSource& train_src,
                  const EpisodeSource& val_src, TrainableParams init);

struct EvalOptions {
  BaseLearnerSpec learner;
  CodingScheme coding = CodingScheme::OneVsAll;
  bool use_iam = false;
  PsmConfig psm{0, true};
  int way = 5;
  int shot = 1;
  int query = 15;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct EvalReport {
  std::size_t episodes = 0;
  std::vector<double> per_episode_acc;
  double mean_acc = 0.0;
  double ci95 = 0.0;  // 1.96 * std / sqrt(episodes)
  double wall_clock_total_s = 0.0;
  double fit_us_mean = 0.0;
  double fit_us_min = 0.0;
  double fit_us_max = 0.0;
};

/// Per-episode accuracy over freshly drawn episodes; `params` may be null
/// for raw-feature evaluation and must carry IAM params when use_iam.
/// Deterministic given opt.seed (timing fields excepted).
EvalReport evaluate(const EpisodeSource& src, const TrainableParams* params,
                    const EvalOptions& opt, std::size_t episodes);

struct BenchRow {
  std::string learner;
  double mean_acc = 0.0;
  double ci95 = 0.0;
  double total_s = 0.0;
  double per_episode_us = 0.0;
};

/// Times fit+score+argmax per learner over identical episode streams;
/// episode sampling stays outside the timed section.
std::vector<BenchRow> benchmark_timing(
    const std::vector<std::pair<std::string, BaseLearnerSpec>>& specs,
    const EpisodeSource& src, int way, int shot, int query,
    std::size_t episodes, std::uint64_t seed,
    CodingScheme coding = CodingScheme::OneVsAll);

/// Mean and 1.96*sigma/sqrt(n) of a sample (population sigma).
std::pair<double, double> mean_ci95(const std::vector<double>& xs);

/// Runs fn(0..n-1) on up to `threads` workers; any exception is rethrown.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace fewshot
