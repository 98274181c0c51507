#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fewshot/baselines.hpp"
#include "fewshot/episode.hpp"
#include "fewshot/meta.hpp"

namespace fewshot {

/// Fully-defaulted flat key set behind the `key = value` config files.
/// Section headers in files are cosmetic; the key namespace is flat.
struct RunConfig {
  // run
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = ".";
  std::string bank;  // empty = synthetic episodes

  // episode shape
  int way = 5;
  int shot = 1;
  int train_shot = 5;
  int query_train = 6;
  int query_test = 15;
  int episodes = 1000;

  // synthetic distribution
  int synth_dim = 16;
  double synth_center_scale = 1.0;
  double synth_std = 0.35;
  double synth_support_noise = 1.0;

  // base learner
  std::string learner = "lssvm";  // nn | rr | lssvm
  double ridge_lambda = 1.0;
  double gamma = 0.1;
  std::string kernel = "linear";  // linear | rbf
  double rbf_sigma = 1.0;
  std::string decode = "linear";  // linear | hamming
  double bias_stationarity_scale = 1.0;
  std::string coding = "ova";  // ova | ovo | random

  // transduction
  bool iam = false;
  int iam_r = 8;
  double iam_dropout = 0.1;
  int iam_dk = 0;  // 0 = feature dim
  int iam_dv = 0;
  int psm_iters = 0;
  bool psm_accumulate = true;

  // meta-training
  std::string backbone;  // comma widths, empty = identity
  int epochs = 60;
  int batches_per_epoch = 1000;
  int episodes_per_batch = 8;
  double lr_init = 0.1;
  std::string lr_milestones = "20,40,50";
  std::string lr_factors = "0.06,0.2,0.2";
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int val_shot = 5;
  int val_episodes = 200;
};

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

/// Sets one key; ConfigError names unknown keys and unparsable values.
void apply_config_key(RunConfig& cfg, const std::string& key,
                      const std::string& value);

RunConfig parse_config_text(const std::string& text,
                            const ConfigOverrides& overrides = {});
RunConfig parse_config(const std::string& path,
                       const ConfigOverrides& overrides = {});

/// Cross-field validation; ConfigError on the first violated constraint.
void validate_config(const RunConfig& cfg);

/// Canonical `key = value` rendering, fixed key order, round-trip exact.
std::string serialize_config(const RunConfig& cfg);

// typed views consumed by the engine
SynthSpec synth_spec(const RunConfig& cfg);
LssvmConfig lssvm_config(const RunConfig& cfg);
BaseLearnerSpec learner_spec(const RunConfig& cfg);
CodingScheme coding_scheme(const RunConfig& cfg);
std::vector<std::size_t> backbone_widths(const RunConfig& cfg);
TrainConfig train_config(const RunConfig& cfg);

}  // namespace fewshot
