#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fewshot/numerics.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

/// One N-way K-shot task. Labels are episode-local (0..way-1); query_y is
/// empty when the episode is unlabeled.
struct Episode {
  int way = 0;
  int shot = 0;
  int query_per_class = 0;
  Matrix support_x;             // [way*shot x d]
  std::vector<int> support_y;   // way*shot
  Matrix query_x;               // [way*query_per_class x d]
  std::vector<int> query_y;     // way*query_per_class, or empty
};

/// Gaussian-mixture task distribution: fresh class centers per episode,
/// isotropic within-class noise. support_noise_factor >= 1 inflates the
/// support draws only, which models a noisy low-shot regime.
struct SynthSpec {
  std::size_t dim = 16;
  double class_center_scale = 1.0;
  double within_class_std = 0.35;
  double support_noise_factor = 1.0;
  std::uint64_t seed = 0;
};

/// Per-class pool of fixed feature vectors, the stand-in for a dataset
/// split pushed through a feature extractor.
struct FeatureBank {
  std::size_t dim = 0;
  std::vector<int> classes;                      // class ids, first-seen order
  std::vector<std::vector<Vector>> samples;      // parallel to classes
};

struct SplitSpec {
  std::vector<int> train_classes;
  std::vector<int> val_classes;
  std::vector<int> test_classes;
};

Episode sample_synthetic_episode(const SynthSpec& spec, int way, int shot,
                                 int query_per_class, Rng& rng);

Episode draw_episode_from_bank(const FeatureBank& bank,
                               const std::vector<int>& split, int way,
                               int shot, int query_per_class, Rng& rng);

/// Throws if the episode violates the shape/label contract.
void validate_episode(const Episode& e);

/// Deterministic synthetic bank: `per_class` draws around a fresh center
/// for each of `classes` classes.
FeatureBank generate_bank(std::size_t classes, std::size_t dim,
                          std::size_t per_class, double center_scale,
                          double within_std, std::uint64_t seed);

/// Partitions bank class ids into train/val/test in id order. Counts of 0
/// select a 64:16:20 proportional split.
SplitSpec split_bank_classes(const FeatureBank& bank, std::size_t n_train,
                             std::size_t n_val, std::size_t n_test);

// FBK1 binary format and a CSV twin; see README for the byte layout.
FeatureBank load_feature_bank(const std::string& path);
void write_feature_bank(const FeatureBank& bank, const std::string& path);
FeatureBank load_feature_bank_csv(const std::string& path);
void write_feature_bank_csv(const FeatureBank& bank, const std::string& path);

}  // namespace fewshot
