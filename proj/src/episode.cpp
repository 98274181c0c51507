#include "fewshot/episode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fewshot {

Episode sample_synthetic_episode(const SynthSpec& spec, int way, int shot,
                                 int query_per_class, Rng& rng) {
  if (way < 2) throw InvalidArgument("sample_synthetic_episode: way >= 2");
  if (shot < 1 || query_per_class < 1)
    throw InvalidArgument("sample_synthetic_episode: shot/query >= 1");
  if (spec.dim == 0 || spec.class_center_scale <= 0.0 ||
      spec.within_class_std < 0.0 || spec.support_noise_factor < 1.0)
    throw InvalidArgument("sample_synthetic_episode: bad SynthSpec");

  const std::size_t d = spec.dim;
  Episode e;
  e.way = way;
  e.shot = shot;
  e.query_per_class = query_per_class;
  e.support_x = Matrix(static_cast<std::size_t>(way) * shot, d);
  e.query_x = Matrix(static_cast<std::size_t>(way) * query_per_class, d);
  e.support_y.resize(static_cast<std::size_t>(way) * shot);
  e.query_y.resize(static_cast<std::size_t>(way) * query_per_class);

  const double support_std =
      spec.within_class_std * spec.support_noise_factor;
  Vector center(d);
  for (int c = 0; c < way; ++c) {
    for (std::size_t j = 0; j < d; ++j)
      center[j] = spec.class_center_scale * rng.next_gaussian();
    for (int k = 0; k < shot; ++k) {
      const std::size_t r = static_cast<std::size_t>(c) * shot + k;
      for (std::size_t j = 0; j < d; ++j)
        e.support_x(r, j) = center[j] + support_std * rng.next_gaussian();
      e.support_y[r] = c;
    }
    for (int q = 0; q < query_per_class; ++q) {
      const std::size_t r = static_cast<std::size_t>(c) * query_per_class + q;
      for (std::size_t j = 0; j < d; ++j)
        e.query_x(r, j) =
            center[j] + spec.within_class_std * rng.next_gaussian();
      e.query_y[r] = c;
    }
  }
  return e;
}

Episode draw_episode_from_bank(const FeatureBank& bank,
                               const std::vector<int>& split, int way,
                               int shot, int query_per_class, Rng& rng) {
  if (static_cast<int>(split.size()) < way)
    throw InsufficientClasses("split has " + std::to_string(split.size()) +
                              " classes, need " + std::to_string(way));
  const std::size_t need = static_cast<std::size_t>(shot) + query_per_class;

  // classes without replacement, in draw order
  std::vector<int> pool = split;
  std::vector<int> chosen(way);
  for (int c = 0; c < way; ++c) {
    const std::size_t pick = rng.next_below(pool.size());
    chosen[c] = pool[pick];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }

  Episode e;
  e.way = way;
  e.shot = shot;
  e.query_per_class = query_per_class;
  e.support_x = Matrix(static_cast<std::size_t>(way) * shot, bank.dim);
  e.query_x = Matrix(static_cast<std::size_t>(way) * query_per_class, bank.dim);
  e.support_y.resize(static_cast<std::size_t>(way) * shot);
  e.query_y.resize(static_cast<std::size_t>(way) * query_per_class);

  for (int c = 0; c < way; ++c) {
    const auto it =
        std::find(bank.classes.begin(), bank.classes.end(), chosen[c]);
    if (it == bank.classes.end())
      throw InsufficientClasses("class id " + std::to_string(chosen[c]) +
                                " not present in bank");
    const auto& inst = bank.samples[it - bank.classes.begin()];
    if (inst.size() < need)
      throw InsufficientSamples("class " + std::to_string(chosen[c]) + " has " +
                                std::to_string(inst.size()) +
                                " samples, need " + std::to_string(need));
    // instance indices without replacement
    std::vector<std::size_t> idx(inst.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t k = 0; k < need; ++k) {
      const std::size_t pick = k + rng.next_below(idx.size() - k);
      std::swap(idx[k], idx[pick]);
    }
    for (int k = 0; k < shot; ++k) {
      const std::size_t r = static_cast<std::size_t>(c) * shot + k;
      const Vector& v = inst[idx[k]];
      for (std::size_t j = 0; j < bank.dim; ++j) e.support_x(r, j) = v[j];
      e.support_y[r] = c;
    }
    for (int q = 0; q < query_per_class; ++q) {
      const std::size_t r = static_cast<std::size_t>(c) * query_per_class + q;
      const Vector& v = inst[idx[shot + q]];
      for (std::size_t j = 0; j < bank.dim; ++j) e.query_x(r, j) = v[j];
      e.query_y[r] = c;
    }
  }
  return e;
}

void validate_episode(const Episode& e) {
  if (e.way < 2 || e.shot < 1 || e.query_per_class < 1)
    throw InvalidArgument("episode: bad way/shot/query counts");
  if (e.support_x.rows() != static_cast<std::size_t>(e.way) * e.shot ||
      e.support_y.size() != e.support_x.rows())
    throw ShapeMismatch("episode: support shape mismatch");
  if (e.query_x.rows() != static_cast<std::size_t>(e.way) * e.query_per_class)
    throw ShapeMismatch("episode: query shape mismatch");
  if (!e.query_y.empty() && e.query_y.size() != e.query_x.rows())
    throw ShapeMismatch("episode: query label shape mismatch");
  if (e.support_x.cols() != e.query_x.cols())
    throw ShapeMismatch("episode: support/query dims differ");
  if (!e.support_x.all_finite() || !e.query_x.all_finite())
    throw NonFiniteFeature("episode: non-finite feature");
  std::vector<int> per_class(e.way, 0);
  for (int y : e.support_y) {
    if (y < 0 || y >= e.way) throw LabelOutOfRange("episode: support label");
    ++per_class[y];
  }
  for (int c = 0; c < e.way; ++c)
    if (per_class[c] != e.shot)
      throw InvalidArgument("episode: support class counts not exactly shot");
  if (!e.query_y.empty()) {
    std::fill(per_class.begin(), per_class.end(), 0);
    for (int y : e.query_y) {
      if (y < 0 || y >= e.way) throw LabelOutOfRange("episode: query label");
      ++per_class[y];
    }
    for (int c = 0; c < e.way; ++c)
      if (per_class[c] != e.query_per_class)
        throw InvalidArgument("episode: query class counts off");
  }
}

FeatureBank generate_bank(std::size_t classes, std::size_t dim,
                          std::size_t per_class, double center_scale,
                          double within_std, std::uint64_t seed) {
  if (classes == 0 || dim == 0 || per_class == 0)
    throw InvalidArgument("generate_bank: counts must be positive");
  FeatureBank bank;
  bank.dim = dim;
  Rng root(seed);
  for (std::size_t c = 0; c < classes; ++c) {
    Rng rng = root.split(c);
    Vector center(dim);
    for (double& v : center) v = center_scale * rng.next_gaussian();
    std::vector<Vector> rows;
    rows.reserve(per_class);
    for (std::size_t i = 0; i < per_class; ++i) {
      Vector v(dim);
      for (std::size_t j = 0; j < dim; ++j)
        v[j] = center[j] + within_std * rng.next_gaussian();
      rows.push_back(std::move(v));
    }
    bank.classes.push_back(static_cast<int>(c));
    bank.samples.push_back(std::move(rows));
  }
  return bank;
}

SplitSpec split_bank_classes(const FeatureBank& bank, std::size_t n_train,
                             std::size_t n_val, std::size_t n_test) {
  const std::size_t total = bank.classes.size();
  if (n_train == 0 && n_val == 0 && n_test == 0) {
    // 64:16:20 proportions, each phase at least one class
    n_train = std::max<std::size_t>(1, total * 64 / 100);
    n_val = std::max<std::size_t>(1, total * 16 / 100);
    if (n_train + n_val >= total) {
      if (total < 3) throw InsufficientClasses("bank needs >= 3 classes");
      n_train = total - 2;
      n_val = 1;
    }
    n_test = total - n_train - n_val;
  }
  if (n_train + n_val + n_test > total)
    throw InsufficientClasses("split counts exceed bank classes");
  if (n_train == 0 || n_val == 0 || n_test == 0)
    throw InsufficientClasses("each split phase needs >= 1 class");
  std::vector<int> ids = bank.classes;
  std::sort(ids.begin(), ids.end());
  SplitSpec s;
  s.train_classes.assign(ids.begin(), ids.begin() + n_train);
  s.val_classes.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  s.test_classes.assign(ids.begin() + n_train + n_val,
                        ids.begin() + n_train + n_val + n_test);
  return s;
}

}  // namespace fewshot
