#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cofind/core.hpp"

// Deterministic synthetic episode generator over a Gaussian latent-class
// feature model. Class prototypes stand in for CNN embeddings; the ratio
// prototype_scale / noise_sigma is the difficulty knob.

namespace cofind {

struct IntRange {
  int min = 0;
  int max = 0;
};

struct GeneratorConfig {
  int dim = 16;
  int num_train_classes = 64;  // class ids [0, num_train_classes)
  int num_test_classes = 20;   // class ids [num_train_classes, +num_test_classes)
  double prototype_scale = 1.0;
  double noise_sigma = 0.1;
  int num_bags = 8;           // N
  int bag_size = 5;           // B
  int negative_bag_size = 10;  // B_bar; 0 means no negative bag
  IntRange m_range{5, 15};    // classes sampled per episode, inclusive
  std::uint64_t seed = 0;

  void validate() const {
    if (dim < 1) throw std::invalid_argument("GeneratorConfig: dim must be >= 1");
    if (num_train_classes < 0 || num_test_classes < 0) {
      throw std::invalid_argument("GeneratorConfig: class counts must be >= 0");
    }
    if (noise_sigma < 0.0 || prototype_scale < 0.0) {
      throw std::invalid_argument("GeneratorConfig: scales must be >= 0");
    }
    if (num_bags < 2) throw std::invalid_argument("GeneratorConfig: need at least 2 bags");
    if (bag_size < 1) throw std::invalid_argument("GeneratorConfig: bag_size must be >= 1");
    if (negative_bag_size < 0) {
      throw std::invalid_argument("GeneratorConfig: negative_bag_size must be >= 0");
    }
    if (m_range.min < 2 || m_range.max < m_range.min) {
      throw std::invalid_argument("GeneratorConfig: m_range must satisfy 2 <= min <= max");
    }
  }
};

enum class Split { kTrain, kTest };

inline const char* to_string(Split split) {
  return split == Split::kTrain ? "train" : "test";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split: " + s);
}

// Train and test class id pools are contiguous and disjoint by construction.
inline std::vector<int> class_pool(const GeneratorConfig& config, Split split) {
  std::vector<int> ids;
  const int lo = split == Split::kTrain ? 0 : config.num_train_classes;
  const int count = split == Split::kTrain ? config.num_train_classes : config.num_test_classes;
  ids.reserve(count);
  for (int c = 0; c < count; ++c) ids.push_back(lo + c);
  return ids;
}

// One mean vector per class id (train pool first, then test pool), sampled
// from an isotropic Gaussian of scale prototype_scale. Deterministic given
// config.seed; independent of which split is later sampled.
inline std::vector<FeatureVector> make_class_prototypes(const GeneratorConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int total = config.num_train_classes + config.num_test_classes;
  std::vector<FeatureVector> prototypes(total);
  for (int c = 0; c < total; ++c) {
    FeatureVector proto(config.dim);
    for (int k = 0; k < config.dim; ++k) proto[k] = config.prototype_scale * normal(rng);
    prototypes[c] = std::move(proto);
  }
  return prototypes;
}

namespace detail {

inline FeatureVector sample_item(const FeatureVector& prototype, double sigma,
                                 std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureVector item(prototype.size());
  for (int k = 0; k < prototype.size(); ++k) item[k] = prototype[k] + sigma * normal(rng);
  return item;
}

}  // namespace detail

// Samples one episode: M classes from the split pool, one of them the target.
// Every positive bag holds at least one target item plus B-1 items drawn
// uniformly over the M classes (bag order shuffled); the negative bag holds
// B_bar items from the non-target classes only.
inline Episode generate_episode(const GeneratorConfig& config,
                                const std::vector<FeatureVector>& prototypes, Split split,
                                std::mt19937_64& rng) {
  config.validate();
  std::vector<int> pool = class_pool(config, split);
  if (static_cast<int>(pool.size()) < config.m_range.min) {
    throw std::invalid_argument("generate_episode: class pool smaller than m_range.min");
  }
  const int m_hi = std::min<int>(config.m_range.max, static_cast<int>(pool.size()));
  std::uniform_int_distribution<int> m_dist(config.m_range.min, m_hi);
  const int m = m_dist(rng);

  std::shuffle(pool.begin(), pool.end(), rng);
  const std::vector<int> classes(pool.begin(), pool.begin() + m);
  const int target = classes[0];

  std::uniform_int_distribution<int> any_class(0, m - 1);
  std::uniform_int_distribution<int> non_target(1, m - 1);

  Episode episode;
  episode.target_class = target;
  episode.num_classes_sampled = m;
  episode.positive_bags.resize(config.num_bags);
  for (Bag& bag : episode.positive_bags) {
    std::vector<int> item_classes;
    item_classes.push_back(target);
    for (int i = 1; i < config.bag_size; ++i) item_classes.push_back(classes[any_class(rng)]);
    std::shuffle(item_classes.begin(), item_classes.end(), rng);
    bag.labels.emplace();
    for (int c : item_classes) {
      bag.items.push_back(detail::sample_item(prototypes[c], config.noise_sigma, rng));
      bag.labels->push_back(ItemLabel{c});
    }
  }
  if (config.negative_bag_size > 0) {
    Bag neg;
    neg.labels.emplace();
    for (int i = 0; i < config.negative_bag_size; ++i) {
      const int c = classes[non_target(rng)];
      neg.items.push_back(detail::sample_item(prototypes[c], config.noise_sigma, rng));
      neg.labels->push_back(ItemLabel{c});
    }
    episode.negative_bag = std::move(neg);
  }
  return episode;
}

inline Episode generate_episode(const GeneratorConfig& config, Split split,
                                std::mt19937_64& rng) {
  return generate_episode(config, make_class_prototypes(config), split, rng);
}

// (config.seed, episode index) fully determines each episode, so streams can
// be generated out of order or in parallel.
inline std::mt19937_64 episode_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

inline std::vector<Episode> generate_dataset(const GeneratorConfig& config, Split split,
                                             int count) {
  const auto prototypes = make_class_prototypes(config);
  std::vector<Episode> episodes;
  episodes.reserve(count);
  for (int i = 0; i < count; ++i) {
    auto rng = episode_rng(config.seed, static_cast<std::uint64_t>(i));
    episodes.push_back(generate_episode(config, prototypes, split, rng));
  }
  return episodes;
}

}  // namespace cofind
