#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Core domain types shared by every other module: items, bags, episodes,
// selections, the ground-truth relation, and the energy of a selection.

namespace cofind {

// One item is a point in R^d. Feature dimension must agree across all items
// of an episode.
using FeatureVector = Eigen::VectorXd;

// Class id reserved for background items. Background never relates to
// anything, including itself.
inline constexpr int kBackgroundClassId = -1;

struct ItemLabel {
  int class_id = kBackgroundClassId;

  bool is_background() const { return class_id == kBackgroundClassId; }

  friend bool operator==(const ItemLabel&, const ItemLabel&) = default;
};

struct Bag {
  std::vector<FeatureVector> items;
  // Present only on generated/evaluation data; absent means unlabeled.
  std::optional<std::vector<ItemLabel>> labels;

  int size() const { return static_cast<int>(items.size()); }
  bool labeled() const { return labels.has_value(); }
};

// A sampled problem instance: N positive bags, optionally one negative bag.
// target_class and num_classes_sampled are generation metadata; inference
// never reads them.
struct Episode {
  std::vector<Bag> positive_bags;
  std::optional<Bag> negative_bag;
  std::optional<int> target_class;
  std::optional<int> num_classes_sampled;

  int num_bags() const { return static_cast<int>(positive_bags.size()); }

  // Dimension of the feature space, taken from the first item.
  int dim() const {
    for (const Bag& bag : positive_bags) {
      if (!bag.items.empty()) return static_cast<int>(bag.items.front().size());
    }
    if (negative_bag && !negative_bag->items.empty()) {
      return static_cast<int>(negative_bag->items.front().size());
    }
    return 0;
  }

  bool labeled() const {
    for (const Bag& bag : positive_bags) {
      if (!bag.labeled()) return false;
    }
    return true;
  }
};

// selection[i] = index of the chosen item within positive bag i.
using Selection = std::vector<int>;

struct EnergyConfig {
  double eta = 0.0;  // weight of the unary term, >= 0

  EnergyConfig() = default;
  explicit EnergyConfig(double eta_in) : eta(eta_in) {
    if (eta < 0.0) throw std::invalid_argument("EnergyConfig: eta must be >= 0");
  }
};

// Evaluator of unary and pairwise potentials for one episode. Pairwise
// queries use the canonical order bag_i > bag_j; implementations memoize and
// count unique pairwise evaluations so callers can measure laziness.
class PotentialProvider {
 public:
  virtual ~PotentialProvider() = default;

  // Pairwise potential between item p of bag_i and item q of bag_j.
  // Requires bag_i > bag_j; a non-canonical query is a programming bug and
  // throws.
  virtual double pairwise(int bag_i, int item_p, int bag_j, int item_q) = 0;

  // Unary potential of item `item` of positive bag `bag`, before the eta
  // weight. Zero when the episode has no negative bag or the mode is NONE.
  virtual double unary(int bag, int item) = 0;

  virtual std::int64_t pairwise_evaluated() const = 0;
  virtual std::int64_t pairwise_total_possible() const = 0;
};

inline std::int64_t count_pairwise_total(const Episode& episode) {
  std::int64_t total = 0;
  const int n = episode.num_bags();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      total += static_cast<std::int64_t>(episode.positive_bags[i].size()) *
               episode.positive_bags[j].size();
    }
  }
  return total;
}

// Ground-truth relation: +1 iff both labels name the same foreground class.
inline int relation_label(const ItemLabel& a, const ItemLabel& b) {
  if (a.is_background() || b.is_background()) return -1;
  return a.class_id == b.class_id ? +1 : -1;
}

// Relation of an item to a whole bag: related iff related to any item in it.
inline int relation_to_bag(const ItemLabel& a, const Bag& bag) {
  if (!bag.labeled()) {
    throw std::invalid_argument("relation_to_bag: bag is unlabeled");
  }
  for (const ItemLabel& label : *bag.labels) {
    if (relation_label(a, label) > 0) return +1;
  }
  return -1;
}

inline void validate_selection(const Selection& selection, const Episode& episode) {
  if (static_cast<int>(selection.size()) != episode.num_bags()) {
    throw std::invalid_argument("selection: length must equal the number of positive bags");
  }
  for (std::size_t i = 0; i < selection.size(); ++i) {
    if (selection[i] < 0 || selection[i] >= episode.positive_bags[i].size()) {
      throw std::out_of_range("selection: item index out of bounds for bag " + std::to_string(i));
    }
  }
}

// Energy of a full selection: sum of pairwise potentials over all unordered
// bag pairs (evaluated once, in canonical order i > j) plus eta times the
// unary potentials. Providers return zero unaries when the episode has no
// negative bag, which makes the unary sum vanish in that case.
inline double energy(const Selection& selection, const Episode& episode,
                     PotentialProvider& provider, const EnergyConfig& config = {}) {
  validate_selection(selection, episode);
  const int n = episode.num_bags();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      total += provider.pairwise(i, selection[i], j, selection[j]);
    }
  }
  if (config.eta != 0.0) {
    double unary_sum = 0.0;
    for (int i = 0; i < n; ++i) unary_sum += provider.unary(i, selection[i]);
    total += config.eta * unary_sum;
  }
  return total;
}

// Fraction of selected items whose class equals the episode's target class.
inline double success_rate(const Selection& selection, const Episode& episode) {
  validate_selection(selection, episode);
  if (!episode.target_class.has_value()) {
    throw std::invalid_argument("success_rate: episode has no target_class");
  }
  int hits = 0;
  for (std::size_t i = 0; i < selection.size(); ++i) {
    const Bag& bag = episode.positive_bags[i];
    if (!bag.labeled()) throw std::invalid_argument("success_rate: episode is unlabeled");
    if ((*bag.labels)[selection[i]].class_id == *episode.target_class) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(selection.size());
}

}  // namespace cofind
