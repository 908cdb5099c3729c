#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>

#include "cofind/core.hpp"

// The learnable relation scorer (gated embedding + linear score), the unary
// aggregator with selectable modes, the fixed cosine baseline, and the lazy
// instrumented providers used by inference.

namespace cofind {

// Parameters of one relation scorer. W1, W2 act on the concatenated feature
// pair [f, g] in R^{2d}. nu is the unary temperature and is set only on
// models trained for the unary role; the pairwise model leaves it empty.
struct RelationModel {
  Eigen::MatrixXd W1;  // d x 2d
  Eigen::MatrixXd W2;  // d x 2d
  Eigen::VectorXd b1;  // d
  Eigen::VectorXd b2;  // d
  Eigen::VectorXd w;   // d
  double b = 0.0;
  std::optional<double> nu;

  int dim() const { return static_cast<int>(b1.size()); }

  static RelationModel zeros(int d) {
    RelationModel m;
    m.W1 = Eigen::MatrixXd::Zero(d, 2 * d);
    m.W2 = Eigen::MatrixXd::Zero(d, 2 * d);
    m.b1 = Eigen::VectorXd::Zero(d);
    m.b2 = Eigen::VectorXd::Zero(d);
    m.w = Eigen::VectorXd::Zero(d);
    m.b = 0.0;
    return m;
  }

  void check_shapes() const {
    const int d = dim();
    if (W1.rows() != d || W1.cols() != 2 * d || W2.rows() != d || W2.cols() != 2 * d ||
        b2.size() != d || w.size() != d) {
      throw std::invalid_argument("RelationModel: inconsistent parameter shapes");
    }
  }
};

enum class UnaryMode { kSoftmax, kMax, kMean, kNone };

inline const char* to_string(UnaryMode mode) {
  switch (mode) {
    case UnaryMode::kSoftmax: return "softmax";
    case UnaryMode::kMax: return "max";
    case UnaryMode::kMean: return "mean";
    case UnaryMode::kNone: return "none";
  }
  return "?";
}

inline UnaryMode unary_mode_from_string(const std::string& s) {
  if (s == "softmax") return UnaryMode::kSoftmax;
  if (s == "max") return UnaryMode::kMax;
  if (s == "mean") return UnaryMode::kMean;
  if (s == "none") return UnaryMode::kNone;
  throw std::invalid_argument("unknown unary mode: " + s);
}

inline void check_pair_dims(const FeatureVector& f, const FeatureVector& g,
                            const RelationModel& model) {
  if (f.size() != g.size() || f.size() != model.dim()) {
    throw std::invalid_argument("relation scorer: feature dimension mismatch");
  }
}

// Gated embedding of a feature pair:
//   tanh(W1 [f, g] + b1) .* sigmoid(W2 [f, g] + b2) + (f + g) / 2.
// Order-sensitive: the concatenation is [f, g], not symmetrized.
inline FeatureVector embed_pair(const FeatureVector& f, const FeatureVector& g,
                                const RelationModel& model) {
  check_pair_dims(f, g, model);
  const int d = model.dim();
  Eigen::VectorXd z(2 * d);
  z << f, g;
  const Eigen::ArrayXd t = (model.W1 * z + model.b1).array().tanh();
  const Eigen::ArrayXd s = 1.0 / (1.0 + (-(model.W2 * z + model.b2)).array().exp());
  return (t * s).matrix() + 0.5 * (f + g);
}

// Scalar relation score r(f, g) = w . embed_pair(f, g) + b.
inline double relation_score(const FeatureVector& f, const FeatureVector& g,
                             const RelationModel& model) {
  return model.w.dot(embed_pair(f, g, model)) + model.b;
}

// Relation scores of one item against every item of the negative bag,
// order preserved.
inline Eigen::VectorXd unary_scores(const FeatureVector& e, const Bag& negative_bag,
                                    const RelationModel& model) {
  if (negative_bag.items.empty()) {
    throw std::invalid_argument("unary_scores: negative bag is empty");
  }
  Eigen::VectorXd u(negative_bag.size());
  for (int j = 0; j < negative_bag.size(); ++j) {
    u[j] = relation_score(e, negative_bag.items[j], model);
  }
  return u;
}

// Exponential-weighted average sum_k u_k exp(nu u_k) / sum_k exp(nu u_k),
// computed with max-subtraction. nu = 0 is the mean; nu -> inf approaches the
// max. MAX and MEAN are the two limits as fixed modes; NONE is identically 0.
inline double aggregate_unary(const Eigen::VectorXd& u, double nu, UnaryMode mode) {
  if (mode == UnaryMode::kNone) return 0.0;
  if (u.size() == 0) throw std::invalid_argument("aggregate_unary: empty score vector");
  switch (mode) {
    case UnaryMode::kMax: return u.maxCoeff();
    case UnaryMode::kMean: return u.mean();
    default: break;
  }
  nu = std::max(nu, 0.0);
  const double shift = u.maxCoeff();
  const Eigen::ArrayXd weights = ((u.array() - shift) * nu).exp();
  return (u.array() * weights).sum() / weights.sum();
}

inline double cosine_similarity(const FeatureVector& f, const FeatureVector& g) {
  if (f.size() != g.size()) {
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  }
  const double nf = f.norm();
  const double ng = g.norm();
  if (nf == 0.0 || ng == 0.0) return 0.0;  // convention for degenerate vectors
  return f.dot(g) / (nf * ng);
}

// Provider base bound to one episode. Memoizes pairwise values keyed by
// (bag_i, item_p, bag_j, item_q) with bag_i > bag_j and counts unique
// evaluations. Concurrent queries are safe; a key races at most into one
// stored value because the scorer is deterministic.
class LazyPotentialProvider : public PotentialProvider {
 public:
  explicit LazyPotentialProvider(const Episode& episode)
      : episode_(&episode), total_possible_(count_pairwise_total(episode)) {}

  double pairwise(int bag_i, int item_p, int bag_j, int item_q) final {
    if (bag_i <= bag_j) {
      throw std::invalid_argument("pairwise: non-canonical bag order (need bag_i > bag_j)");
    }
    const std::uint64_t key = pack_key(bag_i, item_p, bag_j, item_q);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = memo_.find(key);
      if (it != memo_.end()) return it->second;
    }
    const double value =
        compute_pairwise(episode_->positive_bags[bag_i].items[item_p],
                         episode_->positive_bags[bag_j].items[item_q]);
    std::lock_guard<std::mutex> lock(mutex_);
    auto [it, inserted] = memo_.emplace(key, value);
    if (inserted) ++evaluated_;
    return it->second;
  }

  double unary(int bag, int item) final {
    if (!episode_->negative_bag.has_value()) return 0.0;
    return compute_unary(episode_->positive_bags[bag].items[item], *episode_->negative_bag);
  }

  std::int64_t pairwise_evaluated() const final {
    std::lock_guard<std::mutex> lock(mutex_);
    return evaluated_;
  }

  std::int64_t pairwise_total_possible() const final { return total_possible_; }

  const Episode& episode() const { return *episode_; }

 protected:
  virtual double compute_pairwise(const FeatureVector& f, const FeatureVector& g) const = 0;
  virtual double compute_unary(const FeatureVector& e, const Bag& negative_bag) const = 0;

 private:
  static std::uint64_t pack_key(int bag_i, int item_p, int bag_j, int item_q) {
    return (static_cast<std::uint64_t>(bag_i) << 48) |
           (static_cast<std::uint64_t>(item_p & 0xffff) << 32) |
           (static_cast<std::uint64_t>(bag_j & 0xffff) << 16) |
           static_cast<std::uint64_t>(item_q & 0xffff);
  }

  const Episode* episode_;
  std::int64_t total_possible_;
  mutable std::mutex mutex_;
  std::unordered_map<std::uint64_t, double> memo_;
  std::int64_t evaluated_ = 0;
};

// Learned potentials: pairwise psi^P = -r_theta(f, g); unary psi^U aggregates
// r_beta scores against the negative bag under the configured mode. theta and
// beta are independently trained models.
class ModelPotentialProvider : public LazyPotentialProvider {
 public:
  ModelPotentialProvider(const Episode& episode, RelationModel pairwise_model,
                         std::optional<RelationModel> unary_model = std::nullopt,
                         UnaryMode unary_mode = UnaryMode::kNone)
      : LazyPotentialProvider(episode),
        pairwise_model_(std::move(pairwise_model)),
        unary_model_(std::move(unary_model)),
        unary_mode_(unary_mode) {
    pairwise_model_.check_shapes();
    if (unary_mode_ != UnaryMode::kNone && !unary_model_.has_value()) {
      throw std::invalid_argument("ModelPotentialProvider: unary mode requires a unary model");
    }
    if (unary_model_) unary_model_->check_shapes();
  }

  const RelationModel& pairwise_model() const { return pairwise_model_; }

 protected:
  double compute_pairwise(const FeatureVector& f, const FeatureVector& g) const override {
    return -relation_score(f, g, pairwise_model_);
  }

  double compute_unary(const FeatureVector& e, const Bag& negative_bag) const override {
    if (unary_mode_ == UnaryMode::kNone) return 0.0;
    const double nu = unary_model_->nu.value_or(1.0);
    return aggregate_unary(unary_scores(e, negative_bag, *unary_model_), nu, unary_mode_);
  }

 private:
  RelationModel pairwise_model_;
  std::optional<RelationModel> unary_model_;
  UnaryMode unary_mode_;
};

// Fixed-metric baseline: pairwise potential -cos(f, g), unary aggregates
// cosine scores under the configured mode. Zero vectors score 0.
class CosinePotentialProvider : public LazyPotentialProvider {
 public:
  explicit CosinePotentialProvider(const Episode& episode,
                                   UnaryMode unary_mode = UnaryMode::kNone, double nu = 1.0)
      : LazyPotentialProvider(episode), unary_mode_(unary_mode), nu_(nu) {}

 protected:
  double compute_pairwise(const FeatureVector& f, const FeatureVector& g) const override {
    return -cosine_similarity(f, g);
  }

  double compute_unary(const FeatureVector& e, const Bag& negative_bag) const override {
    if (unary_mode_ == UnaryMode::kNone) return 0.0;
    Eigen::VectorXd u(negative_bag.size());
    for (int j = 0; j < negative_bag.size(); ++j) {
      u[j] = cosine_similarity(e, negative_bag.items[j]);
    }
    return aggregate_unary(u, nu_, unary_mode_);
  }

 private:
  UnaryMode unary_mode_;
  double nu_;
};

inline std::unique_ptr<PotentialProvider> make_cosine_provider(
    const Episode& episode, UnaryMode unary_mode = UnaryMode::kNone, double nu = 1.0) {
  return std::make_unique<CosinePotentialProvider>(episode, unary_mode, nu);
}

// Convenience wrappers matching the free-function view of the provider ops.

inline double pairwise_potential(PotentialProvider& provider, int bag_i, int item_p,
                                 int bag_j, int item_q) {
  return provider.pairwise(bag_i, item_p, bag_j, item_q);
}

inline double unary_potential(const FeatureVector& e, const std::optional<Bag>& negative_bag,
                              const RelationModel& model, UnaryMode mode) {
  if (mode == UnaryMode::kNone || !negative_bag.has_value() || negative_bag->items.empty()) {
    return 0.0;
  }
  return aggregate_unary(unary_scores(e, *negative_bag, model), model.nu.value_or(1.0), mode);
}

}  // namespace cofind
