#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cofind/core.hpp"
#include "cofind/potentials.hpp"

// SGD training of the pairwise and unary logistic losses with hand-derived
// analytic gradients. No autodiff dependency; the gradient of every parameter
// (including the unary temperature nu) is verified against central finite
// differences in the test suite.

namespace cofind {

struct TrainConfig {
  // The gated scorer trains from a cold start (relational structure only
  // reaches the loss through second-order terms), which needs an aggressive
  // initial rate; 0.01-scale rates leave the model near chance.
  double learning_rate = 0.5;
  double decay_factor = 0.5;  // in (0, 1]
  int decay_every = 2000;     // steps between decays
  int num_steps = 10000;
  int batch_episodes = 4;
  std::uint64_t seed = 0;
  double init_scale = 0.2;  // uniform(-init_scale, init_scale) weight init
  int pair_budget = 512;    // cross-bag pairs kept per episode

  void validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (decay_factor <= 0.0 || decay_factor > 1.0) {
      throw std::invalid_argument("TrainConfig: decay_factor must be in (0, 1]");
    }
    if (decay_every < 1) throw std::invalid_argument("TrainConfig: decay_every must be >= 1");
    if (num_steps < 0) throw std::invalid_argument("TrainConfig: num_steps must be >= 0");
    if (batch_episodes < 1) throw std::invalid_argument("TrainConfig: batch_episodes must be >= 1");
    if (pair_budget < 1) throw std::invalid_argument("TrainConfig: pair_budget must be >= 1");
  }
};

// One supervised cross-bag pair; label is the ground-truth relation sign.
struct PairSample {
  FeatureVector f;
  FeatureVector g;
  int label = 1;  // +1 related, -1 unrelated
};

// Gradient container mirroring RelationModel. nu is a plain double and stays
// 0 for parameters or modes that do not use it.
struct RelationGradient {
  Eigen::MatrixXd W1;
  Eigen::MatrixXd W2;
  Eigen::VectorXd b1;
  Eigen::VectorXd b2;
  Eigen::VectorXd w;
  double b = 0.0;
  double nu = 0.0;

  static RelationGradient zeros(int d) {
    RelationGradient g;
    g.W1 = Eigen::MatrixXd::Zero(d, 2 * d);
    g.W2 = Eigen::MatrixXd::Zero(d, 2 * d);
    g.b1 = Eigen::VectorXd::Zero(d);
    g.b2 = Eigen::VectorXd::Zero(d);
    g.w = Eigen::VectorXd::Zero(d);
    return g;
  }

  RelationGradient& operator+=(const RelationGradient& o) {
    W1 += o.W1;
    W2 += o.W2;
    b1 += o.b1;
    b2 += o.b2;
    w += o.w;
    b += o.b;
    nu += o.nu;
    return *this;
  }

  RelationGradient& operator*=(double c) {
    W1 *= c;
    W2 *= c;
    b1 *= c;
    b2 *= c;
    w *= c;
    b *= c;
    nu *= c;
    return *this;
  }
};

// log(1 + exp(-m)) without overflow for large |m|.
inline double logistic_loss(double margin) {
  if (margin > 0.0) return std::log1p(std::exp(-margin));
  return -margin + std::log1p(std::exp(margin));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace detail {

// Forward pass of the scorer with intermediates kept for backprop.
struct ScoreTape {
  Eigen::VectorXd z;    // [f, g]
  Eigen::ArrayXd t;     // tanh(W1 z + b1)
  Eigen::ArrayXd s;     // sigmoid(W2 z + b2)
  Eigen::VectorXd emb;  // t .* s + (f + g) / 2
  double score = 0.0;
};

inline ScoreTape score_forward(const FeatureVector& f, const FeatureVector& g,
                               const RelationModel& model) {
  check_pair_dims(f, g, model);
  const int d = model.dim();
  ScoreTape tape;
  tape.z.resize(2 * d);
  tape.z << f, g;
  tape.t = (model.W1 * tape.z + model.b1).array().tanh();
  tape.s = 1.0 / (1.0 + (-(model.W2 * tape.z + model.b2)).array().exp());
  tape.emb = (tape.t * tape.s).matrix() + 0.5 * (f + g);
  tape.score = model.w.dot(tape.emb) + model.b;
  return tape;
}

// Accumulates d(score)/d(params) scaled by `coeff` into `grad`.
inline void score_backward(const ScoreTape& tape, const RelationModel& model, double coeff,
                           RelationGradient& grad) {
  grad.w += coeff * tape.emb;
  grad.b += coeff;
  const Eigen::ArrayXd demb = coeff * model.w.array();
  const Eigen::VectorXd g1 = (demb * tape.s * (1.0 - tape.t.square())).matrix();
  const Eigen::VectorXd g2 = (demb * tape.t * tape.s * (1.0 - tape.s)).matrix();
  grad.W1.noalias() += g1 * tape.z.transpose();
  grad.W2.noalias() += g2 * tape.z.transpose();
  grad.b1 += g1;
  grad.b2 += g2;
}

// Softmax-weighted aggregate with the weight vector kept for backprop.
struct UnaryTape {
  Eigen::VectorXd u;  // raw scores against the negative bag
  Eigen::VectorXd p;  // aggregation weights (softmax mode)
  double value = 0.0;
  int argmax = 0;
};

inline UnaryTape unary_forward(const Eigen::VectorXd& u, double nu, UnaryMode mode) {
  UnaryTape tape;
  tape.u = u;
  switch (mode) {
    case UnaryMode::kNone:
      tape.value = 0.0;
      break;
    case UnaryMode::kMax: {
      tape.value = u.maxCoeff(&tape.argmax);
      break;
    }
    case UnaryMode::kMean:
      tape.p = Eigen::VectorXd::Constant(u.size(), 1.0 / u.size());
      tape.value = u.mean();
      break;
    case UnaryMode::kSoftmax: {
      const double nu_eff = std::max(nu, 0.0);
      const double shift = u.maxCoeff();
      Eigen::ArrayXd e = ((u.array() - shift) * nu_eff).exp();
      tape.p = (e / e.sum()).matrix();
      tape.value = tape.p.dot(u);
      break;
    }
  }
  return tape;
}

}  // namespace detail

// Mean binary logistic loss over relation-score margins.
inline double pairwise_loss(std::span<const PairSample> samples, const RelationModel& model) {
  if (samples.empty()) throw std::invalid_argument("pairwise_loss: no samples");
  double total = 0.0;
  for (const PairSample& sample : samples) {
    total += logistic_loss(sample.label * relation_score(sample.f, sample.g, model));
  }
  return total / static_cast<double>(samples.size());
}

inline RelationGradient pairwise_grad(std::span<const PairSample> samples,
                                      const RelationModel& model) {
  if (samples.empty()) throw std::invalid_argument("pairwise_grad: no samples");
  RelationGradient grad = RelationGradient::zeros(model.dim());
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  for (const PairSample& sample : samples) {
    const auto tape = detail::score_forward(sample.f, sample.g, model);
    // d/dr log(1 + exp(-y r)) = -y * sigmoid(-y r)
    const double coeff = -sample.label * sigmoid(-sample.label * tape.score) * inv_n;
    detail::score_backward(tape, model, coeff, grad);
  }
  return grad;
}

// Unary episode loss: mean logistic loss of the aggregated negative-bag
// relation against the extended ground-truth relation R(e, negative bag).
inline double unary_loss(const Episode& episode, const RelationModel& model, UnaryMode mode) {
  if (!episode.negative_bag.has_value() || episode.negative_bag->items.empty()) {
    throw std::invalid_argument("unary_loss: episode has no negative bag");
  }
  const Bag& neg = *episode.negative_bag;
  if (!neg.labeled()) throw std::invalid_argument("unary_loss: negative bag is unlabeled");
  const double nu = model.nu.value_or(1.0);
  double total = 0.0;
  std::int64_t count = 0;
  for (const Bag& bag : episode.positive_bags) {
    if (!bag.labeled()) throw std::invalid_argument("unary_loss: episode is unlabeled");
    for (int e = 0; e < bag.size(); ++e) {
      const int rel = relation_to_bag((*bag.labels)[e], neg);
      const double psi = aggregate_unary(unary_scores(bag.items[e], neg, model), nu, mode);
      total += logistic_loss(rel * psi);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

inline RelationGradient unary_grad(const Episode& episode, const RelationModel& model,
                                   UnaryMode mode) {
  if (!episode.negative_bag.has_value() || episode.negative_bag->items.empty()) {
    throw std::invalid_argument("unary_grad: episode has no negative bag");
  }
  const Bag& neg = *episode.negative_bag;
  if (!neg.labeled()) throw std::invalid_argument("unary_grad: negative bag is unlabeled");
  const double nu = model.nu.value_or(1.0);

  RelationGradient grad = RelationGradient::zeros(model.dim());
  std::int64_t count = 0;
  for (const Bag& bag : episode.positive_bags) {
    if (!bag.labeled()) throw std::invalid_argument("unary_grad: episode is unlabeled");
    count += bag.size();
  }
  const double inv_n = 1.0 / static_cast<double>(count);

  for (const Bag& bag : episode.positive_bags) {
    for (int e = 0; e < bag.size(); ++e) {
      const int rel = relation_to_bag((*bag.labels)[e], neg);

      std::vector<detail::ScoreTape> tapes(neg.size());
      Eigen::VectorXd u(neg.size());
      for (int j = 0; j < neg.size(); ++j) {
        tapes[j] = detail::score_forward(bag.items[e], neg.items[j], model);
        u[j] = tapes[j].score;
      }
      const auto agg = detail::unary_forward(u, nu, mode);
      if (mode == UnaryMode::kNone) continue;
      // d/dpsi log(1 + exp(-rel psi)) = -rel * sigmoid(-rel psi)
      const double dpsi = -rel * sigmoid(-rel * agg.value) * inv_n;

      if (mode == UnaryMode::kMax) {
        detail::score_backward(tapes[agg.argmax], model, dpsi, grad);
        continue;
      }
      for (int j = 0; j < neg.size(); ++j) {
        double du = agg.p[j];
        if (mode == UnaryMode::kSoftmax) {
          du = agg.p[j] * (1.0 + std::max(nu, 0.0) * (u[j] - agg.value));
        }
        detail::score_backward(tapes[j], model, dpsi * du, grad);
      }
      if (mode == UnaryMode::kSoftmax) {
        // dpsi/dnu = weighted variance of u under the softmax weights
        double var = 0.0;
        for (int j = 0; j < neg.size(); ++j) {
          const double dev = u[j] - agg.value;
          var += agg.p[j] * dev * dev;
        }
        grad.nu += dpsi * var;
      }
    }
  }
  return grad;
}

// All cross-bag pairs of the positive bags with ground-truth relation labels,
// uniformly subsampled down to `budget` when there are more. Pair order is
// canonical (item of the higher-indexed bag first).
inline std::vector<PairSample> sample_training_pairs(const Episode& episode,
                                                     std::mt19937_64& rng, int budget = 512) {
  if (!episode.labeled()) {
    throw std::invalid_argument("sample_training_pairs: episode is unlabeled");
  }
  const int n = episode.num_bags();
  std::vector<PairSample> pairs;
  for (int i = 0; i < n; ++i) {
    const Bag& bi = episode.positive_bags[i];
    for (int j = 0; j < i; ++j) {
      const Bag& bj = episode.positive_bags[j];
      for (int p = 0; p < bi.size(); ++p) {
        for (int q = 0; q < bj.size(); ++q) {
          pairs.push_back(PairSample{bi.items[p], bj.items[q],
                                     relation_label((*bi.labels)[p], (*bj.labels)[q])});
        }
      }
    }
  }
  if (static_cast<int>(pairs.size()) <= budget) return pairs;
  std::vector<std::size_t> idx(pairs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(budget);
  std::sort(idx.begin(), idx.end());
  std::vector<PairSample> subset;
  subset.reserve(budget);
  for (std::size_t i : idx) subset.push_back(std::move(pairs[i]));
  return subset;
}

enum class ModelRole { kPairwise, kUnary };

struct TraceRow {
  int step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  RelationModel model;
  std::vector<TraceRow> trace;
};

inline RelationModel init_relation_model(int d, double init_scale, std::mt19937_64& rng,
                                         ModelRole role) {
  RelationModel model = RelationModel::zeros(d);
  std::uniform_real_distribution<double> dist(-init_scale, init_scale);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < 2 * d; ++c) model.W1(r, c) = dist(rng);
  }
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < 2 * d; ++c) model.W2(r, c) = dist(rng);
  }
  for (int r = 0; r < d; ++r) model.w[r] = dist(rng);
  if (role == ModelRole::kUnary) model.nu = 1.0;
  return model;
}

// SGD with step decay: lr_t = lr * decay^(t / decay_every). Episodes are
// consumed round-robin, batch_episodes per step; nu is clamped to >= 0 after
// each update. Deterministic given (seed, config, episodes).
inline TrainResult train(ModelRole role, std::span<const Episode> episodes,
                         const TrainConfig& config, UnaryMode unary_mode = UnaryMode::kSoftmax) {
  config.validate();
  if (episodes.empty()) throw std::invalid_argument("train: no episodes");
  const int d = episodes.front().dim();
  if (d < 1) throw std::invalid_argument("train: empty episodes");

  std::mt19937_64 rng(config.seed);
  TrainResult out;
  out.model = init_relation_model(d, config.init_scale, rng, role);

  for (int step = 0; step < config.num_steps; ++step) {
    const double lr =
        config.learning_rate * std::pow(config.decay_factor, step / config.decay_every);
    RelationGradient grad = RelationGradient::zeros(d);
    double loss = 0.0;
    for (int t = 0; t < config.batch_episodes; ++t) {
      const Episode& episode =
          episodes[(static_cast<std::size_t>(step) * config.batch_episodes + t) %
                   episodes.size()];
      if (role == ModelRole::kPairwise) {
        const auto samples = sample_training_pairs(episode, rng, config.pair_budget);
        loss += pairwise_loss(samples, out.model);
        grad += pairwise_grad(samples, out.model);
      } else {
        loss += unary_loss(episode, out.model, unary_mode);
        grad += unary_grad(episode, out.model, unary_mode);
      }
    }
    const double inv_b = 1.0 / config.batch_episodes;
    loss *= inv_b;
    grad *= inv_b;
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
    }

    out.model.W1 -= lr * grad.W1;
    out.model.W2 -= lr * grad.W2;
    out.model.b1 -= lr * grad.b1;
    out.model.b2 -= lr * grad.b2;
    out.model.w -= lr * grad.w;
    out.model.b -= lr * grad.b;
    if (role == ModelRole::kUnary) {
      out.model.nu = std::max(0.0, out.model.nu.value_or(1.0) - lr * grad.nu);
    }
    out.trace.push_back(TraceRow{step, loss, lr});
  }
  return out;
}

}  // namespace cofind
