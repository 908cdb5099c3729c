#include "doctest.h"

#include <array>
#include <cmath>
#include <random>
#include <thread>

#include "cofind/core.hpp"
#include "cofind/inference.hpp"
#include "cofind/io.hpp"
#include "cofind/potentials.hpp"
#include "test_support.hpp"

using namespace cofind;

TEST_CASE("embed_pair reduces to the skip connection for zero weights") {
  const RelationModel model = RelationModel::zeros(3);
  FeatureVector f(3), g(3);
  f << 1.0, -2.0, 0.5;
  g << 0.0, 4.0, 0.5;
  const FeatureVector emb = embed_pair(f, g, model);
  CHECK((emb - 0.5 * (f + g)).norm() == doctest::Approx(0.0));

  // f == g makes the skip connection the identity
  const FeatureVector same = embed_pair(f, f, model);
  CHECK((same - f).norm() == doctest::Approx(0.0));
}

TEST_CASE("embed_pair matches a scalar hand evaluation") {
  // d = 1, W1 = [1, 0], everything else zero, f = [1], g = [0]:
  // tanh(1) * sigmoid(0) + (1 + 0) / 2 = 0.5 tanh(1) + 0.5
  RelationModel model = RelationModel::zeros(1);
  model.W1(0, 0) = 1.0;
  FeatureVector f(1), g(1);
  f << 1.0;
  g << 0.0;
  const double expected = 0.5 * std::tanh(1.0) + 0.5;
  CHECK(embed_pair(f, g, model)[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.880797).epsilon(1e-6));
}

TEST_CASE("embed_pair rejects mismatched dimensions") {
  const RelationModel model = RelationModel::zeros(3);
  CHECK_THROWS_AS(embed_pair(FeatureVector::Zero(3), FeatureVector::Zero(2), model),
                  std::invalid_argument);
  CHECK_THROWS_AS(embed_pair(FeatureVector::Zero(4), FeatureVector::Zero(4), model),
                  std::invalid_argument);
}

TEST_CASE("relation_score constant and identity cases") {
  RelationModel model = RelationModel::zeros(2);
  model.b = 0.7;
  CHECK(relation_score(FeatureVector::Random(2), FeatureVector::Random(2), model) ==
        doctest::Approx(0.7));

  RelationModel sum_model = RelationModel::zeros(3);
  sum_model.w = Eigen::VectorXd::Ones(3);
  FeatureVector f(3);
  f << 0.3, -1.2, 2.0;
  CHECK(relation_score(f, f, sum_model) == doctest::Approx(f.sum()).epsilon(1e-12));
}

TEST_CASE("relation_score matches the independent plain-loop oracle") {
  std::mt19937_64 rng(101);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + static_cast<int>(rng() % 6);
    const RelationModel model = test::random_relation_model(d, rng);
    FeatureVector f(d), g(d);
    for (int k = 0; k < d; ++k) {
      f[k] = normal(rng);
      g[k] = normal(rng);
    }
    CHECK(relation_score(f, g, model) ==
          doctest::Approx(test::naive_relation_score(f, g, model)).epsilon(1e-12));
  }
}

TEST_CASE("relation_score is order-sensitive in general") {
  std::mt19937_64 rng(103);
  const RelationModel model = test::random_relation_model(3, rng);
  FeatureVector f(3), g(3);
  f << 1.0, 0.0, -1.0;
  g << 0.5, 2.0, 0.25;
  CHECK(relation_score(f, g, model) != relation_score(g, f, model));
}

TEST_CASE("unary_scores evaluates against every negative item in order") {
  RelationModel model = RelationModel::zeros(2);
  model.b = 0.2;
  Bag neg;
  neg.items.assign(3, FeatureVector::Zero(2));
  const Eigen::VectorXd u = unary_scores(FeatureVector::Zero(2), neg, model);
  REQUIRE(u.size() == 3);
  for (int j = 0; j < 3; ++j) CHECK(u[j] == doctest::Approx(0.2));

  Bag single;
  single.items.assign(1, FeatureVector::Zero(2));
  CHECK(unary_scores(FeatureVector::Zero(2), single, model).size() == 1);

  std::mt19937_64 rng(107);
  const RelationModel random_model = test::random_relation_model(2, rng);
  Bag random_neg;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < 4; ++j) {
    FeatureVector v(2);
    v << normal(rng), normal(rng);
    random_neg.items.push_back(v);
  }
  FeatureVector e(2);
  e << normal(rng), normal(rng);
  const Eigen::VectorXd scores = unary_scores(e, random_neg, random_model);
  for (int j = 0; j < 4; ++j) {
    CHECK(scores[j] ==
          doctest::Approx(test::naive_relation_score(e, random_neg.items[j], random_model))
              .epsilon(1e-12));
  }

  Bag empty;
  CHECK_THROWS_AS(unary_scores(e, empty, random_model), std::invalid_argument);
}

TEST_CASE("aggregate_unary mode boundaries") {
  Eigen::VectorXd u(2);
  u << 0.2, 0.8;
  CHECK(aggregate_unary(u, 0.0, UnaryMode::kSoftmax) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(aggregate_unary(u, 1000.0, UnaryMode::kSoftmax) == doctest::Approx(0.8).epsilon(1e-9));
  CHECK(aggregate_unary(u, 3.0, UnaryMode::kMax) == doctest::Approx(0.8));
  CHECK(aggregate_unary(u, 3.0, UnaryMode::kMean) == doctest::Approx(0.5));
  CHECK(aggregate_unary(u, 3.0, UnaryMode::kNone) == 0.0);

  Eigen::VectorXd v(2);
  v << 1.0, 2.0;
  // (1 e^1 + 2 e^2) / (e^1 + e^2) evaluated independently
  const double expected = (1.0 * std::exp(1.0) + 2.0 * std::exp(2.0)) /
                          (std::exp(1.0) + std::exp(2.0));
  CHECK(aggregate_unary(v, 1.0, UnaryMode::kSoftmax) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(1.73106).epsilon(1e-5));
}

TEST_CASE("aggregate_unary is a weighted average, monotone in nu") {
  std::mt19937_64 rng(109);
  std::uniform_real_distribution<double> dist(-5.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd u(1 + static_cast<int>(rng() % 8));
    for (int k = 0; k < u.size(); ++k) u[k] = dist(rng);
    double prev = -1e300;
    for (double nu : {0.0, 0.25, 1.0, 4.0, 16.0, 64.0}) {
      const double value = aggregate_unary(u, nu, UnaryMode::kSoftmax);
      CHECK(value >= u.minCoeff() - 1e-12);
      CHECK(value <= u.maxCoeff() + 1e-12);
      CHECK(value >= prev - 1e-12);
      prev = value;
    }
    CHECK(aggregate_unary(u, 0.0, UnaryMode::kSoftmax) ==
          doctest::Approx(u.mean()).epsilon(1e-13));
  }
}

TEST_CASE("aggregate_unary stays finite for extreme temperatures") {
  Eigen::VectorXd u(3);
  u << 700.0, -700.0, 100.0;
  const double value = aggregate_unary(u, 1000.0, UnaryMode::kSoftmax);
  CHECK(std::isfinite(value));
  CHECK(value == doctest::Approx(700.0));
}

TEST_CASE("model provider memoizes and counts unique pairwise keys") {
  std::mt19937_64 rng(113);
  const Episode episode = test::make_random_episode({2, 2, 2}, 3, rng);
  RelationModel model = RelationModel::zeros(3);
  model.b = 0.7;
  ModelPotentialProvider provider(episode, model);

  const double v1 = provider.pairwise(1, 0, 0, 1);
  const double v2 = provider.pairwise(1, 0, 0, 1);
  CHECK(v1 == -0.7);
  CHECK(v1 == v2);
  CHECK(provider.pairwise_evaluated() == 1);

  // exhaustive evaluation of N=3 bags of B=2: 3 bag pairs x 4 item pairs
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < i; ++j) {
      for (int p = 0; p < 2; ++p) {
        for (int q = 0; q < 2; ++q) provider.pairwise(i, p, j, q);
      }
    }
  }
  CHECK(provider.pairwise_evaluated() == 12);
  CHECK(provider.pairwise_total_possible() == 12);

  CHECK_THROWS_AS(provider.pairwise(0, 0, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(provider.pairwise(1, 0, 1, 0), std::invalid_argument);
}

TEST_CASE("unary potential is zero without a negative bag or under NONE") {
  std::mt19937_64 rng(127);
  const Episode no_neg = test::make_random_episode({2, 2}, 3, rng);
  const RelationModel theta = test::random_relation_model(3, rng);
  RelationModel beta = test::random_relation_model(3, rng, 0.5, /*with_nu=*/true);

  ModelPotentialProvider provider(no_neg, theta, beta, UnaryMode::kSoftmax);
  CHECK(provider.unary(0, 0) == 0.0);

  const Episode with_neg = test::make_random_episode({2, 2}, 3, rng, 3);
  ModelPotentialProvider none_provider(with_neg, theta);
  CHECK(none_provider.unary(0, 1) == 0.0);

  // constant model aggregates to its own constant under any mode
  RelationModel constant = RelationModel::zeros(3);
  constant.b = 0.2;
  constant.nu = 1.0;
  for (UnaryMode mode : {UnaryMode::kSoftmax, UnaryMode::kMax, UnaryMode::kMean}) {
    ModelPotentialProvider p(with_neg, theta, constant, mode);
    CHECK(p.unary(1, 0) == doctest::Approx(0.2).epsilon(1e-12));
  }
}

TEST_CASE("cosine baseline potential conventions") {
  FeatureVector f(3), g(3);
  f << 1.0, 2.0, -1.0;
  g << -1.0, -2.0, 1.0;
  CHECK(cosine_similarity(f, f) == doctest::Approx(1.0));
  CHECK(cosine_similarity(f, g) == doctest::Approx(-1.0));
  FeatureVector ortho(3);
  ortho << 2.0, -1.0, 0.0;
  CHECK(cosine_similarity(f, ortho) == doctest::Approx(0.0));
  CHECK(cosine_similarity(f, FeatureVector::Zero(3)) == 0.0);

  Episode episode;
  Bag a, b;
  a.items = {f};
  b.items = {f, g};
  episode.positive_bags = {a, b};
  auto provider = make_cosine_provider(episode);
  CHECK(provider->pairwise(1, 0, 0, 0) == doctest::Approx(-1.0));
  CHECK(provider->pairwise(1, 1, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("adding a bias offset shifts potentials without changing the argmin") {
  std::mt19937_64 rng(131);
  const Episode episode = test::make_random_episode({3, 3, 3, 3}, 4, rng);
  const RelationModel model = test::random_relation_model(4, rng);
  RelationModel shifted = model;
  const double delta = 1.25;
  shifted.b += delta;

  ModelPotentialProvider p1(episode, model);
  ModelPotentialProvider p2(episode, shifted);
  for (int p = 0; p < 3; ++p) {
    for (int q = 0; q < 3; ++q) {
      CHECK(p2.pairwise(2, p, 1, q) ==
            doctest::Approx(p1.pairwise(2, p, 1, q) - delta).epsilon(1e-12));
    }
  }

  ModelPotentialProvider g1(episode, model);
  ModelPotentialProvider g2(episode, shifted);
  const auto r1 = greedy_infer(episode, g1, BeamConfig(4, 0.0));
  const auto r2 = greedy_infer(episode, g2, BeamConfig(4, 0.0));
  CHECK(r1.selection == r2.selection);
  // 4 bags: 6 pairwise terms, each shifted by -delta
  CHECK(r2.energy == doctest::Approx(r1.energy - 6.0 * delta).epsilon(1e-9));
}

TEST_CASE("provider tolerates concurrent readers") {
  std::mt19937_64 rng(139);
  const Episode episode = test::make_random_episode({4, 4, 4, 4}, 6, rng, 4);
  const RelationModel theta = test::random_relation_model(6, rng);
  RelationModel beta = test::random_relation_model(6, rng, 0.5, true);
  ModelPotentialProvider provider(episode, theta, beta, UnaryMode::kSoftmax);

  std::vector<std::thread> workers;
  std::array<double, 8> sums{};
  for (int t = 0; t < 8; ++t) {
    workers.emplace_back([&, t] {
      double sum = 0.0;
      for (int round = 0; round < 50; ++round) {
        for (int i = 0; i < 4; ++i) {
          for (int j = 0; j < i; ++j) {
            for (int p = 0; p < 4; ++p) {
              for (int q = 0; q < 4; ++q) sum += provider.pairwise(i, p, j, q);
            }
          }
        }
      }
      sums[t] = sum;
    });
  }
  for (std::thread& w : workers) w.join();
  for (int t = 1; t < 8; ++t) CHECK(sums[t] == sums[0]);
  // every unique key counted exactly once despite the contention
  CHECK(provider.pairwise_evaluated() == provider.pairwise_total_possible());
}

TEST_CASE("config invariants are enforced at construction") {
  CHECK_THROWS_AS(EnergyConfig(-0.1), std::invalid_argument);
  CHECK_THROWS_AS(BeamConfig(0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(BeamConfig(4, -1.0), std::invalid_argument);
}

TEST_CASE("model JSON round-trip is value-exact") {
  std::mt19937_64 rng(137);
  RelationModel model = test::random_relation_model(5, rng, 2.0, /*with_nu=*/true);
  model.W1(0, 0) = 0.1;  // not exactly representable
  model.b = 1.0 / 3.0;
  model.nu = 1e-17;

  const json j = model_to_json(model);
  const RelationModel back = model_from_json(json::parse(j.dump()));
  CHECK(back.W1 == model.W1);
  CHECK(back.W2 == model.W2);
  CHECK(back.b1 == model.b1);
  CHECK(back.b2 == model.b2);
  CHECK(back.w == model.w);
  CHECK(back.b == model.b);
  REQUIRE(back.nu.has_value());
  CHECK(*back.nu == *model.nu);

  RelationModel pairwise_role = test::random_relation_model(2, rng);
  const RelationModel back2 = model_from_json(json::parse(model_to_json(pairwise_role).dump()));
  CHECK_FALSE(back2.nu.has_value());
}
