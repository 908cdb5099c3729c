#include "doctest.h"

#include <array>
#include <random>
#include <sstream>

#include "cofind/bench.hpp"
#include "cofind/training.hpp"
#include "test_support.hpp"

using namespace cofind;

namespace {

GeneratorConfig separable_config() {
  GeneratorConfig config;
  config.dim = 8;
  config.num_train_classes = 12;
  config.num_test_classes = 8;
  config.noise_sigma = 0.05;
  config.prototype_scale = 1.0;
  config.num_bags = 4;
  config.bag_size = 3;
  config.negative_bag_size = 4;
  config.m_range = {3, 5};
  config.seed = 2024;
  return config;
}

}  // namespace

TEST_CASE("confidence_interval formula") {
  const std::array<double, 3> constant{0.5, 0.5, 0.5};
  const auto flat = confidence_interval(constant);
  CHECK(flat.mean == doctest::Approx(0.5));
  CHECK(flat.half_width == doctest::Approx(0.0));

  const std::array<double, 2> pair{0.0, 1.0};
  const auto ci = confidence_interval(pair);
  // s = 0.7071, half width = 1.96 * 0.7071 / sqrt(2) = 0.98
  CHECK(ci.mean == doctest::Approx(0.5));
  CHECK(ci.half_width == doctest::Approx(0.98).epsilon(1e-9));

  // scaling all samples scales both outputs
  const std::array<double, 4> base{0.1, 0.4, 0.2, 0.9};
  std::array<double, 4> scaled2 = base;
  for (double& s : scaled2) s *= -3.0;
  const auto b = confidence_interval(base);
  const auto s = confidence_interval(scaled2);
  CHECK(s.mean == doctest::Approx(-3.0 * b.mean));
  CHECK(s.half_width == doctest::Approx(3.0 * b.half_width));

  const std::array<double, 1> lone{1.0};
  CHECK_THROWS_AS(confidence_interval(lone), std::invalid_argument);
}

TEST_CASE("method name round-trip and dispatch validation") {
  for (Method m : {Method::kGreedy, Method::kExhaustive, Method::kLoopyBp, Method::kIcm,
                   Method::kUnaryOnly, Method::kPairwiseOnly, Method::kCosineGreedy,
                   Method::kCosinePairwiseOnly}) {
    CHECK(method_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(method_from_string("trws"), std::invalid_argument);

  const auto episodes = generate_dataset(separable_config(), Split::kTest, 1);
  ModelSet no_models;
  BenchConfig config;
  CHECK_THROWS_AS(make_method_provider(Method::kGreedy, episodes[0], no_models, config),
                  std::invalid_argument);
}

TEST_CASE("grid_search_eta tie and selection rules") {
  const GeneratorConfig gen = separable_config();
  auto episodes = generate_dataset(gen, Split::kTest, 20);
  const ProviderFactory cosine_factory = [](const Episode& episode) {
    return make_cosine_provider(episode, UnaryMode::kSoftmax);
  };

  // singleton grid
  BenchConfig config;
  config.k = 20;
  const std::array<double, 1> zero{0.0};
  CHECK(grid_search_eta(episodes, cosine_factory, Method::kGreedy, zero, config) == 0.0);

  // without negative bags every eta performs identically: smallest eta wins
  GeneratorConfig no_neg = gen;
  no_neg.negative_bag_size = 0;
  const auto plain = generate_dataset(no_neg, Split::kTest, 10);
  const std::array<double, 3> grid{1.5, 0.5, 1.0};
  CHECK(grid_search_eta(plain, cosine_factory, Method::kGreedy, grid, config) == 0.5);

  // on episodes where the negative bag matters, the pick agrees with a direct
  // per-eta success measurement
  GeneratorConfig decoys = gen;
  decoys.m_range = {3, 4};
  decoys.negative_bag_size = 12;
  decoys.noise_sigma = 0.25;
  decoys.prototype_scale = 0.75;
  const auto hard = generate_dataset(decoys, Split::kTest, 30);
  const std::array<double, 2> two{0.0, 1.0};
  const double picked = grid_search_eta(hard, cosine_factory, Method::kGreedy, two, config);
  double best_eta = -1.0, best_success = -1.0;
  for (double eta : two) {
    BenchConfig c = config;
    c.eta = eta;
    double mean = 0.0;
    for (std::size_t i = 0; i < hard.size(); ++i) {
      auto provider = cosine_factory(hard[i]);
      mean += success_rate(run_method(Method::kGreedy, hard[i], *provider, c, i).selection,
                           hard[i]);
    }
    mean /= hard.size();
    if (mean > best_success) {
      best_success = mean;
      best_eta = eta;
    }
  }
  CHECK(picked == best_eta);
  CHECK(best_eta == 1.0);  // the unary term helps on decoy-heavy episodes
}

TEST_CASE("run_benchmark aggregates per-method statistics") {
  const GeneratorConfig gen = separable_config();
  const auto episodes = generate_dataset(gen, Split::kTest, 12);

  BenchConfig config;
  config.k = 81;  // full beam for 4 bags of 3
  config.eta = 0.5;
  config.unary_mode = UnaryMode::kNone;  // no trained unary model in this run
  const std::vector<Method> methods{Method::kCosineGreedy, Method::kExhaustive,
                                    Method::kCosinePairwiseOnly};
  ModelSet models;
  models.pairwise = RelationModel::zeros(gen.dim);  // exhaustive runs on a zero model

  const BenchmarkReport report = run_benchmark(episodes, models, methods, config);
  REQUIRE(report.rows.size() == methods.size());
  CHECK(report.rows[0].method == "cosine-greedy");
  CHECK(report.rows[0].episodes == 12);
  CHECK(report.rows[0].success_mean >= 0.0);
  CHECK(report.rows[0].success_mean <= 1.0);
  CHECK(report.rows[0].success_ci95 >= 0.0);

  // exhaustive touches every pairwise potential
  CHECK(report.rows[1].pairwise_fraction_mean == doctest::Approx(1.0));
  // per-episode records: one per (method, episode)
  CHECK(report.records.size() == methods.size() * episodes.size());
}

TEST_CASE("cosine greedy at full beam matches cosine exhaustive energies") {
  const GeneratorConfig gen = separable_config();
  const auto episodes = generate_dataset(gen, Split::kTest, 8);
  BenchConfig config;
  config.k = 81;
  config.eta = 0.7;
  ModelSet no_models;
  const std::vector<Method> methods{Method::kCosineGreedy};
  const auto report = run_benchmark(episodes, no_models, methods, config);

  for (std::size_t i = 0; i < episodes.size(); ++i) {
    auto provider = make_cosine_provider(episodes[i], UnaryMode::kSoftmax);
    const auto exact = exhaustive_infer(episodes[i], *provider, config.eta);
    CHECK(report.records[i].energy == doctest::Approx(exact.energy).epsilon(1e-9));
  }
}

TEST_CASE("exhaustive rows beyond the cap are marked skipped") {
  GeneratorConfig gen = separable_config();
  gen.num_bags = 8;
  gen.bag_size = 8;
  const auto episodes = generate_dataset(gen, Split::kTest, 2);
  BenchConfig config;
  config.exhaustive_cap = 1000;  // 8^8 >> 1000
  config.unary_mode = UnaryMode::kNone;
  const std::vector<Method> methods{Method::kExhaustive, Method::kCosineGreedy};
  ModelSet models;
  models.pairwise = RelationModel::zeros(gen.dim);
  const auto report = run_benchmark(episodes, models, methods, config);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].skipped);
  CHECK_FALSE(report.rows[1].skipped);
  // skipped rows contribute no per-episode records
  for (const EpisodeRecord& record : report.records) CHECK(record.method == "cosine-greedy");
}

TEST_CASE("unary-only without negative bags degrades to a fixed per-bag pick") {
  GeneratorConfig gen = separable_config();
  gen.negative_bag_size = 0;
  gen.num_bags = 8;
  gen.bag_size = 5;
  gen.m_range = {5, 8};
  const auto episodes = generate_dataset(gen, Split::kTest, 200);

  BenchConfig config;
  config.eta = 1.0;
  config.unary_mode = UnaryMode::kNone;
  ModelSet models;
  models.pairwise = RelationModel::zeros(gen.dim);
  const std::vector<Method> methods{Method::kUnaryOnly};
  const auto report = run_benchmark(episodes, models, methods, config);

  // with all-zero unaries the method always picks item 0, so its success is
  // the average target share of a random bag slot
  double expected = 0.0;
  for (const Episode& episode : episodes) {
    int target = 0, total = 0;
    for (const Bag& bag : episode.positive_bags) {
      for (const ItemLabel& label : *bag.labels) {
        target += label.class_id == *episode.target_class;
        ++total;
      }
    }
    expected += static_cast<double>(target) / total;
  }
  expected /= episodes.size();
  CHECK(report.rows[0].success_mean == doctest::Approx(expected).epsilon(0.2));
  CHECK(report.rows[0].success_mean < 0.6);  // nowhere near informed selection
}

TEST_CASE("lazy greedy pairwise fraction is below one on N=4 instances") {
  GeneratorConfig gen = separable_config();
  gen.num_bags = 4;
  gen.bag_size = 6;
  const auto episodes = generate_dataset(gen, Split::kTest, 6);
  BenchConfig config;
  config.k = 2;
  config.eta = 0.0;
  ModelSet no_models;
  const std::vector<Method> methods{Method::kCosinePairwiseOnly};
  const auto report = run_benchmark(episodes, no_models, methods, config);
  CHECK(report.rows[0].pairwise_fraction_mean < 1.0);
  CHECK(report.rows[0].pairwise_fraction_mean > 0.0);
}

TEST_CASE("report CSV is deterministic apart from wall-time columns") {
  const GeneratorConfig gen = separable_config();
  const auto episodes = generate_dataset(gen, Split::kTest, 6);
  BenchConfig config;
  config.k = 10;
  config.eta = 0.5;
  config.seed = 77;
  ModelSet no_models;
  const std::vector<Method> methods{Method::kCosineGreedy, Method::kCosinePairwiseOnly};

  const auto strip_time = [](const BenchmarkReport& report) {
    std::ostringstream out;
    out.precision(17);
    write_report_csv(report, out);
    std::string text = out.str(), cleaned;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      // drop column 5 (time_mean_seconds)
      std::istringstream cells(line);
      std::string cell;
      int idx = 0;
      while (std::getline(cells, cell, ',')) {
        if (idx++ == 5) continue;
        cleaned += cell + ',';
      }
      cleaned += '\n';
    }
    return cleaned;
  };

  const auto r1 = run_benchmark(episodes, no_models, methods, config);
  const auto r2 = run_benchmark(episodes, no_models, methods, config);
  CHECK(strip_time(r1) == strip_time(r2));
}

TEST_CASE("one-shot evaluation follows the argmax-relation rule") {
  GeneratorConfig gen = separable_config();
  gen.noise_sigma = 0.0;  // queries sit exactly on the prototypes
  const auto prototypes = make_class_prototypes(gen);
  std::mt19937_64 rng(5);
  std::vector<OneShotEpisode> episodes;
  for (int i = 0; i < 50; ++i) {
    episodes.push_back(make_one_shot_episode(gen, prototypes, Split::kTest, rng));
  }

  // negative distance scorer nails exact-prototype queries
  const auto exact = one_shot_eval(
      [](const FeatureVector& q, const FeatureVector& s) { return -(q - s).norm(); },
      episodes);
  CHECK(exact.mean == doctest::Approx(1.0));

  // constant scorer always predicts support item 0
  gen.noise_sigma = 0.05;
  const auto noisy_protos = make_class_prototypes(gen);
  std::mt19937_64 rng2(6);
  std::vector<OneShotEpisode> many;
  for (int i = 0; i < 400; ++i) {
    many.push_back(make_one_shot_episode(gen, noisy_protos, Split::kTest, rng2));
  }
  const auto constant = one_shot_eval(
      [](const FeatureVector&, const FeatureVector&) { return 1.0; }, many);
  CHECK(constant.mean == doctest::Approx(0.2).epsilon(0.35));  // 1/way in expectation

  OneShotEpisode malformed;
  malformed.query = FeatureVector::Zero(2);
  std::vector<OneShotEpisode> bad{malformed, malformed};
  CHECK_THROWS_AS(one_shot_eval([](const FeatureVector&, const FeatureVector&) { return 0.0; },
                                bad),
                  std::invalid_argument);
}

TEST_CASE("trained relation model solves one-shot episodes on separable data") {
  GeneratorConfig gen = separable_config();
  gen.dim = 8;
  gen.num_train_classes = 64;  // class diversity forces a relational rule
  gen.noise_sigma = 0.05;
  gen.num_bags = 4;
  gen.bag_size = 3;
  gen.negative_bag_size = 0;
  const auto train_episodes = generate_dataset(gen, Split::kTrain, 128);

  TrainConfig config;
  config.num_steps = 2500;
  config.decay_every = 1000;
  config.batch_episodes = 2;
  config.seed = 17;
  const TrainResult trained = train(ModelRole::kPairwise, train_episodes, config);

  const auto prototypes = make_class_prototypes(gen);
  std::mt19937_64 rng(8);
  std::vector<OneShotEpisode> episodes;
  for (int i = 0; i < 200; ++i) {
    episodes.push_back(make_one_shot_episode(gen, prototypes, Split::kTest, rng));
  }
  const auto ci = one_shot_eval(trained.model, episodes);
  CHECK(ci.mean > 0.9);
}
