#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cofind/core.hpp"
#include "cofind/inference.hpp"
#include "cofind/io.hpp"
#include "cofind/potentials.hpp"
#include "cofind/synth.hpp"

// Benchmark harness: per-method success-rate statistics with confidence
// intervals, eta grid search, plot-data emission, and the one-shot
// nearest-relation evaluation.

namespace cofind {

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;  // 1.96 * s / sqrt(n), normal approximation
};

inline ConfidenceInterval confidence_interval(std::span<const double> samples) {
  if (samples.size() < 2) {
    throw std::invalid_argument("confidence_interval: need at least 2 samples");
  }
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= n;
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  const double stddev = std::sqrt(ss / (n - 1.0));
  return ConfidenceInterval{mean, 1.96 * stddev / std::sqrt(n)};
}

enum class Method {
  kGreedy,
  kExhaustive,
  kLoopyBp,
  kIcm,
  kUnaryOnly,
  kPairwiseOnly,
  kCosineGreedy,
  kCosinePairwiseOnly,
};

inline const char* to_string(Method method) {
  switch (method) {
    case Method::kGreedy: return "greedy";
    case Method::kExhaustive: return "exhaustive";
    case Method::kLoopyBp: return "loopy-bp";
    case Method::kIcm: return "icm";
    case Method::kUnaryOnly: return "unary-only";
    case Method::kPairwiseOnly: return "pairwise-only";
    case Method::kCosineGreedy: return "cosine-greedy";
    case Method::kCosinePairwiseOnly: return "cosine-pairwise-only";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : {Method::kGreedy, Method::kExhaustive, Method::kLoopyBp, Method::kIcm,
                   Method::kUnaryOnly, Method::kPairwiseOnly, Method::kCosineGreedy,
                   Method::kCosinePairwiseOnly}) {
    if (s == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown method: " + s);
}

inline bool method_uses_cosine(Method method) {
  return method == Method::kCosineGreedy || method == Method::kCosinePairwiseOnly;
}

inline bool method_ignores_unary(Method method) {
  return method == Method::kPairwiseOnly || method == Method::kCosinePairwiseOnly;
}

struct BenchConfig {
  int k = 300;
  double eta = 0.0;
  UnaryMode unary_mode = UnaryMode::kSoftmax;
  std::uint64_t seed = 0;
  int icm_restarts = 8;
  int bp_max_iters = 200;
  double bp_damping = 0.5;
  double bp_tol = 1e-6;
  std::int64_t exhaustive_cap = 1'000'000;
};

// Trained models used by the learned-potential methods. unary may be absent
// when only pairwise information is benchmarked.
struct ModelSet {
  std::optional<RelationModel> pairwise;
  std::optional<RelationModel> unary;
};

// Fresh provider for one episode under one method's potential choice.
inline std::unique_ptr<PotentialProvider> make_method_provider(Method method,
                                                               const Episode& episode,
                                                               const ModelSet& models,
                                                               const BenchConfig& config) {
  const UnaryMode mode = method_ignores_unary(method) ? UnaryMode::kNone : config.unary_mode;
  if (method_uses_cosine(method)) {
    return std::make_unique<CosinePotentialProvider>(episode, mode);
  }
  if (!models.pairwise) {
    throw std::invalid_argument(std::string("method '") + to_string(method) +
                                "' requires a pairwise model");
  }
  std::optional<RelationModel> unary;
  if (mode != UnaryMode::kNone) {
    if (!models.unary) {
      throw std::invalid_argument(std::string("method '") + to_string(method) +
                                  "' requires a unary model under mode " + to_string(mode));
    }
    unary = models.unary;
  }
  return std::make_unique<ModelPotentialProvider>(episode, *models.pairwise, std::move(unary),
                                                  mode);
}

// Dispatches one episode through the requested inference algorithm.
// episode_index seeds the ICM restarts so runs stay reproducible.
inline InferenceResult run_method(Method method, const Episode& episode,
                                  PotentialProvider& provider, const BenchConfig& config,
                                  std::uint64_t episode_index = 0) {
  const double eta = method_ignores_unary(method) ? 0.0 : config.eta;
  switch (method) {
    case Method::kGreedy:
    case Method::kCosineGreedy:
    case Method::kPairwiseOnly:
    case Method::kCosinePairwiseOnly:
      return greedy_infer(episode, provider, BeamConfig(config.k, eta));
    case Method::kExhaustive:
      return exhaustive_infer(episode, provider, eta, config.exhaustive_cap);
    case Method::kLoopyBp:
      return loopy_bp_infer(episode, provider, eta, config.bp_max_iters, config.bp_damping,
                            config.bp_tol);
    case Method::kIcm:
      return icm_infer(episode, provider, eta, config.icm_restarts,
                       config.seed ^ (0x9e3779b97f4a7c15ULL * (episode_index + 1)));
    case Method::kUnaryOnly:
      return unary_only_infer(episode, provider, eta);
  }
  throw std::logic_error("run_method: unhandled method");
}

// One inference run on one episode, with instrumentation.
struct EpisodeRecord {
  std::string method;
  std::size_t episode_index = 0;
  Selection selection;
  double energy = 0.0;
  double success = 0.0;
  double wall_seconds = 0.0;
  std::int64_t pairwise_evaluated = 0;
  std::int64_t pairwise_total_possible = 0;
  int iterations = 0;
};

struct MethodStats {
  std::string method;
  int episodes = 0;
  double success_mean = 0.0;
  double success_ci95 = 0.0;
  double energy_mean = 0.0;
  double time_mean_seconds = 0.0;
  double pairwise_fraction_mean = 0.0;
  bool skipped = false;  // e.g. exhaustive beyond its cap
};

struct BenchmarkReport {
  std::vector<MethodStats> rows;
  std::vector<EpisodeRecord> records;
};

// Runs every requested method over the whole dataset with fresh instrumented
// providers per episode. Deterministic given seeds, except wall times.
inline BenchmarkReport run_benchmark(std::span<const Episode> episodes, const ModelSet& models,
                                     std::span<const Method> methods,
                                     const BenchConfig& config) {
  if (episodes.empty()) throw std::invalid_argument("run_benchmark: no episodes");
  BenchmarkReport report;
  for (const Method method : methods) {
    MethodStats stats;
    stats.method = to_string(method);
    std::vector<double> successes, energies, times, fractions;
    std::vector<EpisodeRecord> method_records;
    bool skipped = false;
    for (std::size_t idx = 0; idx < episodes.size(); ++idx) {
      const Episode& episode = episodes[idx];
      auto provider = make_method_provider(method, episode, models, config);
      InferenceResult result;
      const auto start = std::chrono::steady_clock::now();
      try {
        result = run_method(method, episode, *provider, config, idx);
      } catch (const std::runtime_error&) {
        // exhaustive beyond its cap: mark the whole row skipped
        skipped = true;
        break;
      }
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

      EpisodeRecord record;
      record.method = stats.method;
      record.episode_index = idx;
      record.selection = result.selection;
      record.energy = result.energy;
      record.success = success_rate(result.selection, episode);
      record.wall_seconds = elapsed.count();
      record.pairwise_evaluated = provider->pairwise_evaluated();
      record.pairwise_total_possible = provider->pairwise_total_possible();
      record.iterations = result.iterations;
      successes.push_back(record.success);
      energies.push_back(record.energy);
      times.push_back(record.wall_seconds);
      fractions.push_back(record.pairwise_total_possible > 0
                              ? static_cast<double>(record.pairwise_evaluated) /
                                    static_cast<double>(record.pairwise_total_possible)
                              : 0.0);
      method_records.push_back(std::move(record));
    }
    if (skipped || successes.empty()) {
      stats.skipped = true;
    } else {
      for (EpisodeRecord& record : method_records) report.records.push_back(std::move(record));
      const auto ci = successes.size() >= 2 ? confidence_interval(successes)
                                            : ConfidenceInterval{successes.front(), 0.0};
      stats.episodes = static_cast<int>(successes.size());
      stats.success_mean = ci.mean;
      stats.success_ci95 = ci.half_width;
      for (double e : energies) stats.energy_mean += e;
      stats.energy_mean /= energies.size();
      for (double t : times) stats.time_mean_seconds += t;
      stats.time_mean_seconds /= times.size();
      for (double f : fractions) stats.pairwise_fraction_mean += f;
      stats.pairwise_fraction_mean /= fractions.size();
    }
    report.rows.push_back(std::move(stats));
  }
  return report;
}

using ProviderFactory = std::function<std::unique_ptr<PotentialProvider>(const Episode&)>;

// Picks the eta from the grid that maximizes mean success rate on the
// validation episodes; ties go to the smaller eta.
inline double grid_search_eta(std::span<const Episode> validation, const ProviderFactory& factory,
                              Method method, std::span<const double> grid,
                              BenchConfig config = {}) {
  if (grid.empty()) throw std::invalid_argument("grid_search_eta: empty grid");
  std::vector<double> sorted_grid(grid.begin(), grid.end());
  std::sort(sorted_grid.begin(), sorted_grid.end());
  double best_eta = sorted_grid.front();
  double best_success = -1.0;
  for (const double eta : sorted_grid) {
    config.eta = eta;
    double mean = 0.0;
    for (std::size_t idx = 0; idx < validation.size(); ++idx) {
      auto provider = factory(validation[idx]);
      const auto result = run_method(method, validation[idx], *provider, config, idx);
      mean += success_rate(result.selection, validation[idx]);
    }
    mean /= static_cast<double>(validation.size());
    if (mean > best_success) {
      best_success = mean;
      best_eta = eta;
    }
  }
  return best_eta;
}

// --- report output -----------------------------------------------------------

inline void write_report_csv(const BenchmarkReport& report, std::ostream& out) {
  out << "method,episodes,success_mean,success_ci95,energy_mean,time_mean_seconds,"
         "pairwise_fraction_mean,status\n";
  for (const MethodStats& row : report.rows) {
    out << row.method << ',' << row.episodes << ',' << row.success_mean << ','
        << row.success_ci95 << ',' << row.energy_mean << ',' << row.time_mean_seconds << ','
        << row.pairwise_fraction_mean << ',' << (row.skipped ? "skipped" : "ok") << '\n';
  }
}

inline void write_report_csv(const BenchmarkReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.precision(17);
  write_report_csv(report, out);
}

// Plot data mirroring the runtime-vs-accuracy figure axes.
inline void write_runtime_vs_accuracy_csv(const BenchmarkReport& report,
                                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.precision(17);
  out << "method,mean_time,mean_success\n";
  for (const MethodStats& row : report.rows) {
    if (row.skipped) continue;
    out << row.method << ',' << row.time_mean_seconds << ',' << row.success_mean << '\n';
  }
}

inline json record_to_json(const EpisodeRecord& record) {
  json j;
  j["method"] = record.method;
  j["episode"] = record.episode_index;
  j["selection"] = record.selection;
  j["energy"] = record.energy;
  j["success_rate"] = record.success;
  j["wall_time_seconds"] = record.wall_seconds;
  j["pairwise_evaluated"] = record.pairwise_evaluated;
  j["pairwise_total_possible"] = record.pairwise_total_possible;
  j["iterations"] = record.iterations;
  return j;
}

inline void write_records_jsonl(const BenchmarkReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const EpisodeRecord& record : report.records) {
    out << record_to_json(record).dump() << '\n';
  }
}

// --- one-shot evaluation ------------------------------------------------------

// A way-count mini training set of singleton classes plus one labeled query.
struct OneShotEpisode {
  std::vector<FeatureVector> support;
  std::vector<int> support_labels;
  FeatureVector query;
  int query_label = 0;
};

inline OneShotEpisode make_one_shot_episode(const GeneratorConfig& config,
                                            const std::vector<FeatureVector>& prototypes,
                                            Split split, std::mt19937_64& rng, int way = 5) {
  std::vector<int> pool = class_pool(config, split);
  if (static_cast<int>(pool.size()) < way) {
    throw std::invalid_argument("make_one_shot_episode: class pool smaller than way count");
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  OneShotEpisode episode;
  for (int i = 0; i < way; ++i) {
    episode.support.push_back(
        detail::sample_item(prototypes[pool[i]], config.noise_sigma, rng));
    episode.support_labels.push_back(pool[i]);
  }
  std::uniform_int_distribution<int> pick(0, way - 1);
  const int q = pick(rng);
  episode.query = detail::sample_item(prototypes[pool[q]], config.noise_sigma, rng);
  episode.query_label = pool[q];
  return episode;
}

// Predicted label = label of the support item with the highest relation score
// to the query (first index wins ties). Returns accuracy with a 95% CI over
// episodes.
inline ConfidenceInterval one_shot_eval(
    const std::function<double(const FeatureVector&, const FeatureVector&)>& scorer,
    std::span<const OneShotEpisode> episodes) {
  if (episodes.size() < 2) throw std::invalid_argument("one_shot_eval: need >= 2 episodes");
  std::vector<double> hits;
  hits.reserve(episodes.size());
  for (const OneShotEpisode& episode : episodes) {
    if (episode.support.empty() || episode.support.size() != episode.support_labels.size()) {
      throw std::invalid_argument("one_shot_eval: malformed episode");
    }
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < episode.support.size(); ++j) {
      const double s = scorer(episode.query, episode.support[j]);
      if (s > best_score) {
        best_score = s;
        best = static_cast<int>(j);
      }
    }
    hits.push_back(episode.support_labels[best] == episode.query_label ? 1.0 : 0.0);
  }
  return confidence_interval(hits);
}

inline ConfidenceInterval one_shot_eval(const RelationModel& model,
                                        std::span<const OneShotEpisode> episodes) {
  return one_shot_eval(
      [&model](const FeatureVector& query, const FeatureVector& support) {
        return relation_score(query, support, model);
      },
      episodes);
}

}  // namespace cofind
