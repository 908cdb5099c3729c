// Command-line front end: dataset generation, potential training, single
// episode inference, benchmarking, eta grid search, and one-shot evaluation.

#include <chrono>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cofind/cofind.hpp"

namespace {

using namespace cofind;

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> grid;
  std::stringstream ss(csv);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) grid.push_back(std::stod(token));
  }
  return grid;
}

std::vector<double> default_eta_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 24; ++i) grid.push_back(0.1 * i);
  return grid;
}

struct GeneratorFlags {
  GeneratorConfig config;
  std::string split = "test";
  int episodes = 100;

  void attach(CLI::App* cmd) {
    cmd->add_option("--dim", config.dim, "feature dimension");
    cmd->add_option("--train-classes", config.num_train_classes, "number of train classes");
    cmd->add_option("--test-classes", config.num_test_classes, "number of test classes");
    cmd->add_option("--prototype-scale", config.prototype_scale, "scale of class prototypes");
    cmd->add_option("--noise-sigma", config.noise_sigma, "within-class standard deviation");
    cmd->add_option("--bags,-N", config.num_bags, "positive bags per episode");
    cmd->add_option("--bag-size,-B", config.bag_size, "items per positive bag");
    cmd->add_option("--negative-bag-size", config.negative_bag_size,
                    "negative bag size (0 = none)");
    cmd->add_option("--m-min", config.m_range.min, "minimum classes per episode");
    cmd->add_option("--m-max", config.m_range.max, "maximum classes per episode");
    cmd->add_option("--seed", config.seed, "generator seed");
    cmd->add_option("--split", split, "class split to sample from (train|test)");
    cmd->add_option("--episodes", episodes, "number of episodes");
  }
};

int cmd_generate(const GeneratorFlags& flags, const std::string& output) {
  Dataset dataset;
  dataset.config = flags.config;
  dataset.split = flags.split;
  dataset.episodes =
      generate_dataset(flags.config, split_from_string(flags.split), flags.episodes);
  save_dataset(dataset, output);
  std::cout << "wrote " << dataset.episodes.size() << " episodes to " << output << "\n";
  return 0;
}

int cmd_train(const std::string& role_name, const std::string& dataset_path,
              const TrainConfig& config, const std::string& mode_name,
              const std::string& output, const std::string& trace_path) {
  const Dataset dataset = load_dataset(dataset_path);
  if (dataset.episodes.empty()) throw std::runtime_error("training dataset is empty");
  const ModelRole role =
      role_name == "pairwise" ? ModelRole::kPairwise
      : role_name == "unary"  ? ModelRole::kUnary
                              : throw std::runtime_error("unknown role: " + role_name);
  const UnaryMode mode = unary_mode_from_string(mode_name);
  const TrainResult result = train(role, dataset.episodes, config, mode);
  save_model(result.model, output);
  if (!trace_path.empty()) {
    std::ofstream trace(trace_path);
    if (!trace) throw std::runtime_error("cannot open for writing: " + trace_path);
    trace.precision(17);
    trace << "step,loss,learning_rate\n";
    for (const TraceRow& row : result.trace) {
      trace << row.step << ',' << row.loss << ',' << row.learning_rate << '\n';
    }
  }
  std::cout << "trained " << role_name << " model (" << config.num_steps << " steps) -> "
            << output << "\n";
  if (!result.trace.empty()) {
    std::cout << "final loss " << result.trace.back().loss << "\n";
  }
  return 0;
}

ModelSet load_models(const std::string& pairwise_path, const std::string& unary_path) {
  ModelSet models;
  if (!pairwise_path.empty()) models.pairwise = load_model(pairwise_path);
  if (!unary_path.empty()) models.unary = load_model(unary_path);
  return models;
}

int cmd_infer(const std::string& episode_path, const std::string& method_name,
              const ModelSet& models, const BenchConfig& config, const std::string& output) {
  const Episode episode = load_episode(episode_path);
  const Method method = method_from_string(method_name);
  auto provider = make_method_provider(method, episode, models, config);
  const auto start = std::chrono::steady_clock::now();
  const InferenceResult result = run_method(method, episode, *provider, config);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

  json j;
  j["method"] = method_name;
  j["selection"] = result.selection;
  j["energy"] = result.energy;
  j["wall_time_seconds"] = elapsed.count();
  j["pairwise_evaluated"] = provider->pairwise_evaluated();
  j["pairwise_total_possible"] = provider->pairwise_total_possible();
  j["iterations"] = result.iterations;
  if (episode.target_class && episode.labeled()) {
    j["success_rate"] = success_rate(result.selection, episode);
  }
  const std::string text = j.dump(2);
  if (output.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream out(output);
    if (!out) throw std::runtime_error("cannot open for writing: " + output);
    out << text << "\n";
    std::cout << "wrote " << output << "\n";
  }
  return 0;
}

int cmd_bench(const std::string& dataset_path, const std::vector<std::string>& method_names,
              const ModelSet& models, BenchConfig config, const std::string& eta_grid_csv,
              const std::string& output, const std::string& jsonl_path,
              const std::string& plot_path) {
  const Dataset dataset = load_dataset(dataset_path);
  if (dataset.episodes.empty()) throw std::runtime_error("benchmark dataset is empty");
  std::vector<Method> methods;
  for (const std::string& name : method_names) methods.push_back(method_from_string(name));

  if (!eta_grid_csv.empty()) {
    const std::vector<double> grid = parse_grid(eta_grid_csv);
    const ProviderFactory factory = [&](const Episode& episode) {
      return make_method_provider(methods.front(), episode, models, config);
    };
    config.eta = grid_search_eta(dataset.episodes, factory, methods.front(), grid, config);
    std::cout << "grid-searched eta = " << config.eta << "\n";
  }

  const BenchmarkReport report = run_benchmark(dataset.episodes, models, methods, config);
  write_report_csv(report, output);
  std::cout << "wrote " << output << "\n";
  if (!jsonl_path.empty()) {
    write_records_jsonl(report, jsonl_path);
    std::cout << "wrote " << jsonl_path << "\n";
  }
  if (!plot_path.empty()) {
    write_runtime_vs_accuracy_csv(report, plot_path);
    std::cout << "wrote " << plot_path << "\n";
  }
  for (const MethodStats& row : report.rows) {
    std::cout << row.method << ": ";
    if (row.skipped) {
      std::cout << "skipped\n";
      continue;
    }
    std::cout << "success " << row.success_mean << " +/- " << row.success_ci95 << ", energy "
              << row.energy_mean << ", time " << row.time_mean_seconds << "s, pairwise "
              << row.pairwise_fraction_mean << "\n";
  }
  return 0;
}

int cmd_gridsearch(const std::string& dataset_path, const std::string& method_name,
                   const ModelSet& models, BenchConfig config, const std::string& grid_csv,
                   const std::string& output) {
  const Dataset dataset = load_dataset(dataset_path);
  if (dataset.episodes.empty()) throw std::runtime_error("validation dataset is empty");
  const Method method = method_from_string(method_name);
  const std::vector<double> grid =
      grid_csv.empty() ? default_eta_grid() : parse_grid(grid_csv);
  const ProviderFactory factory = [&](const Episode& episode) {
    return make_method_provider(method, episode, models, config);
  };
  const double eta = grid_search_eta(dataset.episodes, factory, method, grid, config);
  std::cout << "eta_star " << eta << "\n";
  if (!output.empty()) {
    std::ofstream out(output);
    if (!out) throw std::runtime_error("cannot open for writing: " + output);
    out.precision(17);
    out << eta << "\n";
  }
  return 0;
}

int cmd_oneshot(const GeneratorFlags& flags, const std::string& model_path, bool use_cosine,
                int way, const std::string& output) {
  const auto prototypes = make_class_prototypes(flags.config);
  std::mt19937_64 rng(flags.config.seed);
  std::vector<OneShotEpisode> episodes;
  episodes.reserve(flags.episodes);
  for (int i = 0; i < flags.episodes; ++i) {
    episodes.push_back(make_one_shot_episode(flags.config, prototypes,
                                             split_from_string(flags.split), rng, way));
  }
  ConfidenceInterval ci;
  if (use_cosine) {
    ci = one_shot_eval(
        [](const FeatureVector& q, const FeatureVector& s) { return cosine_similarity(q, s); },
        episodes);
  } else {
    if (model_path.empty()) throw std::runtime_error("oneshot: need --model or --cosine");
    ci = one_shot_eval(load_model(model_path), episodes);
  }
  std::cout << "one-shot accuracy " << ci.mean << " +/- " << ci.half_width << " over "
            << episodes.size() << " episodes\n";
  if (!output.empty()) {
    std::ofstream out(output);
    if (!out) throw std::runtime_error("cannot open for writing: " + output);
    out.precision(17);
    out << "accuracy,ci95,episodes\n" << ci.mean << ',' << ci.half_width << ','
        << episodes.size() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cofind: common item selection across bags via energy minimization"};
  app.require_subcommand(1);

  // generate
  GeneratorFlags gen_flags;
  std::string gen_output = "dataset.jsonl";
  auto* generate = app.add_subcommand("generate", "sample a synthetic episode dataset");
  gen_flags.attach(generate);
  generate->add_option("--output,-o", gen_output, "output JSONL path");

  // train
  std::string train_role = "pairwise";
  std::string train_dataset;
  std::string train_mode = "softmax";
  std::string train_output = "model.json";
  std::string train_trace;
  TrainConfig train_config;
  auto* train_cmd = app.add_subcommand("train", "train a relation model by SGD");
  train_cmd->add_option("--role", train_role, "pairwise|unary")->required();
  train_cmd->add_option("--dataset", train_dataset, "training dataset (JSONL)")->required();
  train_cmd->add_option("--unary-mode", train_mode, "softmax|max|mean|none");
  train_cmd->add_option("--steps", train_config.num_steps, "SGD steps");
  train_cmd->add_option("--lr", train_config.learning_rate, "initial learning rate");
  train_cmd->add_option("--decay", train_config.decay_factor, "learning rate decay factor");
  train_cmd->add_option("--decay-every", train_config.decay_every, "steps between decays");
  train_cmd->add_option("--batch", train_config.batch_episodes, "episodes per step");
  train_cmd->add_option("--init-scale", train_config.init_scale, "weight init scale");
  train_cmd->add_option("--pair-budget", train_config.pair_budget, "pairs kept per episode");
  train_cmd->add_option("--seed", train_config.seed, "training seed");
  train_cmd->add_option("--output,-o", train_output, "model output path");
  train_cmd->add_option("--trace", train_trace, "loss trace CSV path");

  // shared inference flags
  std::string pairwise_model_path, unary_model_path;
  BenchConfig bench_config;
  std::string unary_mode_name = "softmax";

  // infer
  std::string infer_episode, infer_method = "greedy", infer_output;
  auto* infer_cmd = app.add_subcommand("infer", "run one inference method on one episode");
  infer_cmd->add_option("--episode", infer_episode, "episode JSON file")->required();
  infer_cmd->add_option("--method", infer_method, "inference method");
  infer_cmd->add_option("--pairwise-model", pairwise_model_path, "pairwise model file");
  infer_cmd->add_option("--unary-model", unary_model_path, "unary model file");
  infer_cmd->add_option("--k", bench_config.k, "beam width");
  infer_cmd->add_option("--eta", bench_config.eta, "unary weight");
  infer_cmd->add_option("--unary-mode", unary_mode_name, "softmax|max|mean|none");
  infer_cmd->add_option("--seed", bench_config.seed, "seed (ICM restarts)");
  infer_cmd->add_option("--icm-restarts", bench_config.icm_restarts, "ICM restarts");
  infer_cmd->add_option("--output,-o", infer_output, "result JSON path (default stdout)");

  // bench
  std::string bench_dataset, bench_output = "report.csv", bench_jsonl, bench_plot,
              bench_eta_grid;
  std::vector<std::string> bench_methods{"greedy"};
  auto* bench_cmd = app.add_subcommand("bench", "benchmark methods over a dataset");
  bench_cmd->add_option("--dataset", bench_dataset, "episode dataset (JSONL)")->required();
  bench_cmd->add_option("--methods", bench_methods, "methods to run")->delimiter(',');
  bench_cmd->add_option("--pairwise-model", pairwise_model_path, "pairwise model file");
  bench_cmd->add_option("--unary-model", unary_model_path, "unary model file");
  bench_cmd->add_option("--k", bench_config.k, "beam width");
  bench_cmd->add_option("--eta", bench_config.eta, "unary weight");
  bench_cmd->add_option("--eta-grid", bench_eta_grid,
                        "comma-separated eta grid (grid-search before benchmarking)");
  bench_cmd->add_option("--unary-mode", unary_mode_name, "softmax|max|mean|none");
  bench_cmd->add_option("--seed", bench_config.seed, "seed (ICM restarts)");
  bench_cmd->add_option("--icm-restarts", bench_config.icm_restarts, "ICM restarts");
  bench_cmd->add_option("--exhaustive-cap", bench_config.exhaustive_cap,
                        "max search-space size for exhaustive");
  bench_cmd->add_option("--output,-o", bench_output, "report CSV path");
  bench_cmd->add_option("--jsonl", bench_jsonl, "per-episode records JSONL path");
  bench_cmd->add_option("--plot", bench_plot, "runtime_vs_accuracy.csv path");

  // gridsearch
  std::string gs_dataset, gs_method = "greedy", gs_grid, gs_output;
  auto* gs_cmd = app.add_subcommand("gridsearch", "grid-search eta on a validation dataset");
  gs_cmd->add_option("--dataset", gs_dataset, "validation dataset (JSONL)")->required();
  gs_cmd->add_option("--method", gs_method, "inference method");
  gs_cmd->add_option("--grid", gs_grid, "comma-separated eta values (default 0..2.4 step 0.1)");
  gs_cmd->add_option("--pairwise-model", pairwise_model_path, "pairwise model file");
  gs_cmd->add_option("--unary-model", unary_model_path, "unary model file");
  gs_cmd->add_option("--k", bench_config.k, "beam width");
  gs_cmd->add_option("--unary-mode", unary_mode_name, "softmax|max|mean|none");
  gs_cmd->add_option("--seed", bench_config.seed, "seed (ICM restarts)");
  gs_cmd->add_option("--output,-o", gs_output, "write eta_star to this path");

  // oneshot
  GeneratorFlags oneshot_flags;
  std::string oneshot_model, oneshot_output;
  bool oneshot_cosine = false;
  int oneshot_way = 5;
  auto* oneshot_cmd = app.add_subcommand("oneshot", "one-shot nearest-relation evaluation");
  oneshot_flags.attach(oneshot_cmd);
  oneshot_cmd->add_option("--model", oneshot_model, "pairwise model file");
  oneshot_cmd->add_flag("--cosine", oneshot_cosine, "use cosine similarity instead of a model");
  oneshot_cmd->add_option("--way", oneshot_way, "number of support classes");
  oneshot_cmd->add_option("--output,-o", oneshot_output, "accuracy CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    bench_config.unary_mode = unary_mode_from_string(unary_mode_name);
    // without a unary model an unrequested softmax default would only error
    const bool mode_given = infer_cmd->count("--unary-mode") > 0 ||
                            bench_cmd->count("--unary-mode") > 0 ||
                            gs_cmd->count("--unary-mode") > 0;
    if (unary_model_path.empty() && !mode_given) {
      bench_config.unary_mode = UnaryMode::kNone;
    }
    if (generate->parsed()) return cmd_generate(gen_flags, gen_output);
    if (train_cmd->parsed()) {
      return cmd_train(train_role, train_dataset, train_config, train_mode, train_output,
                       train_trace);
    }
    if (infer_cmd->parsed()) {
      return cmd_infer(infer_episode, infer_method,
                       load_models(pairwise_model_path, unary_model_path), bench_config,
                       infer_output);
    }
    if (bench_cmd->parsed()) {
      return cmd_bench(bench_dataset, bench_methods,
                       load_models(pairwise_model_path, unary_model_path), bench_config,
                       bench_eta_grid, bench_output, bench_jsonl, bench_plot);
    }
    if (gs_cmd->parsed()) {
      return cmd_gridsearch(gs_dataset, gs_method,
                            load_models(pairwise_model_path, unary_model_path), bench_config,
                            gs_grid, gs_output);
    }
    if (oneshot_cmd->parsed()) {
      return cmd_oneshot(oneshot_flags, oneshot_model, oneshot_cosine, oneshot_way,
                         oneshot_output);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}
