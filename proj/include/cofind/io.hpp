#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cofind/core.hpp"
#include "cofind/potentials.hpp"
#include "cofind/synth.hpp"

// JSON serialization: episode files, JSON-lines datasets with a provenance
// header, and relation-model files. Doubles are emitted with shortest
// round-trip precision, so save/load is value-exact.

namespace cofind {

using json = nlohmann::json;

namespace io_detail {

inline json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Eigen::VectorXd vector_from_json(const json& arr, const std::string& field) {
  if (!arr.is_array()) throw std::invalid_argument(field + ": expected an array");
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw std::invalid_argument(field + ": expected numbers");
    v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  }
  return v;
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& rows, const std::string& field) {
  if (!rows.is_array() || rows.empty()) {
    throw std::invalid_argument(field + ": expected a non-empty array of rows");
  }
  const std::size_t cols = rows[0].size();
  Eigen::MatrixXd m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].is_array() || rows[r].size() != cols) {
      throw std::invalid_argument(field + ": ragged rows");
    }
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = rows[r][c].get<double>();
  }
  return m;
}

}  // namespace io_detail

inline json bag_to_json(const Bag& bag) {
  json j;
  json features = json::array();
  for (const FeatureVector& item : bag.items) features.push_back(io_detail::vector_to_json(item));
  j["features"] = std::move(features);
  if (bag.labels) {
    json labels = json::array();
    for (const ItemLabel& label : *bag.labels) labels.push_back(label.class_id);
    j["labels"] = std::move(labels);
  }
  return j;
}

inline Bag bag_from_json(const json& j, int dim) {
  if (!j.is_object() || !j.contains("features")) {
    throw std::invalid_argument("bag: expected an object with a 'features' array");
  }
  Bag bag;
  for (const json& item : j.at("features")) {
    FeatureVector v = io_detail::vector_from_json(item, "bag.features");
    if (v.size() != dim) {
      throw std::invalid_argument("bag: feature dimension " + std::to_string(v.size()) +
                                  " does not match dim " + std::to_string(dim));
    }
    bag.items.push_back(std::move(v));
  }
  if (bag.items.empty()) throw std::invalid_argument("bag: must contain at least one item");
  if (j.contains("labels")) {
    std::vector<ItemLabel> labels;
    for (const json& label : j.at("labels")) labels.push_back(ItemLabel{label.get<int>()});
    if (labels.size() != bag.items.size()) {
      throw std::invalid_argument("bag: labels length does not match items");
    }
    bag.labels = std::move(labels);
  }
  return bag;
}

inline json episode_to_json(const Episode& episode) {
  json j;
  j["dim"] = episode.dim();
  json bags = json::array();
  for (const Bag& bag : episode.positive_bags) bags.push_back(bag_to_json(bag));
  j["positive_bags"] = std::move(bags);
  if (episode.negative_bag) j["negative_bag"] = bag_to_json(*episode.negative_bag);
  if (episode.target_class) j["target_class"] = *episode.target_class;
  if (episode.num_classes_sampled) j["num_classes_sampled"] = *episode.num_classes_sampled;
  return j;
}

inline Episode episode_from_json(const json& j) {
  if (!j.is_object() || !j.contains("dim") || !j.contains("positive_bags")) {
    throw std::invalid_argument("episode: expected an object with 'dim' and 'positive_bags'");
  }
  const int dim = j.at("dim").get<int>();
  if (dim < 1) throw std::invalid_argument("episode: dim must be >= 1");
  Episode episode;
  for (const json& bag : j.at("positive_bags")) {
    episode.positive_bags.push_back(bag_from_json(bag, dim));
  }
  if (episode.positive_bags.empty()) {
    throw std::invalid_argument("episode: needs at least one positive bag");
  }
  if (j.contains("negative_bag")) episode.negative_bag = bag_from_json(j.at("negative_bag"), dim);
  if (j.contains("target_class")) episode.target_class = j.at("target_class").get<int>();
  if (j.contains("num_classes_sampled")) {
    episode.num_classes_sampled = j.at("num_classes_sampled").get<int>();
  }
  return episode;
}

inline void save_episode(const Episode& episode, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << episode_to_json(episode).dump(2) << '\n';
}

inline Episode load_episode(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return episode_from_json(j);
}

// --- relation model ---------------------------------------------------------

inline json model_to_json(const RelationModel& model) {
  json j;
  j["dim"] = model.dim();
  j["W1"] = io_detail::matrix_to_json(model.W1);
  j["W2"] = io_detail::matrix_to_json(model.W2);
  j["b1"] = io_detail::vector_to_json(model.b1);
  j["b2"] = io_detail::vector_to_json(model.b2);
  j["w"] = io_detail::vector_to_json(model.w);
  j["b"] = model.b;
  if (model.nu) j["nu"] = *model.nu;
  return j;
}

inline RelationModel model_from_json(const json& j) {
  for (const char* field : {"dim", "W1", "W2", "b1", "b2", "w", "b"}) {
    if (!j.contains(field)) {
      throw std::invalid_argument(std::string("model: missing field '") + field + "'");
    }
  }
  RelationModel model;
  model.W1 = io_detail::matrix_from_json(j.at("W1"), "W1");
  model.W2 = io_detail::matrix_from_json(j.at("W2"), "W2");
  model.b1 = io_detail::vector_from_json(j.at("b1"), "b1");
  model.b2 = io_detail::vector_from_json(j.at("b2"), "b2");
  model.w = io_detail::vector_from_json(j.at("w"), "w");
  model.b = j.at("b").get<double>();
  if (j.contains("nu")) model.nu = j.at("nu").get<double>();
  const int dim = j.at("dim").get<int>();
  if (model.dim() != dim) throw std::invalid_argument("model: dim field does not match shapes");
  model.check_shapes();
  return model;
}

inline void save_model(const RelationModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << model_to_json(model).dump(2) << '\n';
}

inline RelationModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return model_from_json(j);
}

// --- datasets (JSON lines, one episode per line after a header) -------------

inline json generator_config_to_json(const GeneratorConfig& config) {
  json j;
  j["dim"] = config.dim;
  j["num_train_classes"] = config.num_train_classes;
  j["num_test_classes"] = config.num_test_classes;
  j["prototype_scale"] = config.prototype_scale;
  j["noise_sigma"] = config.noise_sigma;
  j["num_bags"] = config.num_bags;
  j["bag_size"] = config.bag_size;
  j["negative_bag_size"] = config.negative_bag_size;
  j["m_range"] = json::array({config.m_range.min, config.m_range.max});
  j["seed"] = config.seed;
  return j;
}

inline GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig config;
  config.dim = j.value("dim", config.dim);
  config.num_train_classes = j.value("num_train_classes", config.num_train_classes);
  config.num_test_classes = j.value("num_test_classes", config.num_test_classes);
  config.prototype_scale = j.value("prototype_scale", config.prototype_scale);
  config.noise_sigma = j.value("noise_sigma", config.noise_sigma);
  config.num_bags = j.value("num_bags", config.num_bags);
  config.bag_size = j.value("bag_size", config.bag_size);
  config.negative_bag_size = j.value("negative_bag_size", config.negative_bag_size);
  if (j.contains("m_range")) {
    config.m_range = IntRange{j.at("m_range")[0].get<int>(), j.at("m_range")[1].get<int>()};
  }
  config.seed = j.value("seed", config.seed);
  return config;
}

struct Dataset {
  GeneratorConfig config;
  std::string split = "test";
  std::vector<Episode> episodes;
};

inline void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  json header;
  header["generator_config"] = generator_config_to_json(dataset.config);
  header["split"] = dataset.split;
  header["episodes"] = dataset.episodes.size();
  out << header.dump() << '\n';
  for (const Episode& episode : dataset.episodes) {
    out << episode_to_json(episode).dump() << '\n';
  }
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  Dataset dataset;
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty dataset file");
  ++line_no;
  try {
    const json header = json::parse(line);
    if (!header.contains("generator_config")) {
      throw std::invalid_argument("missing 'generator_config' header");
    }
    dataset.config = generator_config_from_json(header.at("generator_config"));
    dataset.split = header.value("split", dataset.split);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ":1: bad header: " + e.what());
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      dataset.episodes.push_back(episode_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (dataset.episodes.back().dim() != dataset.config.dim) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": episode dim does not match dataset header");
    }
  }
  return dataset;
}

}  // namespace cofind
