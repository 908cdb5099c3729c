#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cofind/core.hpp"

// MAP inference over one episode: the greedy join-and-prune beam optimization
// over a binary tree of subproblems, an exhaustive oracle for small
// instances, loopy min-sum belief propagation, and ICM.

namespace cofind {

// A partial selection for the contiguous bag range
// [first_bag, first_bag + items.size()) together with its sub-episode energy
// (all internal pairwise terms plus eta-weighted unaries).
struct BeamEntry {
  int first_bag = 0;
  std::vector<int> items;
  double energy = 0.0;

  int last_bag() const { return first_bag + static_cast<int>(items.size()) - 1; }
};

struct BeamConfig {
  int k = 300;       // beam width, >= 1
  double eta = 0.0;  // unary weight

  BeamConfig() = default;
  BeamConfig(int k_in, double eta_in) : k(k_in), eta(eta_in) {
    if (k < 1) throw std::invalid_argument("BeamConfig: k must be >= 1");
    if (eta < 0.0) throw std::invalid_argument("BeamConfig: eta must be >= 0");
  }
};

struct InferenceResult {
  Selection selection;
  double energy = 0.0;
  int iterations = 0;  // BP iterations / ICM sweeps; 0 for single-pass methods
};

// Episode padded with dummy bags up to the next power of two. Each dummy bag
// holds one neutral item; a wrapping provider pins all its potentials to 0 so
// models never see dummy items. real_bag[i] is false for padding.
struct PaddedEpisode {
  Episode episode;
  std::vector<bool> real_bag;
  int num_real_bags = 0;
};

inline int next_power_of_two(int n) {
  int p = 1;
  while (p < n) p *= 2;
  return p;
}

inline PaddedEpisode pad_to_power_of_two(const Episode& episode) {
  const int n = episode.num_bags();
  if (n < 2) throw std::invalid_argument("pad_to_power_of_two: need at least 2 bags");
  const int padded = next_power_of_two(n);
  PaddedEpisode out;
  out.episode = episode;
  out.num_real_bags = n;
  out.real_bag.assign(padded, true);
  const int d = std::max(episode.dim(), 1);
  for (int i = n; i < padded; ++i) {
    Bag dummy;
    dummy.items.push_back(FeatureVector::Zero(d));
    if (episode.positive_bags.front().labeled()) {
      dummy.labels = std::vector<ItemLabel>{ItemLabel{kBackgroundClassId}};
    }
    out.episode.positive_bags.push_back(std::move(dummy));
    out.real_bag[i] = false;
  }
  return out;
}

// Wraps a provider for a padded episode: any query touching a dummy bag is 0
// and is never forwarded (so it neither hits the model nor the counters).
class PaddedPotentialProvider : public PotentialProvider {
 public:
  PaddedPotentialProvider(PotentialProvider& inner, int num_real_bags)
      : inner_(&inner), num_real_bags_(num_real_bags) {}

  double pairwise(int bag_i, int item_p, int bag_j, int item_q) override {
    if (bag_i <= bag_j) {
      throw std::invalid_argument("pairwise: non-canonical bag order (need bag_i > bag_j)");
    }
    if (bag_i >= num_real_bags_ || bag_j >= num_real_bags_) return 0.0;
    return inner_->pairwise(bag_i, item_p, bag_j, item_q);
  }

  double unary(int bag, int item) override {
    if (bag >= num_real_bags_) return 0.0;
    return inner_->unary(bag, item);
  }

  std::int64_t pairwise_evaluated() const override { return inner_->pairwise_evaluated(); }
  std::int64_t pairwise_total_possible() const override {
    return inner_->pairwise_total_possible();
  }

 private:
  PotentialProvider* inner_;
  int num_real_bags_;
};

// Cartesian product of two child beams over adjacent bag ranges, left-major
// order. Energies are left unset; compute them with combine_energy.
inline std::vector<BeamEntry> join(const std::vector<BeamEntry>& left,
                                   const std::vector<BeamEntry>& right) {
  std::vector<BeamEntry> out;
  out.reserve(left.size() * right.size());
  for (const BeamEntry& l : left) {
    for (const BeamEntry& r : right) {
      if (r.first_bag != l.last_bag() + 1) {
        throw std::invalid_argument("join: child ranges are not adjacent");
      }
      BeamEntry e;
      e.first_bag = l.first_bag;
      e.items.reserve(l.items.size() + r.items.size());
      e.items.insert(e.items.end(), l.items.begin(), l.items.end());
      e.items.insert(e.items.end(), r.items.begin(), r.items.end());
      out.push_back(std::move(e));
    }
  }
  return out;
}

// Energy recursion: child energies plus the sum of pairwise potentials on all
// edges crossing the two fragments, evaluated lazily in canonical order.
inline double combine_energy(const BeamEntry& joined, int left_size, double left_energy,
                             double right_energy, PotentialProvider& provider) {
  const int total = static_cast<int>(joined.items.size());
  double cross = 0.0;
  for (int a = left_size; a < total; ++a) {
    const int bag_a = joined.first_bag + a;
    for (int b = 0; b < left_size; ++b) {
      cross += provider.pairwise(bag_a, joined.items[a], joined.first_bag + b, joined.items[b]);
    }
  }
  return left_energy + right_energy + cross;
}

// The k lowest-energy entries, sorted ascending; ties keep the earlier entry
// of the deterministic input order.
inline std::vector<BeamEntry> prune(std::vector<BeamEntry> entries, int k) {
  if (k < 1) throw std::invalid_argument("prune: k must be >= 1");
  std::stable_sort(entries.begin(), entries.end(),
                   [](const BeamEntry& a, const BeamEntry& b) { return a.energy < b.energy; });
  if (static_cast<int>(entries.size()) > k) entries.resize(k);
  return entries;
}

namespace detail {

// Greedy ascent assuming num_bags is a power of two and the provider already
// handles any padding.
inline std::vector<BeamEntry> greedy_tree(const Episode& episode, PotentialProvider& provider,
                                          const BeamConfig& config) {
  const int n = episode.num_bags();
  std::vector<std::vector<BeamEntry>> beams(n);
  for (int i = 0; i < n; ++i) {
    const Bag& bag = episode.positive_bags[i];
    beams[i].reserve(bag.items.size());
    for (int e = 0; e < bag.size(); ++e) {
      const double u = config.eta == 0.0 ? 0.0 : config.eta * provider.unary(i, e);
      beams[i].push_back(BeamEntry{i, {e}, u});
    }
  }
  while (beams.size() > 1) {
    std::vector<std::vector<BeamEntry>> next;
    next.reserve(beams.size() / 2);
    for (std::size_t i = 0; i + 1 < beams.size(); i += 2) {
      const std::vector<BeamEntry>& left = beams[i];
      const std::vector<BeamEntry>& right = beams[i + 1];
      std::vector<BeamEntry> joined = join(left, right);
      const int left_size = static_cast<int>(left.front().items.size());
      std::size_t idx = 0;
      for (std::size_t li = 0; li < left.size(); ++li) {
        for (std::size_t ri = 0; ri < right.size(); ++ri, ++idx) {
          joined[idx].energy = combine_energy(joined[idx], left_size, left[li].energy,
                                              right[ri].energy, provider);
        }
      }
      next.push_back(prune(std::move(joined), config.k));
    }
    beams = std::move(next);
  }
  return std::move(beams.front());
}

}  // namespace detail

// Greedy divide-and-conquer beam optimization. Pads the episode to a power of
// two, seeds leaf beams with every item of each bag (energy = eta * unary),
// then joins, recomputes energies, and prunes at every internal node. Returns
// the minimum-energy root entry restricted to the real bags.
inline InferenceResult greedy_infer(const Episode& episode, PotentialProvider& provider,
                                    const BeamConfig& config) {
  const int n = episode.num_bags();
  if (n < 2) throw std::invalid_argument("greedy_infer: need at least 2 bags");

  std::vector<BeamEntry> root;
  if (next_power_of_two(n) == n) {
    root = detail::greedy_tree(episode, provider, config);
  } else {
    const PaddedEpisode padded = pad_to_power_of_two(episode);
    PaddedPotentialProvider wrapped(provider, padded.num_real_bags);
    root = detail::greedy_tree(padded.episode, wrapped, config);
  }
  const BeamEntry& best = root.front();  // prune sorts ascending
  InferenceResult result;
  result.selection.assign(best.items.begin(), best.items.begin() + n);
  result.energy = best.energy;
  return result;
}

// Full root beam (restricted to real bags), for diagnostics.
inline std::vector<BeamEntry> greedy_root_beam(const Episode& episode,
                                               PotentialProvider& provider,
                                               const BeamConfig& config) {
  const int n = episode.num_bags();
  if (n < 2) throw std::invalid_argument("greedy_root_beam: need at least 2 bags");
  std::vector<BeamEntry> root;
  if (next_power_of_two(n) == n) {
    root = detail::greedy_tree(episode, provider, config);
  } else {
    const PaddedEpisode padded = pad_to_power_of_two(episode);
    PaddedPotentialProvider wrapped(provider, padded.num_real_bags);
    root = detail::greedy_tree(padded.episode, wrapped, config);
  }
  for (BeamEntry& e : root) e.items.resize(n);
  return root;
}

// Exact global minimum by enumeration, for small instances. Ties resolve to
// the lexicographically first selection.
inline InferenceResult exhaustive_infer(const Episode& episode, PotentialProvider& provider,
                                        double eta, std::int64_t cap = 1'000'000) {
  const int n = episode.num_bags();
  if (n < 1) throw std::invalid_argument("exhaustive_infer: empty episode");
  std::int64_t combos = 1;
  for (const Bag& bag : episode.positive_bags) {
    if (bag.items.empty()) throw std::invalid_argument("exhaustive_infer: empty bag");
    combos *= bag.size();
    if (combos > cap) {
      throw std::runtime_error(
          "exhaustive_infer: search space exceeds cap; use greedy or loopy BP");
    }
  }
  const EnergyConfig config(eta);
  Selection current(n, 0);
  InferenceResult best;
  best.energy = std::numeric_limits<double>::infinity();
  for (;;) {
    const double e = energy(current, episode, provider, config);
    if (e < best.energy) {
      best.energy = e;
      best.selection = current;
    }
    int pos = n - 1;
    while (pos >= 0 && current[pos] + 1 >= episode.positive_bags[pos].size()) {
      current[pos] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++current[pos];
  }
  return best;
}

// Per-bag argmin of the unary potential alone, ignoring all pairwise
// information (first index wins ties). The reported energy is still the full
// energy of the resulting selection.
inline InferenceResult unary_only_infer(const Episode& episode, PotentialProvider& provider,
                                        double eta) {
  const int n = episode.num_bags();
  if (n < 1) throw std::invalid_argument("unary_only_infer: empty episode");
  InferenceResult result;
  result.selection.resize(n);
  for (int i = 0; i < n; ++i) {
    int best_x = 0;
    double best_u = std::numeric_limits<double>::infinity();
    for (int x = 0; x < episode.positive_bags[i].size(); ++x) {
      const double u = provider.unary(i, x);
      if (u < best_u) {
        best_u = u;
        best_x = x;
      }
    }
    result.selection[i] = best_x;
  }
  result.energy = energy(result.selection, episode, provider, EnergyConfig(eta));
  return result;
}

// Loopy min-sum message passing on the complete graph of bags with unary
// fields eta * psi^U. Messages are damped (fraction `damping` of the old
// message is kept) and normalized to minimum zero; iteration stops when the
// largest message change drops below tol. Beliefs decode per-bag argmin with
// first-index tie-breaking; the reported energy is the direct evaluation of
// the decoded selection.
inline InferenceResult loopy_bp_infer(const Episode& episode, PotentialProvider& provider,
                                      double eta, int max_iters = 200, double damping = 0.5,
                                      double tol = 1e-6) {
  const int n = episode.num_bags();
  if (n < 2) throw std::invalid_argument("loopy_bp_infer: need at least 2 bags");

  std::vector<int> sizes(n);
  for (int i = 0; i < n; ++i) sizes[i] = episode.positive_bags[i].size();

  std::vector<std::vector<double>> fields(n);
  for (int i = 0; i < n; ++i) {
    fields[i].assign(sizes[i], 0.0);
    if (eta != 0.0) {
      for (int x = 0; x < sizes[i]; ++x) fields[i][x] = eta * provider.unary(i, x);
    }
  }

  // Dense pairwise tables in canonical order: table[i][j][xi * Bj + xj], i > j.
  std::vector<std::vector<std::vector<double>>> table(n);
  for (int i = 0; i < n; ++i) {
    table[i].resize(i);
    for (int j = 0; j < i; ++j) {
      table[i][j].resize(static_cast<std::size_t>(sizes[i]) * sizes[j]);
      for (int xi = 0; xi < sizes[i]; ++xi) {
        for (int xj = 0; xj < sizes[j]; ++xj) {
          table[i][j][static_cast<std::size_t>(xi) * sizes[j] + xj] =
              provider.pairwise(i, xi, j, xj);
        }
      }
    }
  }
  const auto pair_value = [&](int i, int xi, int j, int xj) {
    return i > j ? table[i][j][static_cast<std::size_t>(xi) * sizes[j] + xj]
                 : table[j][i][static_cast<std::size_t>(xj) * sizes[i] + xi];
  };

  // msg[i][j] = message i -> j over the states of bag j.
  std::vector<std::vector<std::vector<double>>> msg(n, std::vector<std::vector<double>>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j) msg[i][j].assign(sizes[j], 0.0);
    }
  }

  int iterations = 0;
  for (int iter = 0; iter < max_iters; ++iter) {
    double max_change = 0.0;
    auto next = msg;
    for (int i = 0; i < n; ++i) {
      std::vector<double> base(sizes[i]);
      for (int xi = 0; xi < sizes[i]; ++xi) {
        double sum = fields[i][xi];
        for (int k = 0; k < n; ++k) {
          if (k != i) sum += msg[k][i][xi];
        }
        base[xi] = sum;
      }
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        std::vector<double>& out = next[i][j];
        for (int xj = 0; xj < sizes[j]; ++xj) {
          double best = std::numeric_limits<double>::infinity();
          for (int xi = 0; xi < sizes[i]; ++xi) {
            best = std::min(best, base[xi] - msg[j][i][xi] + pair_value(i, xi, j, xj));
          }
          out[xj] = damping * msg[i][j][xj] + (1.0 - damping) * best;
        }
        const double lo = *std::min_element(out.begin(), out.end());
        for (int xj = 0; xj < sizes[j]; ++xj) {
          out[xj] -= lo;
          max_change = std::max(max_change, std::abs(out[xj] - msg[i][j][xj]));
        }
      }
    }
    msg = std::move(next);
    iterations = iter + 1;
    if (max_change < tol) break;
  }

  InferenceResult result;
  result.selection.resize(n);
  for (int i = 0; i < n; ++i) {
    int best_x = 0;
    double best_b = std::numeric_limits<double>::infinity();
    for (int x = 0; x < sizes[i]; ++x) {
      double belief = fields[i][x];
      for (int k = 0; k < n; ++k) {
        if (k != i) belief += msg[k][i][x];
      }
      if (belief < best_b) {
        best_b = belief;
        best_x = x;
      }
    }
    result.selection[i] = best_x;
  }
  result.energy = energy(result.selection, episode, provider, EnergyConfig(eta));
  result.iterations = iterations;
  return result;
}

// Iterated conditional modes from seeded random starts. A coordinate move is
// taken only when strictly better, so per-sweep energies never increase and
// every restart terminates at a local minimum. sweep_trace, when given,
// receives the energy after every sweep (all restarts concatenated).
inline InferenceResult icm_infer(const Episode& episode, PotentialProvider& provider,
                                 double eta, int restarts = 8, std::uint64_t seed = 0,
                                 int max_sweeps = 100,
                                 std::vector<double>* sweep_trace = nullptr) {
  const int n = episode.num_bags();
  if (n < 1) throw std::invalid_argument("icm_infer: empty episode");
  if (restarts < 1) throw std::invalid_argument("icm_infer: restarts must be >= 1");

  std::mt19937_64 rng(seed);
  const EnergyConfig config(eta);
  InferenceResult best;
  best.energy = std::numeric_limits<double>::infinity();
  int total_sweeps = 0;

  const auto conditional = [&](const Selection& sel, int bag, int item) {
    double e = eta == 0.0 ? 0.0 : eta * provider.unary(bag, item);
    for (int j = 0; j < n; ++j) {
      if (j == bag) continue;
      e += bag > j ? provider.pairwise(bag, item, j, sel[j])
                   : provider.pairwise(j, sel[j], bag, item);
    }
    return e;
  };

  for (int r = 0; r < restarts; ++r) {
    Selection sel(n);
    for (int i = 0; i < n; ++i) {
      std::uniform_int_distribution<int> dist(0, episode.positive_bags[i].size() - 1);
      sel[i] = dist(rng);
    }
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
      ++total_sweeps;
      bool changed = false;
      for (int i = 0; i < n; ++i) {
        double current = conditional(sel, i, sel[i]);
        int best_x = sel[i];
        for (int x = 0; x < episode.positive_bags[i].size(); ++x) {
          if (x == sel[i]) continue;
          const double cand = conditional(sel, i, x);
          if (cand < current) {
            current = cand;
            best_x = x;
            changed = true;
          }
        }
        sel[i] = best_x;
      }
      if (sweep_trace) sweep_trace->push_back(energy(sel, episode, provider, config));
      if (!changed) break;
    }
    const double e = energy(sel, episode, provider, config);
    if (e < best.energy) {
      best.energy = e;
      best.selection = sel;
    }
  }
  best.iterations = total_sweeps;
  return best;
}

}  // namespace cofind
