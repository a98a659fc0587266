#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evofcn/evaluator.hpp"
#include "evofcn/genome.hpp"
#include "evofcn/objectives.hpp"
#include "evofcn/rng.hpp"

namespace evofcn {

struct SearchConfig {
  int population_size = 50;
  int generations = 40;
  int neighborhood_size = 10;
  double pbi_penalty = 0.1;
  double alpha = 0.25;
  double beta = 0.25;
  int budget_epochs = 120;
  double mutation_p_start = 0.5;
  double mutation_p_end = 0.05;
  int replacement_limit = 2;
  double global_parent_prob = 0.1;
  std::uint64_t seed = 1;
  Dim dim = Dim::d2;
  Shape3 input_shape{128, 128, 1};
  int in_channels = 1;
  int n_classes = 2;
  int fold = 0;
  int workers = 1;

  ObjectiveWeights weights() const { return {alpha, beta, budget_epochs}; }
};

// Throws ValidationError on out-of-range settings.
void validate_config(const SearchConfig& cfg);

using WeightVector = std::array<double, 2>;

struct Subproblem {
  WeightVector weight{};
  std::vector<int> neighbors;
  Genome genome;
  ObjectiveVector objectives;
  EvalResult result;
};

struct ArchiveEntry {
  Genome genome;
  ObjectiveVector objectives;
  EvalResult result;
};

// Mutually nondominated set under minimization.
class ParetoArchive {
 public:
  // Inserts unless dominated by (or objective-equal to) a member; evicts members
  // the candidate dominates. Returns whether the candidate was inserted.
  bool insert(const ArchiveEntry& candidate);

  const std::vector<ArchiveEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Entries ordered by (f2, f1, genome) for stable output.
  std::vector<ArchiveEntry> sorted() const;

 private:
  std::vector<ArchiveEntry> entries_;
};

// Functional form of the archive update.
ParetoArchive update_archive(ParetoArchive archive, const ArchiveEntry& candidate);

struct GenerationStats {
  int generation = 0;  // 0 = initial population
  double mutation_rate = 0.0;
  double best_f1 = 0.0;
  std::size_t archive_size = 0;
  std::size_t evaluations = 0;
};

struct CacheEntry {
  Genome genome;
  bool failed = false;
  EvalResult result;
};

struct SearchState {
  std::vector<Subproblem> subproblems;
  ObjectiveVector ideal;  // running componentwise minimum
  ObjectiveVector nadir;  // running componentwise maximum
  ParetoArchive archive;
  int generation = 0;  // next generation to run
  std::size_t evaluations = 0;
  std::map<std::string, CacheEntry> cache;  // canonical key -> outcome
  std::vector<GenerationStats> history;
  Rng rng;
};

// lambda_i = (i / (N - 1), 1 - i / (N - 1)).
std::vector<WeightVector> init_weight_vectors(int n);

// T nearest weight vectors (Euclidean, ties to lower index), self included.
std::vector<std::vector<int>> compute_neighborhoods(const std::vector<WeightVector>& weights, int t);

// d1 + penalty * d2 with d1 the projection of f - ideal on lambda and d2 the
// perpendicular residual.
double pbi_aggregate(const ObjectiveVector& f, const WeightVector& lambda, const ObjectiveVector& ideal,
                     double penalty);

// Per coordinate (f - ideal) / (nadir - ideal) clamped to [0, 1.5]; a
// degenerate range maps to 0.
ObjectiveVector normalize_objectives(const ObjectiveVector& f, const ObjectiveVector& ideal,
                                     const ObjectiveVector& nadir);

struct SearchOptions {
  // Called after initialization and after every generation.
  std::function<void(const SearchState&)> on_generation;
  // Stop once this many generations have completed (-1 = run to the end).
  int stop_after = -1;
};

struct SearchResult {
  ParetoArchive archive;
  std::vector<GenerationStats> history;
  bool completed = false;
  SearchState state;
};

SearchState initialize_search(const SearchConfig& cfg, const SearchSpace& space, Evaluator& evaluator);
void run_generation(SearchState& state, const SearchConfig& cfg, const SearchSpace& space,
                    Evaluator& evaluator);

// Runs from scratch, or continues `resume` when given.
SearchResult run_search(const SearchConfig& cfg, const SearchSpace& space, Evaluator& evaluator,
                        const SearchOptions& options = {}, std::optional<SearchState> resume = std::nullopt);

// Minimum f1; ties by smaller f2, then genome order.
const ArchiveEntry& select_final(const ParetoArchive& archive);

nlohmann::json config_to_json(const SearchConfig& cfg);
// Missing keys keep their defaults.
SearchConfig config_from_json(const nlohmann::json& j, SearchConfig base = {});

nlohmann::json archive_to_json(const ParetoArchive& archive);
ParetoArchive archive_from_json(const nlohmann::json& j);
nlohmann::json stats_to_json(const GenerationStats& s);
nlohmann::json state_to_json(const SearchState& state);
SearchState state_from_json(const nlohmann::json& j);

}  // namespace evofcn
