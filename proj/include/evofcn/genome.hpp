#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "evofcn/rng.hpp"

namespace evofcn {

enum class Dim { d2, d3 };
enum class Activation { relu, elu };
enum class Merge { sum, concat };

std::string_view to_string(Dim d);
std::string_view to_string(Activation a);
std::string_view to_string(Merge m);
Dim parse_dim(std::string_view s);
Activation parse_activation(std::string_view s);
Merge parse_merge(std::string_view s);

inline int spatial_rank(Dim d) { return d == Dim::d2 ? 2 : 3; }

// Spatial extent (x, y, z). 2D shapes carry z = 1.
using Shape3 = std::array<int, 3>;

// The nine searchable hyperparameters of one encoder-decoder FCN.
struct Genome {
  int n_blocks = 3;
  int base_filters = 4;
  int k1 = 1;
  int k2 = 1;
  int k3 = 1;
  Activation activation = Activation::relu;
  Merge merge = Merge::sum;
  double dropout = 0.0;
  double lr = 1e-3;

  friend bool operator==(const Genome&, const Genome&) = default;
};

// Lexicographic order over components in declaration order.
bool genome_less(const Genome& a, const Genome& b);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Domains for every genome component. dropout and lr are continuous by default
// but may be restricted to a finite set (used by the exhaustive-enumeration
// test harness and by users who want a discrete search).
struct SearchSpace {
  Dim dim = Dim::d2;
  std::vector<int> blocks;
  std::vector<int> filters;
  std::vector<int> kernels;
  std::vector<Activation> activations;
  std::vector<Merge> merges;
  Interval dropout;
  Interval lr;
  std::optional<std::vector<double>> dropout_choices;
  std::optional<std::vector<double>> lr_choices;
};

SearchSpace default_search_space(Dim dim);

struct ValidationResult {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Checks domain membership, and when check_divisibility is set, that every
// spatial input extent survives (n_blocks - 1) / 2 stride-2 poolings exactly.
ValidationResult validate_genome(const Genome& g, const SearchSpace& s, const Shape3& input_shape,
                                 bool check_divisibility = true);

Genome random_genome(const SearchSpace& s, Rng& rng);

// Uniform crossover: every component from a or b with probability 1/2.
Genome crossover(const Genome& a, const Genome& b, Rng& rng);

// Per-component resampling with probability `rate`. Discrete components never
// resample to their current value (unless the domain has a single element).
Genome mutate(const Genome& g, const SearchSpace& s, double rate, Rng& rng);

// Linear schedule from p_start at generation 0 to p_end at the last generation.
double mutation_rate(int generation, int total_generations, double p_start, double p_end);

// Equality key for evaluation caching: exact discrete components, dropout and lr
// rounded to 6 significant digits.
std::string canonical_key(const Genome& g);

nlohmann::json genome_to_json(const Genome& g);
Genome genome_from_json(const nlohmann::json& j);

nlohmann::json search_space_to_json(const SearchSpace& s);
SearchSpace search_space_from_json(const nlohmann::json& j, Dim dim);

}  // namespace evofcn
