#include "evofcn/genome.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <tuple>

#include "evofcn/errors.hpp"

namespace evofcn {

std::string_view to_string(Dim d) { return d == Dim::d2 ? "2d" : "3d"; }
std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "elu"; }
std::string_view to_string(Merge m) { return m == Merge::sum ? "sum" : "concat"; }

Dim parse_dim(std::string_view s) {
  if (s == "2d") return Dim::d2;
  if (s == "3d") return Dim::d3;
  throw ValidationError("unknown dim '" + std::string(s) + "' (expected 2d or 3d)");
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "elu") return Activation::elu;
  throw ValidationError("unknown activation '" + std::string(s) + "'");
}

Merge parse_merge(std::string_view s) {
  if (s == "sum") return Merge::sum;
  if (s == "concat") return Merge::concat;
  throw ValidationError("unknown merge '" + std::string(s) + "'");
}

bool genome_less(const Genome& a, const Genome& b) {
  auto tie = [](const Genome& g) {
    return std::tie(g.n_blocks, g.base_filters, g.k1, g.k2, g.k3, g.activation, g.merge,
                    g.dropout, g.lr);
  };
  return tie(a) < tie(b);
}

SearchSpace default_search_space(Dim dim) {
  SearchSpace s;
  s.dim = dim;
  s.blocks = {3, 5, 7, 9};
  s.filters = {4, 8, 16, 32};
  s.kernels = dim == Dim::d2 ? std::vector<int>{1, 3, 5, 7} : std::vector<int>{1, 3, 5};
  s.activations = {Activation::relu, Activation::elu};
  s.merges = {Merge::sum, Merge::concat};
  s.dropout = {0.0, 0.7};
  s.lr = {1e-8, 9e-3};
  return s;
}

namespace {

template <typename T>
bool contains(const std::vector<T>& v, const T& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

bool contains_real(const std::vector<double>& v, double x) {
  return std::any_of(v.begin(), v.end(), [x](double c) {
    return std::abs(c - x) <= 1e-12 * std::max(1.0, std::abs(c));
  });
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out = "{";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, int>) {
      out += std::to_string(v[i]);
    } else if constexpr (std::is_same_v<T, double>) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", v[i]);
      out += buf;
    } else {
      out += std::string(to_string(v[i]));
    }
  }
  return out + "}";
}

std::string fmt_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

template <typename T>
T pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

// Uniform over the domain minus the current value.
template <typename T, typename Eq>
T pick_other(const std::vector<T>& v, const T& current, Rng& rng, Eq eq) {
  std::vector<T> others;
  for (const auto& x : v)
    if (!eq(x, current)) others.push_back(x);
  if (others.empty()) return current;
  return others[rng.below(others.size())];
}

template <typename T>
T pick_other(const std::vector<T>& v, const T& current, Rng& rng) {
  return pick_other(v, current, rng, [](const T& a, const T& b) { return a == b; });
}

double sample_dropout(const SearchSpace& s, Rng& rng) {
  if (s.dropout_choices) return pick(*s.dropout_choices, rng);
  return rng.uniform(s.dropout.lo, s.dropout.hi);
}

double sample_lr(const SearchSpace& s, Rng& rng) {
  if (s.lr_choices) return pick(*s.lr_choices, rng);
  const double lr = std::pow(10.0, rng.uniform(std::log10(s.lr.lo), std::log10(s.lr.hi)));
  return std::clamp(lr, s.lr.lo, s.lr.hi);
}

bool real_eq(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)); }

}  // namespace

ValidationResult validate_genome(const Genome& g, const SearchSpace& s, const Shape3& input_shape,
                                 bool check_divisibility) {
  ValidationResult r;
  auto& v = r.violations;
  if (!contains(s.blocks, g.n_blocks))
    v.push_back("n_blocks not in " + join(s.blocks) + ": " + std::to_string(g.n_blocks));
  if (g.n_blocks % 2 == 0) v.push_back("n_blocks must be odd: " + std::to_string(g.n_blocks));
  if (!contains(s.filters, g.base_filters))
    v.push_back("base_filters not in " + join(s.filters) + ": " + std::to_string(g.base_filters));
  const std::array<std::pair<const char*, int>, 3> ks{{{"k1", g.k1}, {"k2", g.k2}, {"k3", g.k3}}};
  for (const auto& [name, k] : ks)
    if (!contains(s.kernels, k))
      v.push_back(std::string(name) + " not in " + join(s.kernels) + ": " + std::to_string(k));
  if (!contains(s.activations, g.activation))
    v.push_back("activation not in " + join(s.activations));
  if (!contains(s.merges, g.merge)) v.push_back("merge not in " + join(s.merges));

  if (!(g.dropout >= s.dropout.lo && g.dropout <= s.dropout.hi))
    v.push_back("dropout outside [" + fmt_real(s.dropout.lo) + ", " + fmt_real(s.dropout.hi) +
                "]: " + fmt_real(g.dropout));
  else if (s.dropout_choices && !contains_real(*s.dropout_choices, g.dropout))
    v.push_back("dropout not in " + join(*s.dropout_choices) + ": " + fmt_real(g.dropout));
  if (!(g.lr >= s.lr.lo && g.lr <= s.lr.hi))
    v.push_back("lr outside [" + fmt_real(s.lr.lo) + ", " + fmt_real(s.lr.hi) +
                "]: " + fmt_real(g.lr));
  else if (s.lr_choices && !contains_real(*s.lr_choices, g.lr))
    v.push_back("lr not in " + join(*s.lr_choices) + ": " + fmt_real(g.lr));

  const int rank = spatial_rank(s.dim);
  for (int a = 0; a < 3; ++a)
    if (input_shape[a] < 1) v.push_back("input_shape components must be >= 1");
  if (rank == 2 && input_shape[2] != 1) v.push_back("2d input_shape must have z = 1");

  if (check_divisibility && g.n_blocks >= 1 && g.n_blocks % 2 == 1) {
    const int pools = (g.n_blocks - 1) / 2;
    const int factor = 1 << pools;
    static constexpr const char* axes[] = {"x", "y", "z"};
    for (int a = 0; a < rank; ++a)
      if (input_shape[a] >= 1 && input_shape[a] % factor != 0)
        v.push_back(std::string("input extent ") + axes[a] + "=" + std::to_string(input_shape[a]) +
                    " not divisible by 2^" + std::to_string(pools));
  }
  return r;
}

Genome random_genome(const SearchSpace& s, Rng& rng) {
  Genome g;
  g.n_blocks = pick(s.blocks, rng);
  g.base_filters = pick(s.filters, rng);
  g.k1 = pick(s.kernels, rng);
  g.k2 = pick(s.kernels, rng);
  g.k3 = pick(s.kernels, rng);
  g.activation = pick(s.activations, rng);
  g.merge = pick(s.merges, rng);
  g.dropout = sample_dropout(s, rng);
  g.lr = sample_lr(s, rng);
  return g;
}

Genome crossover(const Genome& a, const Genome& b, Rng& rng) {
  Genome c;
  c.n_blocks = rng.bernoulli(0.5) ? a.n_blocks : b.n_blocks;
  c.base_filters = rng.bernoulli(0.5) ? a.base_filters : b.base_filters;
  c.k1 = rng.bernoulli(0.5) ? a.k1 : b.k1;
  c.k2 = rng.bernoulli(0.5) ? a.k2 : b.k2;
  c.k3 = rng.bernoulli(0.5) ? a.k3 : b.k3;
  c.activation = rng.bernoulli(0.5) ? a.activation : b.activation;
  c.merge = rng.bernoulli(0.5) ? a.merge : b.merge;
  c.dropout = rng.bernoulli(0.5) ? a.dropout : b.dropout;
  c.lr = rng.bernoulli(0.5) ? a.lr : b.lr;
  return c;
}

Genome mutate(const Genome& g, const SearchSpace& s, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("mutation rate must lie in [0, 1]");
  Genome m = g;
  if (rng.bernoulli(rate)) m.n_blocks = pick_other(s.blocks, g.n_blocks, rng);
  if (rng.bernoulli(rate)) m.base_filters = pick_other(s.filters, g.base_filters, rng);
  if (rng.bernoulli(rate)) m.k1 = pick_other(s.kernels, g.k1, rng);
  if (rng.bernoulli(rate)) m.k2 = pick_other(s.kernels, g.k2, rng);
  if (rng.bernoulli(rate)) m.k3 = pick_other(s.kernels, g.k3, rng);
  if (rng.bernoulli(rate)) m.activation = pick_other(s.activations, g.activation, rng);
  if (rng.bernoulli(rate)) m.merge = pick_other(s.merges, g.merge, rng);
  if (rng.bernoulli(rate)) {
    m.dropout = s.dropout_choices ? pick_other(*s.dropout_choices, g.dropout, rng, real_eq)
                                  : sample_dropout(s, rng);
  }
  if (rng.bernoulli(rate)) {
    m.lr = s.lr_choices ? pick_other(*s.lr_choices, g.lr, rng, real_eq) : sample_lr(s, rng);
  }
  return m;
}

double mutation_rate(int generation, int total_generations, double p_start, double p_end) {
  if (total_generations < 2) throw ValidationError("mutation_rate needs total_generations >= 2");
  if (generation < 0 || generation >= total_generations)
    throw ValidationError("generation outside [0, total_generations)");
  if (p_start < p_end) throw ValidationError("mutation schedule must not increase");
  return p_start + (p_end - p_start) * static_cast<double>(generation) / (total_generations - 1);
}

std::string canonical_key(const Genome& g) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "b%d|f%d|k%d,%d,%d|%s|%s|d%.5e|lr%.5e", g.n_blocks,
                g.base_filters, g.k1, g.k2, g.k3, std::string(to_string(g.activation)).c_str(),
                std::string(to_string(g.merge)).c_str(), g.dropout, g.lr);
  return buf;
}

nlohmann::json genome_to_json(const Genome& g) {
  return {{"n_blocks", g.n_blocks},
          {"base_filters", g.base_filters},
          {"k1", g.k1},
          {"k2", g.k2},
          {"k3", g.k3},
          {"activation", to_string(g.activation)},
          {"merge", to_string(g.merge)},
          {"dropout", g.dropout},
          {"lr", g.lr}};
}

Genome genome_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("genome must be a JSON object");
  static constexpr const char* keys[] = {"n_blocks", "base_filters", "k1",      "k2", "k3",
                                         "activation", "merge",      "dropout", "lr"};
  for (const char* k : keys)
    if (!j.contains(k)) throw ValidationError(std::string("genome is missing key '") + k + "'");
  auto get_int = [&](const char* k) {
    const auto& v = j.at(k);
    if (!v.is_number_integer()) throw ValidationError(std::string("genome.") + k + " must be an integer");
    return v.get<int>();
  };
  auto get_real = [&](const char* k) {
    const auto& v = j.at(k);
    if (!v.is_number()) throw ValidationError(std::string("genome.") + k + " must be a number");
    return v.get<double>();
  };
  auto get_str = [&](const char* k) {
    const auto& v = j.at(k);
    if (!v.is_string()) throw ValidationError(std::string("genome.") + k + " must be a string");
    return v.get<std::string>();
  };
  Genome g;
  g.n_blocks = get_int("n_blocks");
  g.base_filters = get_int("base_filters");
  g.k1 = get_int("k1");
  g.k2 = get_int("k2");
  g.k3 = get_int("k3");
  g.activation = parse_activation(get_str("activation"));
  g.merge = parse_merge(get_str("merge"));
  g.dropout = get_real("dropout");
  g.lr = get_real("lr");
  return g;
}

nlohmann::json search_space_to_json(const SearchSpace& s) {
  nlohmann::json acts = nlohmann::json::array(), merges = nlohmann::json::array();
  for (auto a : s.activations) acts.push_back(to_string(a));
  for (auto m : s.merges) merges.push_back(to_string(m));
  nlohmann::json j = {{"dim", to_string(s.dim)},
                      {"blocks", s.blocks},
                      {"filters", s.filters},
                      {"kernels", s.kernels},
                      {"activations", acts},
                      {"merges", merges},
                      {"dropout", {s.dropout.lo, s.dropout.hi}},
                      {"lr", {s.lr.lo, s.lr.hi}}};
  if (s.dropout_choices) j["dropout_choices"] = *s.dropout_choices;
  if (s.lr_choices) j["lr_choices"] = *s.lr_choices;
  return j;
}

// Overrides on top of the defaults for `dim`; absent keys keep the defaults.
SearchSpace search_space_from_json(const nlohmann::json& j, Dim dim) {
  SearchSpace s = default_search_space(dim);
  if (j.is_null()) return s;
  if (!j.is_object()) throw ValidationError("search_space must be a JSON object");
  try {
    if (j.contains("blocks")) s.blocks = j.at("blocks").get<std::vector<int>>();
    if (j.contains("filters")) s.filters = j.at("filters").get<std::vector<int>>();
    if (j.contains("kernels")) s.kernels = j.at("kernels").get<std::vector<int>>();
    if (j.contains("activations")) {
      s.activations.clear();
      for (const auto& a : j.at("activations")) s.activations.push_back(parse_activation(a.get<std::string>()));
    }
    if (j.contains("merges")) {
      s.merges.clear();
      for (const auto& m : j.at("merges")) s.merges.push_back(parse_merge(m.get<std::string>()));
    }
    if (j.contains("dropout")) {
      auto v = j.at("dropout").get<std::vector<double>>();
      if (v.size() != 2) throw ValidationError("search_space.dropout must be [lo, hi]");
      s.dropout = {v[0], v[1]};
    }
    if (j.contains("lr")) {
      auto v = j.at("lr").get<std::vector<double>>();
      if (v.size() != 2) throw ValidationError("search_space.lr must be [lo, hi]");
      s.lr = {v[0], v[1]};
    }
    if (j.contains("dropout_choices")) s.dropout_choices = j.at("dropout_choices").get<std::vector<double>>();
    if (j.contains("lr_choices")) s.lr_choices = j.at("lr_choices").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed search_space: ") + e.what());
  }
  if (s.blocks.empty() || s.filters.empty() || s.kernels.empty() || s.activations.empty() ||
      s.merges.empty())
    throw ValidationError("search_space domains must be nonempty");
  // Overrides may only narrow the full domains.
  const SearchSpace full = default_search_space(dim);
  auto subset = [](const auto& part, const auto& whole) {
    return std::all_of(part.begin(), part.end(), [&](const auto& x) { return contains(whole, x); });
  };
  if (!subset(s.blocks, full.blocks)) throw ValidationError("search_space.blocks must be a subset of " + join(full.blocks));
  if (!subset(s.filters, full.filters)) throw ValidationError("search_space.filters must be a subset of " + join(full.filters));
  if (!subset(s.kernels, full.kernels)) throw ValidationError("search_space.kernels must be a subset of " + join(full.kernels));
  if (!(s.lr.lo >= full.lr.lo && s.lr.lo <= s.lr.hi && s.lr.hi <= full.lr.hi))
    throw ValidationError("search_space.lr must be a sub-interval of [1e-8, 9e-3]");
  if (!(s.dropout.lo >= full.dropout.lo && s.dropout.lo <= s.dropout.hi && s.dropout.hi <= full.dropout.hi))
    throw ValidationError("search_space.dropout must be a sub-interval of [0, 0.7]");
  auto inside = [](const std::vector<double>& v, const Interval& iv) {
    return !v.empty() && std::all_of(v.begin(), v.end(), [&](double x) { return x >= iv.lo && x <= iv.hi; });
  };
  if (s.dropout_choices && !inside(*s.dropout_choices, s.dropout))
    throw ValidationError("dropout_choices must be nonempty and inside the dropout interval");
  if (s.lr_choices && !inside(*s.lr_choices, s.lr))
    throw ValidationError("lr_choices must be nonempty and inside the lr interval");
  return s;
}

}  // namespace evofcn
