#include "evofcn/moead.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <numeric>
#include <thread>

#include "evofcn/archmodel.hpp"
#include "evofcn/errors.hpp"

namespace evofcn {

void validate_config(const SearchConfig& c) {
  std::vector<std::string> v;
  if (c.population_size < 2) v.push_back("population_size must be >= 2");
  if (c.generations < 0) v.push_back("generations must be >= 0");
  if (c.neighborhood_size < 2 || c.neighborhood_size > c.population_size)
    v.push_back("neighborhood_size must lie in [2, population_size]");
  if (!(c.pbi_penalty >= 0)) v.push_back("pbi_penalty must be >= 0");
  if (!(c.alpha >= 0 && c.alpha <= 1)) v.push_back("alpha must lie in [0, 1]");
  if (!(c.beta >= 0 && c.beta <= 1)) v.push_back("beta must lie in [0, 1]");
  if (c.budget_epochs < 1) v.push_back("budget_epochs must be >= 1");
  if (!(c.mutation_p_start >= 0 && c.mutation_p_start <= 1 && c.mutation_p_end >= 0 &&
        c.mutation_p_end <= c.mutation_p_start))
    v.push_back("mutation rates must satisfy 0 <= p_end <= p_start <= 1");
  if (c.replacement_limit < 1) v.push_back("replacement_limit must be >= 1");
  if (!(c.global_parent_prob >= 0 && c.global_parent_prob <= 1))
    v.push_back("global_parent_prob must lie in [0, 1]");
  if (c.in_channels < 1) v.push_back("in_channels must be >= 1");
  if (c.n_classes < 1) v.push_back("n_classes must be >= 1");
  if (c.workers < 1) v.push_back("workers must be >= 1");
  if (c.fold < 0) v.push_back("fold must be >= 0");
  if (!v.empty()) {
    std::string msg = "invalid search config:";
    for (const auto& s : v) msg += " " + s + ";";
    throw ValidationError(msg, v);
  }
}

bool ParetoArchive::insert(const ArchiveEntry& c) {
  for (const auto& e : entries_)
    if (dominates(e.objectives, c.objectives) || e.objectives == c.objectives) return false;
  std::erase_if(entries_, [&](const ArchiveEntry& e) { return dominates(c.objectives, e.objectives); });
  entries_.push_back(c);
  return true;
}

std::vector<ArchiveEntry> ParetoArchive::sorted() const {
  auto out = entries_;
  std::sort(out.begin(), out.end(), [](const ArchiveEntry& a, const ArchiveEntry& b) {
    if (a.objectives.f2 != b.objectives.f2) return a.objectives.f2 < b.objectives.f2;
    if (a.objectives.f1 != b.objectives.f1) return a.objectives.f1 < b.objectives.f1;
    return genome_less(a.genome, b.genome);
  });
  return out;
}

ParetoArchive update_archive(ParetoArchive archive, const ArchiveEntry& candidate) {
  archive.insert(candidate);
  return archive;
}

std::vector<WeightVector> init_weight_vectors(int n) {
  if (n < 2) throw ValidationError("need at least 2 weight vectors");
  std::vector<WeightVector> w(n);
  for (int i = 0; i < n; ++i) {
    const double a = static_cast<double>(i) / (n - 1);
    w[i] = {a, 1.0 - a};
  }
  return w;
}

std::vector<std::vector<int>> compute_neighborhoods(const std::vector<WeightVector>& weights, int t) {
  const int n = static_cast<int>(weights.size());
  if (t < 2 || t > n) throw ValidationError("neighborhood size must lie in [2, N]");
  std::vector<std::vector<int>> out(n);
  std::vector<std::pair<double, int>> d(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double a = weights[i][0] - weights[j][0], b = weights[i][1] - weights[j][1];
      d[j] = {std::sqrt(a * a + b * b), j};
    }
    std::sort(d.begin(), d.end());
    for (int k = 0; k < t; ++k) out[i].push_back(d[k].second);
  }
  return out;
}

double pbi_aggregate(const ObjectiveVector& f, const WeightVector& lambda, const ObjectiveVector& ideal,
                     double penalty) {
  const double norm = std::hypot(lambda[0], lambda[1]);
  if (!(norm > 0)) throw ValidationError("PBI weight vector must be nonzero");
  const double u0 = f.f1 - ideal.f1, u1 = f.f2 - ideal.f2;
  const double d1 = std::abs(u0 * lambda[0] + u1 * lambda[1]) / norm;
  const double r0 = u0 - d1 * lambda[0] / norm, r1 = u1 - d1 * lambda[1] / norm;
  return d1 + penalty * std::hypot(r0, r1);
}

ObjectiveVector normalize_objectives(const ObjectiveVector& f, const ObjectiveVector& ideal,
                                     const ObjectiveVector& nadir) {
  auto one = [](double v, double lo, double hi) {
    if (!(hi > lo)) return 0.0;
    return std::clamp((v - lo) / (hi - lo), 0.0, 1.5);
  };
  return {one(f.f1, ideal.f1, nadir.f1), one(f.f2, ideal.f2, nadir.f2)};
}

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Job {
  Genome genome;
  std::string key;
};

// Scores jobs in parallel when permitted; results land in job order. A failed
// job yields nullopt.
std::vector<std::optional<EvalResult>> evaluate_batch(const std::vector<Job>& jobs, const SearchConfig& cfg,
                                                      Evaluator& evaluator) {
  std::vector<std::optional<EvalResult>> out(jobs.size());
  auto run_one = [&](std::size_t i) {
    const Job& job = jobs[i];
    EvalRequest req{job.genome, cfg.dim, cfg.budget_epochs, cfg.fold,
                    splitmix64(cfg.seed ^ fnv1a(job.key)) & 0x7fffffffULL};
    try {
      EvalResult r = evaluator.evaluate(req);
      const auto expected = count_parameters(job.genome, cfg.dim, cfg.in_channels, cfg.n_classes);
      if (r.param_count != expected) {
        warn("evaluator reported " + std::to_string(r.param_count) + " parameters for " + job.key +
             ", engine counts " + std::to_string(expected) + "; using the engine count");
        r.param_count = expected;
      }
      check_eval_result(r, cfg.budget_epochs);
      out[i] = r;
    } catch (const std::exception& e) {
      warn("evaluation of " + job.key + " failed: " + e.what());
    }
  };

  const std::size_t threads =
      evaluator.concurrent() ? std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), jobs.size()) : 1;
  if (threads <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_one(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) run_one(i);
    });
  for (auto& th : pool) th.join();
  return out;
}

void absorb(SearchState& s, const ObjectiveVector& f) {
  s.ideal.f1 = std::min(s.ideal.f1, f.f1);
  s.ideal.f2 = std::min(s.ideal.f2, f.f2);
  s.nadir.f1 = std::max(s.nadir.f1, f.f1);
  s.nadir.f2 = std::max(s.nadir.f2, f.f2);
}

GenerationStats snapshot(const SearchState& s, int generation, double rate) {
  GenerationStats st;
  st.generation = generation;
  st.mutation_rate = rate;
  st.archive_size = s.archive.size();
  st.evaluations = s.evaluations;
  st.best_f1 = s.archive.empty() ? 0.0 : select_final(s.archive).objectives.f1;
  return st;
}

Genome draw_valid(const SearchSpace& space, const SearchConfig& cfg, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Genome g = random_genome(space, rng);
    if (validate_genome(g, space, cfg.input_shape, true).ok()) return g;
  }
  throw ValidationError("could not draw a genome compatible with the input shape; check input_shape and search_space");
}

double rate_for(const SearchConfig& cfg, int generation) {
  if (cfg.generations < 2) return cfg.mutation_p_start;
  return mutation_rate(generation, cfg.generations, cfg.mutation_p_start, cfg.mutation_p_end);
}

}  // namespace

SearchState initialize_search(const SearchConfig& cfg, const SearchSpace& space, Evaluator& evaluator) {
  validate_config(cfg);
  if (space.dim != cfg.dim) throw ValidationError("search space and config disagree on dim");
  SearchState s;
  s.rng = Rng(cfg.seed);
  const auto weights = init_weight_vectors(cfg.population_size);
  const auto hoods = compute_neighborhoods(weights, cfg.neighborhood_size);
  const int n = cfg.population_size;
  s.subproblems.resize(n);
  for (int i = 0; i < n; ++i) {
    s.subproblems[i].weight = weights[i];
    s.subproblems[i].neighbors = hoods[i];
  }

  constexpr int kInitRetries = 10;
  std::vector<std::optional<std::string>> slot_key(n);
  std::vector<int> retries(n, 0);
  std::vector<int> open(n);
  std::iota(open.begin(), open.end(), 0);

  while (!open.empty()) {
    std::vector<Job> jobs;
    std::vector<int> job_slot;
    for (int i : open) {
      Genome g = draw_valid(space, cfg, s.rng);
      // Prefer distinct genomes; small spaces may force repeats.
      for (int attempt = 0; attempt < 100 && s.cache.contains(canonical_key(g)); ++attempt)
        g = draw_valid(space, cfg, s.rng);
      const std::string key = canonical_key(g);
      auto same = std::find_if(jobs.begin(), jobs.end(), [&](const Job& j) { return j.key == key; });
      if (s.cache.contains(key) || same != jobs.end()) {
        slot_key[i] = key;
        continue;
      }
      jobs.push_back({g, key});
      job_slot.push_back(i);
      slot_key[i] = key;
    }
    const auto results = evaluate_batch(jobs, cfg, evaluator);
    s.evaluations += jobs.size();
    for (std::size_t j = 0; j < jobs.size(); ++j)
      s.cache[jobs[j].key] = {jobs[j].genome, !results[j].has_value(), results[j].value_or(EvalResult{})};

    std::vector<int> still_open;
    for (int i : open) {
      const auto& entry = s.cache.at(*slot_key[i]);
      if (!entry.failed) continue;
      if (++retries[i] > kInitRetries)
        throw EvaluationError("initial population: evaluation failed " + std::to_string(kInitRetries + 1) +
                              " times for subproblem " + std::to_string(i));
      still_open.push_back(i);
    }
    open = std::move(still_open);
  }

  bool first = true;
  for (int i = 0; i < n; ++i) {
    const auto& entry = s.cache.at(*slot_key[i]);
    auto& sp = s.subproblems[i];
    sp.genome = entry.genome;
    sp.result = entry.result;
    sp.objectives = objective_vector(entry.result, cfg.weights());
    if (first) {
      s.ideal = s.nadir = sp.objectives;
      first = false;
    }
    absorb(s, sp.objectives);
    s.archive.insert({sp.genome, sp.objectives, sp.result});
  }
  s.generation = 0;
  s.history.push_back(snapshot(s, 0, 0.0));
  return s;
}

void run_generation(SearchState& s, const SearchConfig& cfg, const SearchSpace& space, Evaluator& evaluator) {
  const int n = static_cast<int>(s.subproblems.size());
  const int t = cfg.neighborhood_size;
  const double rate = rate_for(cfg, s.generation);
  constexpr int kChildAttempts = 20;

  // Variation: one child per subproblem from the same generation snapshot.
  std::vector<std::optional<std::string>> child_key(n);
  std::vector<Job> jobs;
  std::map<std::string, std::size_t> batch;
  for (int i = 0; i < n; ++i) {
    const auto& hood = s.subproblems[i].neighbors;
    std::optional<std::string> fallback;
    for (int attempt = 0; attempt < kChildAttempts; ++attempt) {
      const int p1 = hood[s.rng.below(t)];
      int p2 = p1;
      if (s.rng.bernoulli(cfg.global_parent_prob)) {
        while (p2 == p1) p2 = static_cast<int>(s.rng.below(n));
      } else {
        while (p2 == p1) p2 = hood[s.rng.below(t)];
      }
      Genome child = crossover(s.subproblems[p1].genome, s.subproblems[p2].genome, s.rng);
      child = mutate(child, space, rate, s.rng);
      if (!validate_genome(child, space, cfg.input_shape, true).ok()) continue;
      std::string key = canonical_key(child);
      if (s.cache.contains(key) || batch.contains(key)) {
        fallback = std::move(key);
        continue;
      }
      batch.emplace(key, jobs.size());
      jobs.push_back({child, key});
      child_key[i] = std::move(key);
      break;
    }
    if (!child_key[i]) child_key[i] = fallback;
  }

  const auto results = evaluate_batch(jobs, cfg, evaluator);
  s.evaluations += jobs.size();
  for (std::size_t j = 0; j < jobs.size(); ++j)
    s.cache[jobs[j].key] = {jobs[j].genome, !results[j].has_value(), results[j].value_or(EvalResult{})};

  // Integration in subproblem index order.
  for (int i = 0; i < n; ++i) {
    if (!child_key[i]) continue;
    const auto& entry = s.cache.at(*child_key[i]);
    if (entry.failed) continue;
    const ObjectiveVector f = objective_vector(entry.result, cfg.weights());
    absorb(s, f);
    s.archive.insert({entry.genome, f, entry.result});

    std::vector<int> order = s.subproblems[i].neighbors;
    for (int k = static_cast<int>(order.size()) - 1; k > 0; --k)
      std::swap(order[k], order[s.rng.below(static_cast<std::uint64_t>(k) + 1)]);
    const ObjectiveVector zero{0.0, 0.0};
    const ObjectiveVector child_norm = normalize_objectives(f, s.ideal, s.nadir);
    int replaced = 0;
    for (int j : order) {
      auto& sp = s.subproblems[j];
      const double incumbent =
          pbi_aggregate(normalize_objectives(sp.objectives, s.ideal, s.nadir), sp.weight, zero, cfg.pbi_penalty);
      const double candidate = pbi_aggregate(child_norm, sp.weight, zero, cfg.pbi_penalty);
      if (candidate < incumbent) {
        sp.genome = entry.genome;
        sp.objectives = f;
        sp.result = entry.result;
        if (++replaced >= cfg.replacement_limit) break;
      }
    }
  }
  ++s.generation;
  s.history.push_back(snapshot(s, s.generation, rate));
}

SearchResult run_search(const SearchConfig& cfg, const SearchSpace& space, Evaluator& evaluator,
                        const SearchOptions& options, std::optional<SearchState> resume) {
  validate_config(cfg);
  SearchResult out;
  if (resume) {
    out.state = std::move(*resume);
    if (static_cast<int>(out.state.subproblems.size()) != cfg.population_size)
      throw ValidationError("checkpoint population size does not match the config");
  } else {
    out.state = initialize_search(cfg, space, evaluator);
    if (options.on_generation) options.on_generation(out.state);
  }
  auto& s = out.state;
  while (s.generation < cfg.generations) {
    if (options.stop_after >= 0 && s.generation >= options.stop_after) break;
    run_generation(s, cfg, space, evaluator);
    if (options.on_generation) options.on_generation(s);
  }
  out.completed = s.generation >= cfg.generations;
  out.archive = s.archive;
  out.history = s.history;
  return out;
}

const ArchiveEntry& select_final(const ParetoArchive& archive) {
  if (archive.empty()) throw ValidationError("cannot select from an empty archive");
  const auto& e = archive.entries();
  return *std::min_element(e.begin(), e.end(), [](const ArchiveEntry& a, const ArchiveEntry& b) {
    if (a.objectives.f1 != b.objectives.f1) return a.objectives.f1 < b.objectives.f1;
    if (a.objectives.f2 != b.objectives.f2) return a.objectives.f2 < b.objectives.f2;
    return genome_less(a.genome, b.genome);
  });
}

// --- serialization --------------------------------------------------------

nlohmann::json config_to_json(const SearchConfig& c) {
  nlohmann::json shape = nlohmann::json::array();
  for (int a = 0; a < spatial_rank(c.dim); ++a) shape.push_back(c.input_shape[a]);
  return {{"population_size", c.population_size},
          {"generations", c.generations},
          {"neighborhood_size", c.neighborhood_size},
          {"pbi_penalty", c.pbi_penalty},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"budget_epochs", c.budget_epochs},
          {"mutation_p_start", c.mutation_p_start},
          {"mutation_p_end", c.mutation_p_end},
          {"replacement_limit", c.replacement_limit},
          {"global_parent_prob", c.global_parent_prob},
          {"seed", c.seed},
          {"dim", to_string(c.dim)},
          {"input_shape", shape},
          {"in_channels", c.in_channels},
          {"n_classes", c.n_classes},
          {"fold", c.fold},
          {"workers", c.workers}};
}

SearchConfig config_from_json(const nlohmann::json& j, SearchConfig c) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  try {
    auto get = [&](const char* k, auto& field) {
      if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    get("population_size", c.population_size);
    get("generations", c.generations);
    get("neighborhood_size", c.neighborhood_size);
    get("pbi_penalty", c.pbi_penalty);
    get("alpha", c.alpha);
    get("beta", c.beta);
    get("budget_epochs", c.budget_epochs);
    get("mutation_p_start", c.mutation_p_start);
    get("mutation_p_end", c.mutation_p_end);
    get("replacement_limit", c.replacement_limit);
    get("global_parent_prob", c.global_parent_prob);
    get("seed", c.seed);
    get("in_channels", c.in_channels);
    get("n_classes", c.n_classes);
    get("fold", c.fold);
    get("workers", c.workers);
    if (j.contains("dim")) c.dim = parse_dim(j.at("dim").get<std::string>());
    if (j.contains("input_shape")) {
      auto v = j.at("input_shape").get<std::vector<int>>();
      if (v.size() < 2 || v.size() > 3) throw ValidationError("input_shape must have 2 or 3 entries");
      c.input_shape = {v[0], v[1], v.size() == 3 ? v[2] : 1};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  return c;
}

namespace {

nlohmann::json entry_to_json(const ArchiveEntry& e) {
  return {{"genome", genome_to_json(e.genome)},
          {"objectives", objectives_to_json(e.objectives)},
          {"result", eval_result_to_json(e.result)}};
}

ArchiveEntry entry_from_json(const nlohmann::json& j) {
  try {
    return {genome_from_json(j.at("genome")), objectives_from_json(j.at("objectives")),
            eval_result_from_json(j.at("result"))};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed archive entry: ") + e.what());
  }
}

}  // namespace

nlohmann::json archive_to_json(const ParetoArchive& archive) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& e : archive.sorted()) members.push_back(entry_to_json(e));
  return {{"members", members}};
}

ParetoArchive archive_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("members") || !j["members"].is_array())
    throw ValidationError("archive JSON lacks a 'members' array");
  ParetoArchive a;
  for (const auto& m : j["members"]) a.insert(entry_from_json(m));
  return a;
}

nlohmann::json stats_to_json(const GenerationStats& s) {
  return {{"generation", s.generation},
          {"mutation_rate", s.mutation_rate},
          {"best_f1", s.best_f1},
          {"archive_size", s.archive_size},
          {"evaluations", s.evaluations}};
}

nlohmann::json state_to_json(const SearchState& s) {
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& sp : s.subproblems)
    subs.push_back({{"weight", sp.weight},
                    {"neighbors", sp.neighbors},
                    {"genome", genome_to_json(sp.genome)},
                    {"objectives", objectives_to_json(sp.objectives)},
                    {"result", eval_result_to_json(sp.result)}});
  nlohmann::json archive = nlohmann::json::array();
  for (const auto& e : s.archive.entries()) archive.push_back(entry_to_json(e));
  nlohmann::json cache = nlohmann::json::array();
  for (const auto& [key, e] : s.cache)
    cache.push_back({{"key", key},
                     {"genome", genome_to_json(e.genome)},
                     {"failed", e.failed},
                     {"result", eval_result_to_json(e.result)}});
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : s.history) history.push_back(stats_to_json(h));
  return {{"generation", s.generation},
          {"evaluations", s.evaluations},
          {"ideal", objectives_to_json(s.ideal)},
          {"nadir", objectives_to_json(s.nadir)},
          {"subproblems", subs},
          {"archive", archive},
          {"cache", cache},
          {"history", history},
          {"rng", s.rng.state()}};
}

SearchState state_from_json(const nlohmann::json& j) {
  try {
    SearchState s;
    s.generation = j.at("generation").get<int>();
    s.evaluations = j.at("evaluations").get<std::size_t>();
    s.ideal = objectives_from_json(j.at("ideal"));
    s.nadir = objectives_from_json(j.at("nadir"));
    for (const auto& sj : j.at("subproblems")) {
      Subproblem sp;
      sp.weight = sj.at("weight").get<WeightVector>();
      sp.neighbors = sj.at("neighbors").get<std::vector<int>>();
      sp.genome = genome_from_json(sj.at("genome"));
      sp.objectives = objectives_from_json(sj.at("objectives"));
      sp.result = eval_result_from_json(sj.at("result"));
      s.subproblems.push_back(std::move(sp));
    }
    // Members were mutually nondominated when saved, so insert() restores
    // them unchanged and in order.
    for (const auto& e : j.at("archive")) s.archive.insert(entry_from_json(e));
    for (const auto& cj : j.at("cache")) {
      s.cache[cj.at("key").get<std::string>()] = {genome_from_json(cj.at("genome")), cj.at("failed").get<bool>(),
                                                  eval_result_from_json(cj.at("result"))};
    }
    for (const auto& hj : j.at("history")) {
      GenerationStats h;
      h.generation = hj.at("generation").get<int>();
      h.mutation_rate = hj.at("mutation_rate").get<double>();
      h.best_f1 = hj.at("best_f1").get<double>();
      h.archive_size = hj.at("archive_size").get<std::size_t>();
      h.evaluations = hj.at("evaluations").get<std::size_t>();
      s.history.push_back(h);
    }
    s.rng.set_state(j.at("rng").get<std::string>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace evofcn
