// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "evofcn/archmodel.hpp"
#include "evofcn/driver.hpp"
#include "evofcn/ensemble.hpp"
#include "evofcn/errors.hpp"
#include "evofcn/metrics.hpp"
#include "evofcn/moead.hpp"
#include "evofcn/objectives.hpp"
#include "evofcn/subprocess.hpp"
#include "oracles.hpp"

using namespace evofcn;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

// Collects the reasons a criterion failed.
struct Verdict {
  std::vector<std::string> problems;
  std::string detail;
  void expect(bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path scratch(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("evofcn_accept_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void reference_counts(Verdict& v) {
  const auto dir = scratch("params");
  const auto t0 = Clock::now();
  struct Case {
    Genome g;
    Dim dim;
    const char* name;
    double published;
  };
  const Case cases[] = {
      {{7, 16, 1, 3, 7, Activation::relu, Merge::concat, 0.15, 4e-4}, Dim::d2, "2d", 1.6e6},
      {{5, 32, 3, 1, 5, Activation::elu, Merge::concat, 0.1, 1e-4}, Dim::d3, "3d", 3.9e6},
  };
  for (const auto& c : cases) {
    const auto path = dir / (std::string(c.name) + ".json");
    spit(path, genome_to_json(c.g).dump());
    ParamsCommand p;
    p.genome = path;
    p.dim = c.name;
    std::ostringstream out, err;
    const int code = cmd_params(p, out, err);
    v.expect(code == kExitOk, std::string(c.name) + " params exit " + std::to_string(code) + ": " + err.str());
    if (code != kExitOk) continue;
    const auto total = json::parse(out.str()).at("total_params").get<std::int64_t>();
    const auto want = oracle::parameter_count(c.g, c.dim);
    v.expect(std::abs(total / c.published - 1.0) <= 0.10, std::string(c.name) + " count outside 10% band");
    v.expect(total == want, std::string(c.name) + " count differs from the layer oracle");
    v.detail += std::string(c.name) + "=" + std::to_string(total) + " ";
  }
  const double dt = seconds_since(t0);
  v.expect(dt < 1.0, "runtime over 1 s");
  v.detail += "in " + std::to_string(dt) + " s";
  fs::remove_all(dir);
}

void objective_formulas(Verdict& v) {
  const ObjectiveWeights w{};
  v.expect(w.alpha == 0.25 && w.beta == 0.25 && w.budget_epochs == 120, "default weights");
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  v.expect(near(f1_objective({1, 1, 120, 0}, 0.25, 0.25, 120), 0.0), "perfect fit must score 0");
  v.expect(near(f1_objective({0.9, 0.8, 60, 0}, 0.25, 0.25, 120), 0.35), "0.35 example");
  v.expect(near(f1_objective({0, 0, 0, 0}, 0.25, 0.25, 120), 1.5), "upper bound alpha+1+beta");
  const auto ov = objective_vector({0.9, 0.8, 60, 1600000}, w);
  v.expect(near(ov.f1, 0.35) && ov.f2 == 1.6e6, "objective vector example");
  v.expect(objective_vector({1, 1, 120, 10}, w) == ObjectiveVector{0, 10}, "perfect result with 10 params");
  v.expect(objective_vector({0.7, 0.6, 90, 5}, w).f1 == objective_vector({0.7, 0.6, 90, 5000}, w).f1,
           "f1 must not depend on size");
  const LabelGrid a = [] {
    LabelGrid g({4, 2, 1}, {1, 1, 1});
    g.data = {1, 1, 1, 1, 0, 0, 0, 0};
    return g;
  }();
  LabelGrid b = a;
  b.data = {0, 0, 1, 1, 1, 1, 0, 0};
  v.expect(near(dice_coefficient(a, b), 0.5), "dice 2*2/(4+4)");
  v.expect(near(dice_coefficient(a, a), 1.0), "dice identity");
}

void brute_force_search(Verdict& v) {
  const auto t0 = Clock::now();
  const auto space = oracle::discrete_space();
  const auto all = oracle::enumerate(space);
  v.expect(all.size() == 36864, "discrete space has " + std::to_string(all.size()) + " genomes");
  const ObjectiveWeights w{};
  std::vector<ObjectiveVector> objs;
  objs.reserve(all.size());
  for (const auto& g : all) objs.push_back(objective_vector(surrogate_evaluate(g, Dim::d2, 120), w));

  // True front: sort by f1 then f2 and sweep.
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
    return objs[a].f1 != objs[b].f1 ? objs[a].f1 < objs[b].f1 : objs[a].f2 < objs[b].f2;
  });
  std::vector<ObjectiveVector> front;
  double best_f2 = std::numeric_limits<double>::infinity();
  for (auto i : idx)
    if (objs[i].f2 < best_f2) {
      front.push_back(objs[i]);
      best_f2 = objs[i].f2;
    }
  ObjectiveVector ideal = front.front(), nadir = front.front();
  for (const auto& f : front) {
    ideal = {std::min(ideal.f1, f.f1), std::min(ideal.f2, f.f2)};
    nadir = {std::max(nadir.f1, f.f1), std::max(nadir.f2, f.f2)};
  }
  auto norm = [&](const ObjectiveVector& f) {
    return std::pair{(f.f1 - ideal.f1) / (nadir.f1 - ideal.f1), (f.f2 - ideal.f2) / (nadir.f2 - ideal.f2)};
  };
  std::vector<std::pair<double, double>> nf;
  for (const auto& f : front) nf.push_back(norm(f));
  const double hv_true = oracle::hypervolume(nf, {1.0, 1.0});

  auto truly_nondominated = [&](const ObjectiveVector& f) {
    for (const auto& o : objs)
      if (dominates(o, f)) return false;
    return true;
  };

  SurrogateEvaluator ev;
  for (std::uint64_t seed : {1, 2, 3}) {
    SearchConfig cfg;
    cfg.population_size = 50;
    cfg.generations = 40;
    cfg.pbi_penalty = 0.1;
    cfg.seed = seed;
    const auto r = run_search(cfg, space, ev);
    std::vector<std::pair<double, double>> pts;
    int dominated = 0;
    for (const auto& e : r.archive.entries()) {
      if (!truly_nondominated(e.objectives)) ++dominated;
      pts.push_back(norm(e.objectives));
    }
    const double ratio = oracle::hypervolume(pts, {1.0, 1.0}) / hv_true;
    v.expect(dominated == 0, "seed " + std::to_string(seed) + ": " + std::to_string(dominated) +
                                 " archive members are dominated in the full space");
    v.expect(ratio >= 0.95, "seed " + std::to_string(seed) + ": hypervolume ratio " + std::to_string(ratio));
    char buf[96];
    std::snprintf(buf, sizeof buf, "seed %llu hv %.4f (%zu/%zu) ", static_cast<unsigned long long>(seed), ratio,
                  r.archive.size(), front.size());
    v.detail += buf;
  }
  const double dt = seconds_since(t0);
  v.expect(dt < 300, "runtime over 5 min");
  char tail[32];
  std::snprintf(tail, sizeof tail, "in %.1f s", dt);
  v.detail += tail;
}

void determinism_and_resume(Verdict& v) {
  const auto dir = scratch("resume");
  spit(dir / "c.json", json{{"population_size", 50}, {"generations", 40}, {"seed", 17}}.dump());
  auto search = [&](const std::string& name, int stop_after) {
    SearchCommand c;
    c.config = dir / "c.json";
    c.dim = "2d";
    c.out = dir / name;
    c.stop_after = stop_after;
    std::ostringstream out, err;
    return cmd_search(c, out, err);
  };
  v.expect(search("a", -1) == kExitOk, "first run");
  v.expect(search("b", -1) == kExitOk, "second run");
  const auto a = slurp(dir / "a" / "archive.json");
  v.expect(!a.empty() && a == slurp(dir / "b" / "archive.json"), "reruns differ");
  v.expect(search("c", 20) == kExitOk, "interrupted run");
  v.expect(!fs::exists(dir / "c" / "archive.json"), "interrupted run wrote a final archive");
  SearchCommand resume;
  resume.resume = dir / "c";
  std::ostringstream out, err;
  v.expect(cmd_search(resume, out, err) == kExitOk, "resume failed: " + err.str());
  v.expect(slurp(dir / "c" / "archive.json") == a, "resumed archive differs");
  v.expect(slurp(dir / "c" / "selected_2d.json") == slurp(dir / "a" / "selected_2d.json"), "selection differs");
  fs::remove_all(dir);
}

void metric_oracles(Verdict& v) {
  Rng rng(2024);
  int checked = 0;
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    LabelGrid a, b;
    do {
      a = t % 2 ? oracle::random_mask(rng, {16, 16, 16}, 0.2) : oracle::random_blobs(rng, {16, 16, 16}, 3);
      b = t % 2 ? oracle::random_mask(rng, {16, 16, 16}, 0.2) : oracle::random_blobs(rng, {16, 16, 16}, 3);
    } while (std::count(a.data.begin(), a.data.end(), 1) == 0 || std::count(b.data.begin(), b.data.end(), 1) == 0);
    a.spacing = b.spacing = {1.0, 1.0, 1.5};
    const auto got = surface_distance_metrics(a, b);
    const auto want = oracle::surface(a, b);
    worst = std::max({worst, std::abs(got.hd95 - want.hd95), std::abs(got.abd - want.abd)});
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      na += a.data[i] != 0;
      nb += b.data[i] != 0;
      both += a.data[i] && b.data[i];
    }
    const double dsc = 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
    const double rvd = 100.0 * std::abs(static_cast<double>(na) - static_cast<double>(nb)) / static_cast<double>(nb);
    v.expect(dice_coefficient(a, b) == dsc, "dsc mismatch on pair " + std::to_string(t));
    v.expect(arvd(a, b) == rvd, "arvd mismatch on pair " + std::to_string(t));
    ++checked;
  }
  v.expect(worst <= 1e-9, "distance error " + std::to_string(worst));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%d pairs, max distance error %.2e", checked, worst);
  v.detail = buf;
}

void ensemble_properties(Verdict& v) {
  auto labels = [](std::vector<std::uint8_t> d) {
    LabelGrid g({static_cast<int>(d.size()), 1, 1}, {1, 1, 1});
    g.data = std::move(d);
    return g;
  };
  v.expect(majority_vote({labels({1}), labels({1}), labels({1}), labels({0}), labels({0})}).data[0] == 1,
           "{1,1,1,0,0} -> 1");
  Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    std::vector<LabelGrid> voters;
    for (int k = 0; k < 5; ++k) {
      std::vector<std::uint8_t> d(128);
      for (auto& x : d) x = static_cast<std::uint8_t>(rng.below(3));
      voters.push_back(labels(d));
    }
    const auto ref = majority_vote(voters);
    auto perm = voters;
    for (int i = 4; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    if (majority_vote(perm) != ref) {
      v.expect(false, "permutation changed the vote");
      break;
    }
    if (majority_vote({voters[0], voters[0], voters[0]}) != voters[0]) {
      v.expect(false, "unanimity");
      break;
    }
  }
  int volumes = 0;
  for (int t = 0; t < 50; ++t) {
    const auto g = oracle::random_mask(rng, {12, 11, 10}, 0.1 + 0.3 * rng.uniform());
    for (auto c : {Connectivity::six, Connectivity::twenty_six})
      v.expect(keep_largest_component(g, c) == oracle::largest_component(g, static_cast<int>(c)),
               "largest component mismatch on volume " + std::to_string(t) + " at " +
                   std::to_string(static_cast<int>(c)));
    ++volumes;
  }
  v.detail = std::to_string(volumes) + " volumes x 2 connectivities";
}

void protocol_conformance(Verdict& v) {
  using namespace std::chrono_literals;
  auto worker = [](const std::string& mode) { return std::string("'") + ECHO_WORKER + "' " + mode; };
  const EvalRequest req{{5, 8, 3, 1, 3, Activation::relu, Merge::concat, 0.3, 2e-4}, Dim::d3, 120, 4, 99};
  const auto log = fs::temp_directory_path() / ("evofcn_accept_log_" + std::to_string(::getpid()));
  fs::remove(log);
  ::setenv("ECHO_LOG", log.c_str(), 1);
  try {
    WorkerConnection w(worker("fixed"), 10s);
    const auto r = w.evaluate(req, 10s);
    v.expect(r.dsc_train == 0.7071067811865476 && r.dsc_val == 0.3333333333333333 && r.e_max == 77 &&
                 r.param_count == 123456789,
             "fixed result fields");
  } catch (const std::exception& e) {
    v.expect(false, std::string("handshake/fixed: ") + e.what());
  }
  ::unsetenv("ECHO_LOG");
  {
    std::ifstream in(log);
    std::string first, second;
    std::getline(in, first);
    std::getline(in, second);
    const json j = json::parse(first, nullptr, false);
    std::set<std::string> keys, gkeys;
    if (j.is_object())
      for (const auto& [k, _] : j.items()) keys.insert(k);
    if (j.is_object() && j.contains("genome"))
      for (const auto& [k, _] : j.at("genome").items()) gkeys.insert(k);
    v.expect(keys == std::set<std::string>{"type", "id", "dim", "budget_epochs", "fold", "seed", "genome"},
             "request field names");
    v.expect(gkeys == std::set<std::string>{"n_blocks", "base_filters", "k1", "k2", "k3", "activation", "merge",
                                            "dropout", "lr"},
             "genome field names");
    v.expect(j.is_object() && j.value("type", "") == "evaluate" && j.value("dim", "") == "3d", "request values");
    v.expect(second == R"({"type":"shutdown"})", "shutdown line: " + second);
  }
  fs::remove(log);

  try {
    WorkerConnection w(worker("reverse 4"), 10s);
    std::vector<EvalResult> out(4);
    std::vector<std::thread> ts;
    for (int i = 0; i < 4; ++i)
      ts.emplace_back([&, i] {
        EvalRequest r = req;
        r.genome.n_blocks = 3 + 2 * i;
        out[i] = w.evaluate(r, 10s);
      });
    for (auto& t : ts) t.join();
    for (int i = 0; i < 4; ++i) {
      EvalRequest r = req;
      r.genome.n_blocks = 3 + 2 * i;
      v.expect(out[i] == surrogate_evaluate(r.genome, r.dim, r.budget_epochs), "out-of-order reply " + std::to_string(i));
    }
  } catch (const std::exception& e) {
    v.expect(false, std::string("out-of-order: ") + e.what());
  }

  try {
    WorkerConnection w(worker("error"), 10s);
    bool got = false;
    try {
      w.evaluate(req, 10s);
    } catch (const ProtocolError&) {
    } catch (const EvaluationError& e) {
      got = std::string(e.what()).find("CUDA out of memory") != std::string::npos;
    }
    v.expect(got, "error reply must surface as an evaluation failure with the message");
    v.expect(w.alive(), "error reply must not break the connection");
  } catch (const std::exception& e) {
    v.expect(false, std::string("error path: ") + e.what());
  }

  try {
    WorkerConnection w(worker("silent"), 10s);
    const auto t0 = Clock::now();
    bool timed_out = false;
    try {
      w.evaluate(req, 200ms);
    } catch (const EvaluationError&) {
      timed_out = true;
    }
    v.expect(timed_out && seconds_since(t0) < 5, "request timeout");
  } catch (const std::exception& e) {
    v.expect(false, std::string("timeout: ") + e.what());
  }
  {
    bool failed = false;
    try {
      WorkerConnection w(worker("no-hello"), 300ms);
    } catch (const EvaluationError&) {
      failed = true;
    }
    v.expect(failed, "handshake timeout");
  }
  {
    bool failed = false;
    try {
      WorkerConnection w(worker("unknown-id"), 10s);
      w.evaluate(req, 10s);
    } catch (const ProtocolError& e) {
      failed = e.raw_line().find("1001") != std::string::npos;
    }
    v.expect(failed, "unknown id must be a protocol error carrying the raw line");
  }
  v.detail = "handshake, correlation, error, timeouts, field names";
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<void(Verdict&)> run;
  };
  const Criterion criteria[] = {
      {"reference parameter counts", reference_counts},
      {"objective formulas", objective_formulas},
      {"search vs brute-force front", brute_force_search},
      {"determinism and resume", determinism_and_resume},
      {"metric oracles", metric_oracles},
      {"ensemble properties", ensemble_properties},
      {"protocol conformance", protocol_conformance},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Verdict v;
    try {
      c.run(v);
    } catch (const std::exception& e) {
      v.problems.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = v.problems.empty();
    failures += !ok;
    std::printf("%s  %s", ok ? "PASS" : "FAIL", c.name);
    if (!v.detail.empty()) std::printf("  [%s]", v.detail.c_str());
    std::printf("\n");
    for (const auto& p : v.problems) std::printf("      - %s\n", p.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
