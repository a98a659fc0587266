#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "evofcn/archmodel.hpp"
#include "evofcn/errors.hpp"
#include "evofcn/evaluator.hpp"

using namespace evofcn;

namespace {

Genome ref2d() { return {7, 16, 1, 3, 7, Activation::relu, Merge::concat, 0.15, 4e-4}; }

class CountingEvaluator final : public Evaluator {
 public:
  std::atomic<int> calls{0};
  std::atomic<int> fail_next{0};
  int delay_ms = 0;
  EvalResult evaluate(const EvalRequest& r) override {
    ++calls;
    if (delay_ms) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
    if (fail_next > 0) {
      --fail_next;
      throw EvaluationError("scripted failure");
    }
    return surrogate_evaluate(r.genome, r.dim, r.budget_epochs);
  }
  bool concurrent() const override { return true; }
};

}  // namespace

TEST_CASE("surrogate closed form") {
  SUBCASE("frozen value for the reference 2D genome") {
    const auto r = surrogate_evaluate(ref2d(), Dim::d2, 120);
    CHECK(r.param_count == 1641730);
    CHECK(std::abs(r.dsc_val - 0.8837584435014139) < 1e-15);
    CHECK(std::abs(r.dsc_train - 0.9137584435014139) < 1e-15);
    CHECK(r.e_max == 120);
    CHECK(std::abs(f1_objective(r, 0.25, 0.25, 120) - 0.13780194562323267) < 1e-12);
  }
  SUBCASE("peak learning rate and dropout") {
    Genome g = ref2d();
    g.dropout = 0.2;
    const auto r = surrogate_evaluate(g, Dim::d2, 120);
    const double p = static_cast<double>(r.param_count);
    CHECK(std::abs(r.dsc_val - (0.55 + 0.4 * p / (p + 3e5))) < 1e-15);
    CHECK(r.e_max == 120);
  }
  SUBCASE("large networks approach the asymptote") {
    Genome g{9, 32, 7, 7, 7, Activation::relu, Merge::concat, 0.5, 1e-5};
    const auto r = surrogate_evaluate(g, Dim::d2, 120);
    const double z = std::log10(1e-5) - std::log10(4e-4);
    const double cap = 0.95 * std::exp(-z * z / 2) * (1 - 0.1 * 0.3);
    CHECK(r.dsc_val < cap);
    CHECK(r.dsc_val > 0.98 * cap);
    CHECK(r.e_max == std::lround(120 * (0.4 + 0.6 * std::exp(-z * z / 2))));
  }
  SUBCASE("pure and consistent with the parameter counter") {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
      const Genome g = random_genome(default_search_space(Dim::d3), rng);
      const auto a = surrogate_evaluate(g, Dim::d3, 120);
      CHECK(a == surrogate_evaluate(g, Dim::d3, 120));
      CHECK(a.param_count == count_parameters(g, Dim::d3));
      CHECK_NOTHROW(check_eval_result(a, 120));
    }
  }
  SUBCASE("strictly increasing in size at the peak") {
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
      Genome a = random_genome(default_search_space(Dim::d2), rng);
      Genome b = random_genome(default_search_space(Dim::d2), rng);
      a.lr = b.lr = 4e-4;
      a.dropout = b.dropout = 0.2;
      const auto ra = surrogate_evaluate(a, Dim::d2, 120), rb = surrogate_evaluate(b, Dim::d2, 120);
      if (ra.param_count < rb.param_count) CHECK(ra.dsc_val < rb.dsc_val);
      if (ra.param_count > rb.param_count) CHECK(ra.dsc_val > rb.dsc_val);
    }
  }
}

TEST_CASE("caching wrapper") {
  auto inner = std::make_shared<CountingEvaluator>();
  CachedEvaluator cache(inner);
  EvalRequest r{ref2d(), Dim::d2, 120, 0, 1};

  SUBCASE("repeat requests call through once") {
    const auto a = cache.evaluate(r);
    const auto b = cache.evaluate(r);
    CHECK(a == b);
    CHECK(inner->calls == 1);
    CHECK(a == surrogate_evaluate(r.genome, r.dim, r.budget_epochs));
  }
  SUBCASE("rounding-level lr differences share an entry") {
    cache.evaluate(r);
    EvalRequest near = r;
    near.genome.lr *= 1 + 1e-10;
    cache.evaluate(near);
    CHECK(inner->calls == 1);
  }
  SUBCASE("different merge, dim, or fold are distinct") {
    cache.evaluate(r);
    EvalRequest other = r;
    other.genome.merge = Merge::sum;
    cache.evaluate(other);
    other = r;
    other.fold = 3;
    cache.evaluate(other);
    CHECK(inner->calls == 3);
    CHECK(cache.size() == 3);
  }
  SUBCASE("failures pass through and are not cached") {
    inner->fail_next = 1;
    CHECK_THROWS_AS(cache.evaluate(r), EvaluationError);
    CHECK(cache.size() == 0);
    CHECK_NOTHROW(cache.evaluate(r));
    CHECK(inner->calls == 2);
  }
  SUBCASE("concurrent identical requests trigger one inner call") {
    inner->delay_ms = 100;
    std::vector<std::thread> ts;
    std::vector<EvalResult> out(8);
    for (int i = 0; i < 8; ++i) ts.emplace_back([&, i] { out[i] = cache.evaluate(r); });
    for (auto& t : ts) t.join();
    CHECK(inner->calls == 1);
    for (const auto& o : out) CHECK(o == out.front());
  }
}
