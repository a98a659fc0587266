#pragma once

#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "evofcn/genome.hpp"
#include "evofcn/objectives.hpp"

namespace evofcn {

struct EvalRequest {
  Genome genome;
  Dim dim = Dim::d2;
  int budget_epochs = 120;
  int fold = 0;
  std::uint64_t seed = 0;
};

// Scores one candidate architecture. Implementations throw EvaluationError when
// the candidate cannot be scored.
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual EvalResult evaluate(const EvalRequest& request) = 0;
  // Whether evaluate() may be called from several threads at once.
  virtual bool concurrent() const = 0;
};

// Closed-form stand-in for partial training. Its size/accuracy tradeoff is
// synthetic; it exists so search dynamics can be checked against exhaustive
// enumeration.
EvalResult surrogate_evaluate(const Genome& g, Dim dim, int budget_epochs, int in_channels = 1,
                              int n_classes = 2);

class SurrogateEvaluator final : public Evaluator {
 public:
  SurrogateEvaluator(int in_channels = 1, int n_classes = 2)
      : in_channels_(in_channels), n_classes_(n_classes) {}

  EvalResult evaluate(const EvalRequest& r) override {
    return surrogate_evaluate(r.genome, r.dim, r.budget_epochs, in_channels_, n_classes_);
  }
  bool concurrent() const override { return true; }

 private:
  int in_channels_;
  int n_classes_;
};

// Memoizes an inner evaluator by (canonical genome, dim, budget, fold).
// Concurrent identical requests share one inner call; failures are not cached.
class CachedEvaluator final : public Evaluator {
 public:
  explicit CachedEvaluator(std::shared_ptr<Evaluator> inner) : inner_(std::move(inner)) {}

  EvalResult evaluate(const EvalRequest& request) override;
  bool concurrent() const override { return inner_->concurrent(); }

  std::size_t size() const;

 private:
  static std::string key(const EvalRequest& r);

  std::shared_ptr<Evaluator> inner_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_future<EvalResult>> entries_;
};

}  // namespace evofcn
