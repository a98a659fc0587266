#include "evofcn/evaluator.hpp"

#include <algorithm>
#include <cmath>

#include "evofcn/archmodel.hpp"

namespace evofcn {

namespace {
constexpr double kHalfSaturation = 3e5;
constexpr double kPeakLr = 4e-4;
constexpr double kPeakDropout = 0.2;
}  // namespace

EvalResult surrogate_evaluate(const Genome& g, Dim dim, int budget_epochs, int in_channels,
                              int n_classes) {
  const std::int64_t p = count_parameters(g, dim, in_channels, n_classes);
  const double pd = static_cast<double>(p);
  const double z = std::log10(g.lr) - std::log10(kPeakLr);
  const double bell = std::exp(-z * z / 2.0);
  const double drop_pen = 1.0 - 0.1 * std::abs(g.dropout - kPeakDropout);

  EvalResult r;
  r.dsc_val = std::clamp((0.55 + 0.4 * pd / (pd + kHalfSaturation)) * bell * drop_pen, 0.0, 1.0);
  r.dsc_train = std::min(1.0, r.dsc_val + 0.03);
  r.e_max = static_cast<int>(std::lround(budget_epochs * std::min(1.0, 0.4 + 0.6 * bell)));
  r.param_count = p;
  return r;
}

std::string CachedEvaluator::key(const EvalRequest& r) {
  return canonical_key(r.genome) + "|" + std::string(to_string(r.dim)) + "|E" +
         std::to_string(r.budget_epochs) + "|fold" + std::to_string(r.fold);
}

EvalResult CachedEvaluator::evaluate(const EvalRequest& request) {
  const std::string k = key(request);
  std::promise<EvalResult> promise;
  {
    std::unique_lock lock(mu_);
    auto it = entries_.find(k);
    if (it != entries_.end()) {
      auto fut = it->second;
      lock.unlock();
      return fut.get();
    }
    entries_.emplace(k, promise.get_future().share());
  }
  try {
    EvalResult r = inner_->evaluate(request);
    promise.set_value(r);
    return r;
  } catch (...) {
    // Waiters see the failure; the entry is dropped so a later call retries.
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mu_);
    entries_.erase(k);
    throw;
  }
}

std::size_t CachedEvaluator::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

}  // namespace evofcn
