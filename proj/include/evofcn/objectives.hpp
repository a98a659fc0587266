#pragma once

#include <cstdint>
#include <span>

#include <nlohmann/json.hpp>

namespace evofcn {

// What one partial-training run of a candidate reports.
struct EvalResult {
  double dsc_train = 0.0;
  double dsc_val = 0.0;
  int e_max = 0;  // epoch of peak validation DSC
  std::int64_t param_count = 0;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

struct ObjectiveVector {
  double f1 = 0.0;  // expected segmentation error
  double f2 = 0.0;  // trainable parameter count

  friend bool operator==(const ObjectiveVector&, const ObjectiveVector&) = default;
};

struct ObjectiveWeights {
  double alpha = 0.25;
  double beta = 0.25;
  int budget_epochs = 120;
};

// Overlap of two binary masks (nonzero = foreground). Two empty masks score 1.
double dice_coefficient(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

// alpha (1 - DSC_train) + (1 - DSC_val) + beta (E - e_max) / E
double f1_objective(const EvalResult& r, double alpha, double beta, int budget_epochs);

ObjectiveVector objective_vector(const EvalResult& r, const ObjectiveWeights& w);

// Minimization dominance: a <= b in both, strictly < in at least one.
inline bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
  return a.f1 <= b.f1 && a.f2 <= b.f2 && (a.f1 < b.f1 || a.f2 < b.f2);
}

void check_eval_result(const EvalResult& r, int budget_epochs);

nlohmann::json eval_result_to_json(const EvalResult& r);
EvalResult eval_result_from_json(const nlohmann::json& j);
nlohmann::json objectives_to_json(const ObjectiveVector& f);
ObjectiveVector objectives_from_json(const nlohmann::json& j);

}  // namespace evofcn
