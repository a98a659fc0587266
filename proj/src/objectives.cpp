#include "evofcn/objectives.hpp"

#include <cmath>

#include "evofcn/errors.hpp"

namespace evofcn {

double dice_coefficient(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size())
    throw ValidationError("dice_coefficient: mask sizes differ (" + std::to_string(pred.size()) +
                          " vs " + std::to_string(truth.size()) + ")");
  std::int64_t inter = 0, np = 0, nt = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    np += p;
    nt += t;
    inter += p && t;
  }
  if (np + nt == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + nt);
}

void check_eval_result(const EvalResult& r, int budget_epochs) {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(r.dsc_train)) throw ValidationError("dsc_train outside [0, 1]");
  if (!in_unit(r.dsc_val)) throw ValidationError("dsc_val outside [0, 1]");
  if (r.e_max < 0 || r.e_max > budget_epochs)
    throw ValidationError("e_max " + std::to_string(r.e_max) + " outside [0, " +
                          std::to_string(budget_epochs) + "]");
  if (r.param_count < 0) throw ValidationError("param_count must be nonnegative");
}

double f1_objective(const EvalResult& r, double alpha, double beta, int budget_epochs) {
  if (budget_epochs < 1) throw ValidationError("budget_epochs must be >= 1");
  if (!(alpha >= 0 && alpha <= 1 && beta >= 0 && beta <= 1))
    throw ValidationError("alpha and beta must lie in [0, 1]");
  check_eval_result(r, budget_epochs);
  const double E = budget_epochs;
  return alpha * (1.0 - r.dsc_train) + (1.0 - r.dsc_val) + beta * ((E - r.e_max) / E);
}

ObjectiveVector objective_vector(const EvalResult& r, const ObjectiveWeights& w) {
  return {f1_objective(r, w.alpha, w.beta, w.budget_epochs), static_cast<double>(r.param_count)};
}

nlohmann::json eval_result_to_json(const EvalResult& r) {
  return {{"dsc_train", r.dsc_train},
          {"dsc_val", r.dsc_val},
          {"e_max", r.e_max},
          {"param_count", r.param_count}};
}

EvalResult eval_result_from_json(const nlohmann::json& j) {
  try {
    EvalResult r;
    r.dsc_train = j.at("dsc_train").get<double>();
    r.dsc_val = j.at("dsc_val").get<double>();
    r.e_max = j.at("e_max").get<int>();
    r.param_count = j.at("param_count").get<std::int64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed eval result: ") + e.what());
  }
}

nlohmann::json objectives_to_json(const ObjectiveVector& f) { return {{"f1", f.f1}, {"f2", f.f2}}; }

ObjectiveVector objectives_from_json(const nlohmann::json& j) {
  try {
    return {j.at("f1").get<double>(), j.at("f2").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed objective vector: ") + e.what());
  }
}

}  // namespace evofcn
