#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "evofcn/ensemble.hpp"
#include "evofcn/genome.hpp"
#include "evofcn/volume.hpp"

namespace evofcn {

// Process exit statuses shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 2,
  kExitEvaluator = 3,
  kExitIo = 4,
};

struct SearchCommand {
  std::filesystem::path config;  // empty = all defaults
  std::string evaluator = "surrogate";  // surrogate | subprocess
  std::string worker_cmd;
  std::optional<int> workers;  // overrides the config value
  std::string dim = "both";  // 2d | 3d | both
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  std::optional<int> fold;
  int stop_after = -1;
  double request_timeout_s = 3600;  // per evaluation, subprocess evaluator only
};

struct ParamsCommand {
  std::filesystem::path genome;  // a genome object, or any object with a "genome" key
  std::string dim = "2d";
  std::optional<std::vector<int>> input_shape;
  int in_channels = 1;
  int n_classes = 2;
};

struct EnsembleCommand {
  std::vector<std::filesystem::path> maps_2d;  // probability-map index files, one per fold
  std::vector<std::filesystem::path> maps_3d;
  std::filesystem::path out;
  Connectivity connectivity = Connectivity::twenty_six;
  std::optional<std::vector<int>> target_dims;  // resample the result back to these
  std::optional<std::vector<double>> target_spacing;
};

struct MetricsCommand {
  std::filesystem::path pred;
  std::filesystem::path truth;
};

struct ParetoCommand {
  std::filesystem::path archive;  // archive.json or a run directory
  std::filesystem::path csv;
  std::filesystem::path svg;
};

struct PreprocessCommand {
  std::filesystem::path in;
  std::filesystem::path out;
  std::vector<double> spacing{1.0, 1.0, 1.5};
  std::optional<std::vector<int>> dims;  // default: preserve physical extent
  bool labels = false;                   // nearest resampling, no intensity rescale
};

// Each returns an ExitCode; results go to `out`, diagnostics to `err`.
int cmd_search(const SearchCommand& c, std::ostream& out, std::ostream& err);
int cmd_params(const ParamsCommand& c, std::ostream& out, std::ostream& err);
int cmd_ensemble(const EnsembleCommand& c, std::ostream& out, std::ostream& err);
int cmd_metrics(const MetricsCommand& c, std::ostream& out, std::ostream& err);
int cmd_pareto(const ParetoCommand& c, std::ostream& out, std::ostream& err);
int cmd_preprocess(const PreprocessCommand& c, std::ostream& out, std::ostream& err);

// Phase-II fusion on in-memory maps: per fold average the 2D and 3D maps and
// take the argmax, vote across folds, then keep the largest component.
LabelGrid fuse_ensemble(const std::vector<ProbabilityMap>& maps_2d, const std::vector<ProbabilityMap>& maps_3d,
                        Connectivity connectivity = Connectivity::twenty_six);

// SVG scatter of f1 against f2 for the given points.
std::string pareto_svg(const std::vector<std::pair<double, double>>& points);

}  // namespace evofcn
