// Command-line front end: search, params, ensemble, metrics, pareto, preprocess.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "evofcn/driver.hpp"

int main(int argc, char** argv) {
  using namespace evofcn;
  std::signal(SIGPIPE, SIG_IGN);

  CLI::App app{"Multiobjective evolutionary search over encoder-decoder FCN genomes"};
  app.require_subcommand(1);

  SearchCommand search;
  auto* s = app.add_subcommand("search", "Run the architecture search (2D, 3D, or both)");
  s->add_option("--config", search.config, "JSON config mirroring SearchConfig field names");
  s->add_option("--evaluator", search.evaluator, "surrogate or subprocess")
      ->check(CLI::IsMember({"surrogate", "subprocess"}));
  s->add_option("--worker-cmd", search.worker_cmd, "Shell command launching one evaluator worker");
  s->add_option("--workers", search.workers, "Number of worker processes / evaluation threads")
      ->check(CLI::PositiveNumber);
  s->add_option("--dim", search.dim, "2d, 3d, or both")->check(CLI::IsMember({"2d", "3d", "both"}));
  s->add_option("--out", search.out, "Run directory");
  s->add_option("--resume", search.resume, "Continue the run in this directory");
  s->add_option("--fold", search.fold, "Phase-I fold (default: seeded random choice in 0..4)")
      ->check(CLI::NonNegativeNumber);
  s->add_option("--stop-after", search.stop_after, "Stop once this many generations have run");
  s->add_option("--timeout", search.request_timeout_s, "Per-evaluation timeout in seconds (subprocess evaluator)");

  ParamsCommand params;
  auto* p = app.add_subcommand("params", "Print the layer plan and trainable parameter count of a genome");
  p->add_option("--genome", params.genome, "Genome JSON (or a selected_*.json)")->required();
  p->add_option("--dim", params.dim, "2d or 3d")->check(CLI::IsMember({"2d", "3d"}));
  p->add_option("--input-shape", params.input_shape, "Spatial input extent, e.g. 128 128 or 96 96 16");
  p->add_option("--in-channels", params.in_channels, "Input channels")->check(CLI::PositiveNumber);
  p->add_option("--classes", params.n_classes, "Output classes")->check(CLI::PositiveNumber);

  EnsembleCommand ens;
  int conn = 26;
  auto* e = app.add_subcommand("ensemble", "Fuse per-fold 2D/3D probability maps into one segmentation");
  e->add_option("--maps-2d", ens.maps_2d, "Probability-map index files of the 2D models, one per fold")
      ->required();
  e->add_option("--maps-3d", ens.maps_3d, "Probability-map index files of the 3D models, same fold order")
      ->required();
  e->add_option("--out", ens.out, "Output SVOL label volume")->required();
  e->add_option("--connectivity", conn, "6 or 26")->check(CLI::IsMember({6, 26}));
  e->add_option("--target-dims", ens.target_dims, "Resample the result to these dims")->expected(3);
  e->add_option("--target-spacing", ens.target_spacing, "Resample the result to this spacing (mm)")->expected(3);

  MetricsCommand met;
  auto* m = app.add_subcommand("metrics", "DSC, HD95, ABD and aRVD of a segmentation against a reference");
  m->add_option("pred", met.pred, "Predicted label SVOL")->required();
  m->add_option("truth", met.truth, "Reference label SVOL")->required();

  ParetoCommand par;
  auto* pa = app.add_subcommand("pareto", "Dump an archive as CSV and an f1-vs-f2 SVG scatter");
  pa->add_option("archive", par.archive, "archive.json or a run directory")->required();
  pa->add_option("--csv", par.csv, "CSV output (default: stdout)");
  pa->add_option("--svg", par.svg, "SVG output");

  PreprocessCommand pre;
  auto* pr = app.add_subcommand("preprocess", "Resample a volume and rescale its intensities");
  pr->add_option("--in", pre.in, "Input SVOL")->required();
  pr->add_option("--out", pre.out, "Output SVOL")->required();
  pr->add_option("--spacing", pre.spacing, "Target spacing in mm")->expected(3);
  pr->add_option("--dims", pre.dims, "Target dims (default: preserve the physical extent)")->expected(3);
  pr->add_flag("--labels", pre.labels, "Treat the input as a label volume");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitValidation;
  }

  if (*s) return cmd_search(search, std::cout, std::cerr);
  if (*p) return cmd_params(params, std::cout, std::cerr);
  if (*e) {
    ens.connectivity = conn == 6 ? Connectivity::six : Connectivity::twenty_six;
    return cmd_ensemble(ens, std::cout, std::cerr);
  }
  if (*m) return cmd_metrics(met, std::cout, std::cerr);
  if (*pa) return cmd_pareto(par, std::cout, std::cerr);
  if (*pr) return cmd_preprocess(pre, std::cout, std::cerr);
  return kExitValidation;
}
