#include "evofcn/driver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evofcn/archmodel.hpp"
#include "evofcn/errors.hpp"
#include "evofcn/evaluator.hpp"
#include "evofcn/metrics.hpp"
#include "evofcn/moead.hpp"
#include "evofcn/subprocess.hpp"

namespace evofcn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFolds = 5;

// --- small helpers --------------------------------------------------------

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) {
  const std::string text = read_text(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

// Write-then-rename so a crash never leaves a half-written file behind.
void write_text(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << text;
    if (!out.flush()) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + p.string() + "': " + ec.message());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex_digest(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Shape3 to_shape(const std::vector<int>& v, Dim dim) {
  const int rank = spatial_rank(dim);
  if (static_cast<int>(v.size()) != rank && !(dim == Dim::d2 && v.size() == 3 && v[2] == 1))
    throw ValidationError("input shape for " + std::string(to_string(dim)) + " needs " + std::to_string(rank) +
                          " entries");
  for (int x : v)
    if (x < 1) throw ValidationError("input shape entries must be positive");
  return {v[0], v[1], rank == 3 ? v[2] : 1};
}

Shape3 default_input_shape(Dim dim) { return dim == Dim::d2 ? Shape3{128, 128, 1} : Shape3{96, 96, 16}; }

// Exceptions to exit statuses.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    for (const auto& v : e.violations()) err << "  - " << v << "\n";
    return kExitValidation;
  } catch (const EvaluationError& e) {
    err << "evaluator error: " << e.what() << "\n";
    return kExitEvaluator;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 1;
  }
}

// --- search ---------------------------------------------------------------

struct DimRun {
  Dim dim;
  fs::path dir;
  SearchConfig cfg;
  SearchSpace space;
  std::optional<SearchState> resume;
};

const std::vector<std::string> kConfigKeys = {
    "population_size", "generations",    "neighborhood_size", "pbi_penalty", "alpha",
    "beta",            "budget_epochs",  "mutation_p_start",  "mutation_p_end", "replacement_limit",
    "global_parent_prob", "seed",        "in_channels",       "n_classes",   "fold",
    "workers",         "input_shape_2d", "input_shape_3d",    "search_space"};

json run_config_json(const DimRun& r) {
  json j = config_to_json(r.cfg);
  j["search_space"] = search_space_to_json(r.space);
  return j;
}

std::vector<Dim> dims_for(const std::string& s) {
  if (s == "both") return {Dim::d2, Dim::d3};
  return {parse_dim(s)};
}

std::vector<DimRun> fresh_runs(const SearchCommand& c, std::ostream& err) {
  json user = json::object();
  if (!c.config.empty()) user = read_json(c.config);
  if (!user.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [k, v] : user.items())
    if (std::find(kConfigKeys.begin(), kConfigKeys.end(), k) == kConfigKeys.end())
      err << "warning: ignoring unknown config key '" << k << "'\n";

  json scalars = user;
  scalars.erase("input_shape_2d");
  scalars.erase("input_shape_3d");
  scalars.erase("search_space");
  scalars.erase("input_shape");
  scalars.erase("dim");
  SearchConfig base = config_from_json(scalars);
  if (c.workers) base.workers = *c.workers;
  if (c.fold) {
    base.fold = *c.fold;
  } else if (!user.contains("fold")) {
    Rng pick(splitmix64(base.seed));
    base.fold = static_cast<int>(pick.below(kFolds));
  }

  const auto dims = dims_for(c.dim);
  std::vector<DimRun> runs;
  for (Dim d : dims) {
    DimRun r{d, dims.size() > 1 ? c.out / std::string(to_string(d)) : c.out, base, default_search_space(d), {}};
    r.cfg.dim = d;
    const std::string shape_key = "input_shape_" + std::string(to_string(d));
    r.cfg.input_shape =
        user.contains(shape_key) ? to_shape(user.at(shape_key).get<std::vector<int>>(), d) : default_input_shape(d);
    json sj = nullptr;
    if (user.contains("search_space")) {
      const json& all = user.at("search_space");
      if (!all.is_object()) throw ValidationError("search_space must be an object keyed by \"2d\"/\"3d\"");
      if (all.contains(to_string(d))) sj = all.at(std::string(to_string(d)));
    }
    r.space = search_space_from_json(sj, d);
    validate_config(r.cfg);
    runs.push_back(std::move(r));
  }
  return runs;
}

std::vector<DimRun> resumed_runs(const fs::path& dir, const json& manifest) {
  std::vector<DimRun> runs;
  try {
    for (const auto& name : manifest.at("dims")) {
      const Dim d = parse_dim(name.get<std::string>());
      const fs::path sub = dir / manifest.at("runs").at(name.get<std::string>()).at("dir").get<std::string>();
      const json cj = read_json(sub / "config.json");
      DimRun r{d, sub, config_from_json(cj), search_space_from_json(cj.value("search_space", json()), d), {}};
      if (r.cfg.dim != d) throw ValidationError("config.json in '" + sub.string() + "' is for another dim");
      const fs::path ck = sub / "checkpoint.json";
      if (fs::exists(ck)) r.resume = state_from_json(read_json(ck));
      runs.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ValidationError("unresumable run directory '" + dir.string() + "': " + e.what());
  }
  return runs;
}

std::unique_ptr<Evaluator> make_evaluator(const SearchCommand& c, const SearchConfig& cfg) {
  if (c.evaluator == "surrogate") return std::make_unique<SurrogateEvaluator>(cfg.in_channels, cfg.n_classes);
  if (c.evaluator == "subprocess") {
    if (c.worker_cmd.empty()) throw ValidationError("--evaluator subprocess requires --worker-cmd");
    SubprocessOptions o;
    o.command = c.worker_cmd;
    o.workers = cfg.workers;
    if (!(c.request_timeout_s > 0)) throw ValidationError("--timeout must be positive");
    o.request_timeout = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::duration<double>(c.request_timeout_s));
    return std::make_unique<SubprocessEvaluator>(o);
  }
  throw ValidationError("unknown evaluator '" + c.evaluator + "' (expected surrogate or subprocess)");
}

std::string history_text(const SearchState& s) {
  std::string out;
  for (const auto& h : s.history) out += stats_to_json(h).dump() + "\n";
  return out;
}

json selected_json(const ArchiveEntry& e, Dim d) {
  return {{"dim", to_string(d)},
          {"genome", genome_to_json(e.genome)},
          {"objectives", objectives_to_json(e.objectives)},
          {"result", eval_result_to_json(e.result)}};
}

}  // namespace

int cmd_search(const SearchCommand& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    fs::path top;
    json manifest;
    std::vector<DimRun> runs;
    if (c.resume) {
      top = *c.resume;
      if (!c.out.empty() && fs::weakly_canonical(c.out) != fs::weakly_canonical(top))
        throw ValidationError("--out and --resume name different directories");
      const fs::path mp = top / "manifest.json";
      if (!fs::exists(mp)) throw ValidationError("'" + top.string() + "' has no manifest.json; cannot resume");
      manifest = read_json(mp);
      runs = resumed_runs(top, manifest);
    } else {
      if (c.out.empty()) throw ValidationError("--out is required");
      top = c.out;
      runs = fresh_runs(c, err);
      make_dirs(top);
      json cfgs = json::object();
      manifest = {{"phase", "search"}, {"created", timestamp()}, {"evaluator", c.evaluator}};
      manifest["dims"] = json::array();
      manifest["runs"] = json::object();
      manifest["fold"] = json::object();
      for (auto& r : runs) {
        const std::string name(to_string(r.dim));
        make_dirs(r.dir);
        const json cj = run_config_json(r);
        write_json(r.dir / "config.json", cj);
        cfgs[name] = cj;
        manifest["dims"].push_back(name);
        manifest["fold"][name] = r.cfg.fold;
        manifest["runs"][name] = {{"dir", fs::relative(r.dir, top).lexically_normal().string()},
                                  {"config", cj},
                                  {"completed", false},
                                  {"generation", 0}};
      }
      manifest["run_id"] = hex_digest(cfgs.dump());
      write_json(top / "manifest.json", manifest);
    }

    for (auto& r : runs) {
      const std::string name(to_string(r.dim));
      auto evaluator = make_evaluator(c, r.cfg);
      SearchOptions opts;
      opts.stop_after = c.stop_after;
      opts.on_generation = [&](const SearchState& s) {
        write_json(r.dir / "checkpoint.json", state_to_json(s));
        write_text(r.dir / "history.jsonl", history_text(s));
        err << "[" << name << "] generation " << s.generation << "/" << r.cfg.generations
            << "  archive " << s.archive.size() << "  evaluations " << s.evaluations << "\n";
      };
      const SearchResult res = run_search(r.cfg, r.space, *evaluator, opts, std::move(r.resume));
      auto& entry = manifest["runs"][name];
      entry["generation"] = res.state.generation;
      entry["completed"] = res.completed;
      entry["artifacts"] = {{"config", "config.json"}, {"history", "history.jsonl"}, {"checkpoint", "checkpoint.json"}};
      if (res.completed) {
        write_json(r.dir / "archive.json", archive_to_json(res.archive));
        const ArchiveEntry& best = select_final(res.archive);
        const std::string sel = "selected_" + name + ".json";
        write_json(top / sel, selected_json(best, r.dim));
        entry["artifacts"]["archive"] = "archive.json";
        manifest["selected"][name] = sel;
        out << name << ": archive of " << res.archive.size() << " after " << res.state.evaluations
            << " evaluations; selected f1=" << fmt("%.6g", best.objectives.f1)
            << " params=" << best.result.param_count << "\n";
      } else {
        out << name << ": stopped after generation " << res.state.generation << "; continue with --resume "
            << top.string() << "\n";
      }
    }
    manifest["updated"] = timestamp();
    write_json(top / "manifest.json", manifest);
    return kExitOk;
  });
}

// --- params ---------------------------------------------------------------

int cmd_params(const ParamsCommand& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    json j = read_json(c.genome);
    if (j.is_object() && j.contains("genome")) j = j.at("genome");
    const Genome g = genome_from_json(j);
    const Dim d = parse_dim(c.dim);
    const Shape3 shape = c.input_shape ? to_shape(*c.input_shape, d) : default_input_shape(d);
    const ArchitecturePlan plan = build_plan(g, d, shape, c.in_channels, c.n_classes);
    json shape_json = json::array();
    for (int a = 0; a < spatial_rank(d); ++a) shape_json.push_back(shape[a]);
    nlohmann::ordered_json report;
    report["dim"] = to_string(d);
    report["input_shape"] = shape_json;
    report["in_channels"] = c.in_channels;
    report["n_classes"] = c.n_classes;
    report["genome"] = genome_to_json(g);
    report["layers"] = describe(plan);
    report["total_params"] = count_parameters(plan);
    out << report.dump(2) << "\n";
    return kExitOk;
  });
}

// --- ensemble -------------------------------------------------------------

LabelGrid fuse_ensemble(const std::vector<ProbabilityMap>& maps_2d, const std::vector<ProbabilityMap>& maps_3d,
                        Connectivity connectivity) {
  if (maps_2d.size() != maps_3d.size())
    throw ValidationError("need one 3D map per 2D map, got " + std::to_string(maps_2d.size()) + " and " +
                          std::to_string(maps_3d.size()));
  if (maps_2d.empty()) throw ValidationError("no probability maps given");
  std::vector<LabelGrid> folds;
  for (std::size_t i = 0; i < maps_2d.size(); ++i)
    folds.push_back(argmax_labels(average_probability_maps({maps_2d[i], maps_3d[i]})));
  return keep_largest_component(majority_vote(folds), connectivity);
}

int cmd_ensemble(const EnsembleCommand& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    if (c.out.empty()) throw ValidationError("--out is required");
    std::vector<ProbabilityMap> m2, m3;
    for (const auto& p : c.maps_2d) {
      m2.push_back(read_probability_map(p));
      validate_probability_map(m2.back());
    }
    for (const auto& p : c.maps_3d) {
      m3.push_back(read_probability_map(p));
      validate_probability_map(m3.back());
    }
    LabelGrid seg = fuse_ensemble(m2, m3, c.connectivity);
    if (c.target_dims || c.target_spacing) {
      Spacing sp = seg.spacing;
      if (c.target_spacing) {
        if (c.target_spacing->size() != 3) throw ValidationError("--target-spacing needs 3 values");
        sp = {(*c.target_spacing)[0], (*c.target_spacing)[1], (*c.target_spacing)[2]};
      }
      Shape3 dims;
      if (c.target_dims) {
        if (c.target_dims->size() != 3) throw ValidationError("--target-dims needs 3 values");
        dims = {(*c.target_dims)[0], (*c.target_dims)[1], (*c.target_dims)[2]};
      } else {
        for (int a = 0; a < 3; ++a)
          dims[a] = std::max(1, static_cast<int>(std::lround(seg.dims[a] * seg.spacing[a] / sp[a])));
      }
      seg = resample_volume(seg, sp, dims, Interpolation::nearest);
    }
    write_volume(seg, c.out);
    const auto fg = std::count_if(seg.data.begin(), seg.data.end(), [](auto v) { return v != 0; });
    out << "wrote " << c.out.string() << " (" << seg.dims[0] << "x" << seg.dims[1] << "x" << seg.dims[2] << ", "
        << fg << " foreground voxels)\n";
    return kExitOk;
  });
}

// --- metrics --------------------------------------------------------------

int cmd_metrics(const MetricsCommand& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    const LabelGrid pred = read_label_volume(c.pred);
    const LabelGrid truth = read_label_volume(c.truth);
    if (pred.spacing != truth.spacing)
      err << "warning: spacings differ; distances use the reference spacing\n";
    out << metric_report_to_json(evaluate_segmentation(pred, truth)).dump(2) << "\n";
    return kExitOk;
  });
}

// --- pareto ---------------------------------------------------------------

std::string pareto_svg(const std::vector<std::pair<double, double>>& points) {
  constexpr double W = 640, H = 480, L = 80, R = 30, T = 30, B = 60;
  double xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  if (!points.empty()) {
    xlo = xhi = points.front().second;
    ylo = yhi = points.front().first;
    for (const auto& [f1, f2] : points) {
      xlo = std::min(xlo, f2);
      xhi = std::max(xhi, f2);
      ylo = std::min(ylo, f1);
      yhi = std::max(yhi, f1);
    }
  }
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo;
    const double m = span > 0 ? 0.05 * span : (lo != 0 ? 0.05 * std::abs(lo) : 1.0);
    lo -= m;
    hi += m;
  };
  pad(xlo, xhi);
  pad(ylo, yhi);
  auto px = [&](double x) { return L + (x - xlo) / (xhi - xlo) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ylo) / (yhi - ylo) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
    << W << " " << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xlo + (xhi - xlo) * i / 4, yv = ylo + (yhi - ylo) * i / 4;
    s << "<text x=\"" << fmt("%.1f", px(xv)) << "\" y=\"" << H - B + 18
      << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt("%.3g", xv) << "</text>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << fmt("%.1f", py(yv) + 4)
      << "\" font-size=\"11\" text-anchor=\"end\">" << fmt("%.3g", yv) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15
    << "\" font-size=\"13\" text-anchor=\"middle\">f2 (trainable parameters)</text>\n";
  s << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << (T + H - B) / 2 << ")\">f1 (expected segmentation error)</text>\n";
  for (const auto& [f1, f2] : points)
    s << "<circle cx=\"" << fmt("%.2f", px(f2)) << "\" cy=\"" << fmt("%.2f", py(f1))
      << "\" r=\"4\" fill=\"steelblue\"/>\n";
  s << "</svg>\n";
  return s.str();
}

int cmd_pareto(const ParetoCommand& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    fs::path p = c.archive;
    if (fs::is_directory(p)) p /= "archive.json";
    const ParetoArchive archive = archive_from_json(read_json(p));
    std::ostringstream csv;
    csv << "f1,f2,n_blocks,base_filters,k1,k2,k3,activation,merge,dropout,lr,dsc_train,dsc_val,e_max,param_count\n";
    std::vector<std::pair<double, double>> pts;
    for (const auto& e : archive.sorted()) {
      const Genome& g = e.genome;
      csv << fmt("%.17g", e.objectives.f1) << "," << fmt("%.17g", e.objectives.f2) << "," << g.n_blocks << ","
          << g.base_filters << "," << g.k1 << "," << g.k2 << "," << g.k3 << "," << to_string(g.activation) << ","
          << to_string(g.merge) << "," << fmt("%.17g", g.dropout) << "," << fmt("%.17g", g.lr) << ","
          << fmt("%.17g", e.result.dsc_train) << "," << fmt("%.17g", e.result.dsc_val) << "," << e.result.e_max
          << "," << e.result.param_count << "\n";
      pts.emplace_back(e.objectives.f1, e.objectives.f2);
    }
    if (c.csv.empty())
      out << csv.str();
    else
      write_text(c.csv, csv.str());
    if (!c.svg.empty()) write_text(c.svg, pareto_svg(pts));
    if (!c.csv.empty() || !c.svg.empty()) err << archive.size() << " archive members\n";
    return kExitOk;
  });
}

// --- preprocess -----------------------------------------------------------

int cmd_preprocess(const PreprocessCommand& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    if (c.spacing.size() != 3) throw ValidationError("--spacing needs 3 values");
    const Spacing sp{c.spacing[0], c.spacing[1], c.spacing[2]};
    for (double v : sp)
      if (!(v > 0)) throw ValidationError("spacing must be positive");
    const AnyGrid in = read_volume(c.in);
    const Shape3 src_dims = std::visit([](const auto& g) { return g.dims; }, in);
    const Spacing src_sp = std::visit([](const auto& g) { return g.spacing; }, in);
    Shape3 dims;
    if (c.dims) {
      if (c.dims->size() != 3) throw ValidationError("--dims needs 3 values");
      dims = {(*c.dims)[0], (*c.dims)[1], (*c.dims)[2]};
    } else {
      for (int a = 0; a < 3; ++a)
        dims[a] = std::max(1, static_cast<int>(std::lround(src_dims[a] * src_sp[a] / sp[a])));
    }
    if (c.labels) {
      const auto* g = std::get_if<LabelGrid>(&in);
      if (!g) throw ValidationError("--labels needs a u8 volume");
      write_volume(resample_volume(*g, sp, dims, Interpolation::nearest), c.out);
    } else {
      ScalarGrid g;
      if (const auto* s = std::get_if<ScalarGrid>(&in)) {
        g = *s;
      } else {
        const auto& l = std::get<LabelGrid>(in);
        g = ScalarGrid(l.dims, l.spacing);
        std::copy(l.data.begin(), l.data.end(), g.data.begin());
      }
      write_volume(normalize_intensity(resample_volume(g, sp, dims, Interpolation::trilinear)), c.out);
    }
    out << "wrote " << c.out.string() << " (" << dims[0] << "x" << dims[1] << "x" << dims[2] << ")\n";
    return kExitOk;
  });
}

}  // namespace evofcn
