#include "evofcn/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "evofcn/errors.hpp"
#include "evofcn/rng.hpp"

namespace evofcn {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kMaxHeaderBytes = 4096;

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, std::uint8_t> ? "u8" : "f32";
}

template <typename T>
void check_writable(const Grid<T>& g) {
  const std::size_t n = Grid<T>::voxel_count(g.dims);
  if (n == 0) throw ValidationError("cannot write an empty grid");
  if (g.data.size() != n) throw ValidationError("grid data length does not match its dims");
  for (double s : g.spacing)
    if (!(s > 0)) throw ValidationError("grid spacing must be positive");
}

template <typename T>
void write_svol(const Grid<T>& g, const fs::path& path) {
  check_writable(g);
  nlohmann::ordered_json header;
  header["magic"] = "SVOL1";
  header["dims"] = {g.dims[0], g.dims[1], g.dims[2]};
  header["spacing"] = {g.spacing[0], g.spacing[1], g.spacing[2]};
  header["dtype"] = dtype_name<T>();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  if constexpr (std::is_same_v<T, std::uint8_t>) {
    out.write(reinterpret_cast<const char*>(g.data.data()), static_cast<std::streamsize>(g.data.size()));
  } else {
    std::vector<char> bytes(g.data.size() * 4);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(g.data[i]);
      for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace

void write_volume(const LabelGrid& g, const fs::path& path) { write_svol(g, path); }
void write_volume(const ScalarGrid& g, const fs::path& path) { write_svol(g, path); }

AnyGrid read_volume(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  char c = 0;
  while (in.get(c) && c != '\n') {
    line.push_back(c);
    if (line.size() > kMaxHeaderBytes) throw IoError("malformed SVOL header in '" + path.string() + "': too long");
  }
  if (c != '\n' || !in) throw IoError("malformed SVOL header in '" + path.string() + "': no newline");

  Shape3 dims{};
  Spacing spacing{};
  std::string dtype;
  try {
    auto h = nlohmann::json::parse(line);
    if (h.value("magic", "") != "SVOL1") throw IoError("bad magic");
    const auto& d = h.at("dims");
    const auto& s = h.at("spacing");
    if (!d.is_array() || d.size() != 3 || !s.is_array() || s.size() != 3) throw IoError("dims/spacing must have 3 entries");
    for (int a = 0; a < 3; ++a) {
      if (!d[a].is_number_integer() || d[a].get<long long>() < 1 || d[a].get<long long>() > (1 << 20))
        throw IoError("dims must be positive integers");
      if (!s[a].is_number() || !(s[a].get<double>() > 0)) throw IoError("spacing must be positive");
      dims[a] = d[a].get<int>();
      spacing[a] = s[a].get<double>();
    }
    dtype = h.at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed SVOL header in '" + path.string() + "': " + e.what());
  } catch (const IoError& e) {
    throw IoError("malformed SVOL header in '" + path.string() + "': " + e.what());
  }

  const std::size_t n = LabelGrid::voxel_count(dims);
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto check_len = [&](std::size_t elem) {
    if (payload.size() < n * elem)
      throw IoError("truncated SVOL payload in '" + path.string() + "': expected " +
                    std::to_string(n * elem) + " bytes, found " + std::to_string(payload.size()));
    if (payload.size() > n * elem)
      throw IoError("SVOL payload in '" + path.string() + "' has " +
                    std::to_string(payload.size() - n * elem) + " trailing bytes");
  };

  if (dtype == "u8") {
    check_len(1);
    LabelGrid g(dims, spacing);
    std::memcpy(g.data.data(), payload.data(), n);
    return g;
  }
  if (dtype == "f32") {
    check_len(4);
    ScalarGrid g(dims, spacing);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * i + b])) << (8 * b);
      g.data[i] = std::bit_cast<float>(bits);
    }
    return g;
  }
  throw IoError("unknown SVOL dtype '" + dtype + "' in '" + path.string() + "'");
}

LabelGrid read_label_volume(const fs::path& path) {
  auto g = read_volume(path);
  if (auto* l = std::get_if<LabelGrid>(&g)) return std::move(*l);
  throw IoError("'" + path.string() + "' is not a u8 label volume");
}

ScalarGrid read_scalar_volume(const fs::path& path) {
  auto g = read_volume(path);
  if (auto* s = std::get_if<ScalarGrid>(&g)) return std::move(*s);
  throw IoError("'" + path.string() + "' is not an f32 scalar volume");
}

void write_probability_map(const ProbabilityMap& m, const fs::path& index_path) {
  if (m.classes.empty()) throw ValidationError("probability map has no classes");
  nlohmann::ordered_json index;
  index["format"] = "SVOL-PROB1";
  index["classes"] = nlohmann::json::array();
  const std::string stem = index_path.stem().string();
  for (int c = 0; c < m.n_classes(); ++c) {
    const std::string name = stem + "_c" + std::to_string(c) + ".svol";
    write_volume(m.classes[c], index_path.parent_path() / name);
    index["classes"].push_back(name);
  }
  std::ofstream out(index_path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + index_path.string() + "' for writing");
  out << index.dump(2) << "\n";
}

ProbabilityMap read_probability_map(const fs::path& index_path) {
  std::ifstream in(index_path);
  if (!in) throw IoError("cannot open '" + index_path.string() + "'");
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed probability-map index '" + index_path.string() + "': " + e.what());
  }
  if (!index.is_object() || !index.contains("classes") || !index["classes"].is_array() ||
      index["classes"].empty())
    throw IoError("probability-map index '" + index_path.string() + "' lacks a nonempty 'classes' list");
  ProbabilityMap m;
  for (const auto& f : index["classes"]) {
    if (!f.is_string()) throw IoError("probability-map index entries must be file names");
    m.classes.push_back(read_scalar_volume(index_path.parent_path() / f.get<std::string>()));
  }
  for (const auto& g : m.classes)
    if (g.dims != m.classes.front().dims)
      throw ValidationError("probability-map classes in '" + index_path.string() + "' differ in dims");
  return m;
}

void validate_probability_map(const ProbabilityMap& m, double tolerance) {
  if (m.classes.empty()) throw ValidationError("probability map has no classes");
  const std::size_t n = m.classes.front().size();
  for (const auto& g : m.classes)
    if (g.dims != m.classes.front().dims) throw ValidationError("probability-map classes differ in dims");
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0;
    for (const auto& g : m.classes) sum += g.data[i];
    if (std::abs(sum - 1.0) > tolerance)
      throw ValidationError("class probabilities at voxel " + std::to_string(i) + " sum to " +
                            std::to_string(sum));
  }
}

ScalarGrid normalize_intensity(const ScalarGrid& g) {
  ScalarGrid out = g;
  if (g.data.empty()) return out;
  double mean = 0;
  for (float v : g.data) mean += v;
  mean /= static_cast<double>(g.data.size());
  double var = 0;
  for (float v : g.data) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(g.data.size()));
  if (!(sd > 0)) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  const double lo = mean - 3 * sd, hi = mean + 3 * sd;
  double cmin = hi, cmax = lo;
  for (float v : g.data) {
    const double c = std::clamp<double>(v, lo, hi);
    cmin = std::min(cmin, c);
    cmax = std::max(cmax, c);
  }
  const double range = cmax - cmin;
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    const double c = std::clamp<double>(g.data[i], lo, hi);
    out.data[i] = range > 0 ? static_cast<float>((c - cmin) / range) : 0.0f;
  }
  return out;
}

namespace {

// Continuous source index for target index i along one axis, centers aligned.
double source_coord(int i, int n_out, double s_out, int n_in, double s_in) {
  const double phys = (i - (n_out - 1) / 2.0) * s_out;
  return phys / s_in + (n_in - 1) / 2.0;
}

void check_target(const Spacing& s, const Shape3& d) {
  for (int a = 0; a < 3; ++a) {
    if (d[a] < 1) throw ValidationError("target dims must be >= 1");
    if (!(s[a] > 0)) throw ValidationError("target spacing must be positive");
  }
}

template <typename T>
Grid<T> resample_nearest(const Grid<T>& g, const Spacing& ts, const Shape3& td) {
  Grid<T> out(td, ts);
  std::array<std::vector<int>, 3> map;
  for (int a = 0; a < 3; ++a) {
    map[a].resize(td[a]);
    for (int i = 0; i < td[a]; ++i) {
      const double u = source_coord(i, td[a], ts[a], g.dims[a], g.spacing[a]);
      map[a][i] = std::clamp(static_cast<int>(std::floor(u + 0.5)), 0, g.dims[a] - 1);
    }
  }
  for (int z = 0; z < td[2]; ++z)
    for (int y = 0; y < td[1]; ++y)
      for (int x = 0; x < td[0]; ++x) out.at(x, y, z) = g.at(map[0][x], map[1][y], map[2][z]);
  return out;
}

}  // namespace

ScalarGrid resample_volume(const ScalarGrid& g, const Spacing& ts, const Shape3& td, Interpolation mode) {
  check_target(ts, td);
  if (g.data.empty()) throw ValidationError("cannot resample an empty grid");
  if (mode == Interpolation::nearest) return resample_nearest(g, ts, td);

  struct Tap {
    int i0, i1;
    double t;
  };
  std::array<std::vector<Tap>, 3> taps;
  for (int a = 0; a < 3; ++a) {
    taps[a].resize(td[a]);
    for (int i = 0; i < td[a]; ++i) {
      const double u = std::clamp(source_coord(i, td[a], ts[a], g.dims[a], g.spacing[a]), 0.0,
                                  static_cast<double>(g.dims[a] - 1));
      const int i0 = static_cast<int>(std::floor(u));
      const int i1 = std::min(i0 + 1, g.dims[a] - 1);
      taps[a][i] = {i0, i1, u - i0};
    }
  }
  ScalarGrid out(td, ts);
  for (int z = 0; z < td[2]; ++z) {
    const Tap tz = taps[2][z];
    for (int y = 0; y < td[1]; ++y) {
      const Tap ty = taps[1][y];
      for (int x = 0; x < td[0]; ++x) {
        const Tap tx = taps[0][x];
        auto v = [&](int xi, int yi, int zi) { return static_cast<double>(g.at(xi, yi, zi)); };
        const double c00 = v(tx.i0, ty.i0, tz.i0) * (1 - tx.t) + v(tx.i1, ty.i0, tz.i0) * tx.t;
        const double c10 = v(tx.i0, ty.i1, tz.i0) * (1 - tx.t) + v(tx.i1, ty.i1, tz.i0) * tx.t;
        const double c01 = v(tx.i0, ty.i0, tz.i1) * (1 - tx.t) + v(tx.i1, ty.i0, tz.i1) * tx.t;
        const double c11 = v(tx.i0, ty.i1, tz.i1) * (1 - tx.t) + v(tx.i1, ty.i1, tz.i1) * tx.t;
        const double c0 = c00 * (1 - ty.t) + c10 * ty.t;
        const double c1 = c01 * (1 - ty.t) + c11 * ty.t;
        out.at(x, y, z) = static_cast<float>(c0 * (1 - tz.t) + c1 * tz.t);
      }
    }
  }
  return out;
}

LabelGrid resample_volume(const LabelGrid& g, const Spacing& ts, const Shape3& td, Interpolation mode) {
  if (mode != Interpolation::nearest)
    throw ValidationError("label grids can only be resampled with nearest-neighbour interpolation");
  check_target(ts, td);
  if (g.data.empty()) throw ValidationError("cannot resample an empty grid");
  return resample_nearest(g, ts, td);
}

std::vector<Fold> kfold_split(int n_items, int k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("k must be >= 1");
  if (k > n_items) throw ValidationError("k = " + std::to_string(k) + " exceeds item count " + std::to_string(n_items));
  std::vector<int> order(n_items);
  for (int i = 0; i < n_items; ++i) order[i] = i;
  Rng rng(seed);
  for (int i = n_items - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);

  std::vector<Fold> folds(k);
  const int base = n_items / k, extra = n_items % k;
  int start = 0;
  for (int f = 0; f < k; ++f) {
    const int len = base + (f < extra ? 1 : 0);
    std::vector<bool> in_val(n_items, false);
    for (int i = start; i < start + len; ++i) {
      folds[f].validation.push_back(order[i]);
      in_val[order[i]] = true;
    }
    std::sort(folds[f].validation.begin(), folds[f].validation.end());
    for (int i = 0; i < n_items; ++i)
      if (!in_val[i]) folds[f].train.push_back(i);
    start += len;
  }
  return folds;
}

}  // namespace evofcn
