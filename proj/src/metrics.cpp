#include "evofcn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>

#include "evofcn/errors.hpp"
#include "evofcn/objectives.hpp"

namespace evofcn {

namespace {

void require_same_dims(const LabelGrid& a, const LabelGrid& b) {
  if (a.dims != b.dims)
    throw ValidationError("label grids differ in dims: " + std::to_string(a.dims[0]) + "x" +
                          std::to_string(a.dims[1]) + "x" + std::to_string(a.dims[2]) + " vs " +
                          std::to_string(b.dims[0]) + "x" + std::to_string(b.dims[1]) + "x" +
                          std::to_string(b.dims[2]));
}

std::size_t foreground(const LabelGrid& g) {
  return static_cast<std::size_t>(std::count_if(g.data.begin(), g.data.end(), [](auto v) { return v != 0; }));
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower-envelope transform of one line: out[p] = min_q w (p - q)^2 + f[q].
void transform_line(std::span<double> f, double w, std::vector<int>& v, std::vector<double>& z,
                    std::vector<double>& out) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  v.resize(n);
  z.resize(n + 1);
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    // z[0] = -inf stops the pop loop at k = 0.
    double s;
    for (;;) {
      const int r = v[k];
      s = ((f[q] + w * q * q) - (f[r] + w * r * r)) / (2.0 * w * (q - r));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) return;  // no finite entries; line stays at +inf
  out.resize(n);
  int j = 0;
  for (int p = 0; p < n; ++p) {
    while (z[j + 1] < p) ++j;
    const double d = p - v[j];
    out[p] = w * d * d + f[v[j]];
  }
  std::copy(out.begin(), out.end(), f.begin());
}

}  // namespace

double dice_coefficient(const LabelGrid& pred, const LabelGrid& truth) {
  require_same_dims(pred, truth);
  return dice_coefficient(std::span<const std::uint8_t>(pred.data), std::span<const std::uint8_t>(truth.data));
}

std::vector<std::uint8_t> boundary_mask(const LabelGrid& seg) {
  const auto [nx, ny, nz] = seg.dims;
  std::vector<std::uint8_t> out(seg.size(), 0);
  auto fg = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return false;
    return seg.at(x, y, z) != 0;
  };
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!fg(x, y, z)) continue;
        if (!fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) || !fg(x, y + 1, z) ||
            !fg(x, y, z - 1) || !fg(x, y, z + 1))
          out[seg.index(x, y, z)] = 1;
      }
  return out;
}

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& features,
                                               const Shape3& dims, const Spacing& spacing) {
  const auto [nx, ny, nz] = dims;
  std::vector<double> d(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) d[i] = features[i] ? 0.0 : kInf;

  std::vector<int> v;
  std::vector<double> z, out, line;
  const std::array<int, 3> n{nx, ny, nz};
  const std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(nx),
                                          static_cast<std::size_t>(nx) * ny};
  for (int axis = 0; axis < 3; ++axis) {
    const double w = spacing[axis] * spacing[axis];
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    line.resize(n[axis]);
    for (int j = 0; j < n[a2]; ++j)
      for (int i = 0; i < n[a1]; ++i) {
        const std::size_t base = i * stride[a1] + j * stride[a2];
        for (int p = 0; p < n[axis]; ++p) line[p] = d[base + p * stride[axis]];
        transform_line(line, w, v, z, out);
        for (int p = 0; p < n[axis]; ++p) d[base + p * stride[axis]] = line[p];
      }
  }
  return d;
}

std::vector<double> directed_boundary_distances(const LabelGrid& from, const LabelGrid& to,
                                                const Spacing& spacing) {
  require_same_dims(from, to);
  const auto from_b = boundary_mask(from);
  const auto to_b = boundary_mask(to);
  const auto sq = squared_distance_transform(to_b, to.dims, spacing);
  std::vector<double> out;
  for (std::size_t i = 0; i < from_b.size(); ++i)
    if (from_b[i]) out.push_back(std::sqrt(sq[i]));
  return out;
}

double percentile_linear(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw UndefinedMetricError("percentile of an empty sample");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

SurfaceDistances surface_distance_metrics(const LabelGrid& pred, const LabelGrid& truth,
                                          const Spacing& spacing) {
  require_same_dims(pred, truth);
  if (foreground(pred) == 0 || foreground(truth) == 0)
    throw UndefinedMetricError("surface distances are undefined for an empty mask");
  auto ab = directed_boundary_distances(pred, truth, spacing);
  auto ba = directed_boundary_distances(truth, pred, spacing);
  std::sort(ab.begin(), ab.end());
  std::sort(ba.begin(), ba.end());
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  return {std::max(percentile_linear(ab, 0.95), percentile_linear(ba, 0.95)),
          0.5 * (mean(ab) + mean(ba))};
}

SurfaceDistances surface_distance_metrics(const LabelGrid& pred, const LabelGrid& truth) {
  return surface_distance_metrics(pred, truth, truth.spacing);
}

double arvd(const LabelGrid& pred, const LabelGrid& truth) {
  require_same_dims(pred, truth);
  const auto vt = static_cast<double>(foreground(truth));
  if (vt == 0) throw UndefinedMetricError("aRVD is undefined for an empty reference");
  const auto vp = static_cast<double>(foreground(pred));
  return 100.0 * std::abs(vp - vt) / vt;
}

MetricReport evaluate_segmentation(const LabelGrid& pred, const LabelGrid& truth) {
  require_same_dims(pred, truth);
  MetricReport r;
  r.dsc = dice_coefficient(pred, truth);
  try {
    const auto sd = surface_distance_metrics(pred, truth);
    r.hd95 = sd.hd95;
    r.abd = sd.abd;
  } catch (const UndefinedMetricError&) {
  }
  try {
    r.arvd = arvd(pred, truth);
  } catch (const UndefinedMetricError&) {
  }
  return r;
}

nlohmann::ordered_json metric_report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  auto put = [&j](const char* k, const std::optional<double>& v) {
    if (v)
      j[k] = *v;
    else
      j[k] = nullptr;
  };
  put("dsc", r.dsc);
  put("hd95", r.hd95);
  put("abd", r.abd);
  put("arvd", r.arvd);
  nlohmann::ordered_json undefined = nlohmann::ordered_json::array();
  if (!r.hd95) undefined.push_back("hd95");
  if (!r.abd) undefined.push_back("abd");
  if (!r.arvd) undefined.push_back("arvd");
  if (!undefined.empty()) j["undefined"] = undefined;
  return j;
}

}  // namespace evofcn
