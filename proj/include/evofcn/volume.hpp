#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "evofcn/genome.hpp"

namespace evofcn {

using Spacing = std::array<double, 3>;

// Dense 3D grid stored x-fastest, then y, then z.
template <typename T>
struct Grid {
  Shape3 dims{0, 0, 0};
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<T> data;

  Grid() = default;
  Grid(const Shape3& d, const Spacing& s, T fill = T{})
      : dims(d), spacing(s), data(voxel_count(d), fill) {}

  static std::size_t voxel_count(const Shape3& d) {
    if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0) return 0;
    return static_cast<std::size_t>(d[0]) * d[1] * d[2];
  }
  std::size_t size() const { return data.size(); }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  T& at(int x, int y, int z) { return data[index(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data[index(x, y, z)]; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using LabelGrid = Grid<std::uint8_t>;
using ScalarGrid = Grid<float>;
using AnyGrid = std::variant<LabelGrid, ScalarGrid>;

// One scalar grid per class; per-voxel values sum to 1.
struct ProbabilityMap {
  std::vector<ScalarGrid> classes;

  int n_classes() const { return static_cast<int>(classes.size()); }
  const Shape3& dims() const { return classes.front().dims; }
};

// SVOL container: one JSON header line, then raw little-endian payload.
void write_volume(const LabelGrid& g, const std::filesystem::path& path);
void write_volume(const ScalarGrid& g, const std::filesystem::path& path);
AnyGrid read_volume(const std::filesystem::path& path);
LabelGrid read_label_volume(const std::filesystem::path& path);
ScalarGrid read_scalar_volume(const std::filesystem::path& path);

// Probability maps: per-class SVOL files listed in order by a JSON index
// {"format":"SVOL-PROB1","classes":["<file0>", "<file1>", ...]}; paths relative
// to the index file's directory.
void write_probability_map(const ProbabilityMap& m, const std::filesystem::path& index_path);
ProbabilityMap read_probability_map(const std::filesystem::path& index_path);
void validate_probability_map(const ProbabilityMap& m, double tolerance = 1e-4);

// Clip to mean +/- 3 sd, then rescale the clipped values to [0, 1].
ScalarGrid normalize_intensity(const ScalarGrid& g);

enum class Interpolation { nearest, trilinear };

// Resamples onto a grid of target_dims x target_spacing sharing the same
// physical center. Out-of-range samples clamp to the edge.
ScalarGrid resample_volume(const ScalarGrid& g, const Spacing& target_spacing,
                           const Shape3& target_dims, Interpolation mode);
LabelGrid resample_volume(const LabelGrid& g, const Spacing& target_spacing,
                          const Shape3& target_dims, Interpolation mode = Interpolation::nearest);

struct Fold {
  std::vector<int> train;
  std::vector<int> validation;
};

// Seeded shuffle, then k contiguous near-equal validation slices.
std::vector<Fold> kfold_split(int n_items, int k, std::uint64_t seed);

}  // namespace evofcn
