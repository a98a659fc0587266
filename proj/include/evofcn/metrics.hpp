#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "evofcn/volume.hpp"

namespace evofcn {

// Dice overlap of two label grids of identical dims; nonzero voxels are foreground.
double dice_coefficient(const LabelGrid& pred, const LabelGrid& truth);

// Foreground voxels with at least one 6-neighbour that is background or
// outside the grid.
std::vector<std::uint8_t> boundary_mask(const LabelGrid& seg);

// Squared physical distance from every voxel to the nearest nonzero voxel of
// `features` (+inf if there are none). Exact separable transform.
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& features,
                                               const Shape3& dims, const Spacing& spacing);

// For each boundary voxel of `from` (storage order), the distance in mm to the
// nearest boundary voxel of `to`.
std::vector<double> directed_boundary_distances(const LabelGrid& from, const LabelGrid& to,
                                                const Spacing& spacing);

// Linear interpolation between closest ranks on sorted data; q in [0, 1].
double percentile_linear(const std::vector<double>& sorted, double q);

struct SurfaceDistances {
  double hd95 = 0.0;  // max of the two directed 95th percentiles
  double abd = 0.0;   // mean of the two directed means
};

// Throws UndefinedMetricError when either mask is empty.
SurfaceDistances surface_distance_metrics(const LabelGrid& pred, const LabelGrid& truth,
                                          const Spacing& spacing);
SurfaceDistances surface_distance_metrics(const LabelGrid& pred, const LabelGrid& truth);

// 100 |V_pred - V_truth| / V_truth in voxel counts. Throws on empty truth.
double arvd(const LabelGrid& pred, const LabelGrid& truth);

struct MetricReport {
  std::optional<double> dsc;
  std::optional<double> hd95;
  std::optional<double> abd;
  std::optional<double> arvd;
};

// All four metrics; undefined ones are left empty instead of throwing.
MetricReport evaluate_segmentation(const LabelGrid& pred, const LabelGrid& truth);
nlohmann::ordered_json metric_report_to_json(const MetricReport& r);

}  // namespace evofcn
