#pragma once

#include <vector>

#include "evofcn/volume.hpp"

namespace evofcn {

ProbabilityMap average_probability_maps(const std::vector<ProbabilityMap>& maps);

// Class of maximum probability per voxel; ties go to the lower class index.
LabelGrid argmax_labels(const ProbabilityMap& m);

// Per-voxel modal label, ties to the lowest label. An even voter count is
// rejected unless allow_even is set.
LabelGrid majority_vote(const std::vector<LabelGrid>& segs, bool allow_even = false);

enum class Connectivity { six = 6, twenty_six = 26 };

// Component labels (1..n, 0 = background) in raster order of first voxel.
std::vector<int> label_components(const LabelGrid& seg, Connectivity conn, int* n_components = nullptr);

// Keeps only the largest foreground component. Equal sizes resolve to the
// component whose first voxel comes first in x-fastest storage order.
LabelGrid keep_largest_component(const LabelGrid& seg, Connectivity conn = Connectivity::twenty_six);

}  // namespace evofcn
