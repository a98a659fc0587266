#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "evofcn/genome.hpp"

namespace evofcn {

enum class LayerKind {
  conv,
  batch_norm,
  activation,
  residual_add,
  max_pool,
  transpose_conv,
  skip_merge,
  spatial_dropout,
  final_conv,
  softmax,
};

std::string_view to_string(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int block = -1;  // residual block index, -1 for the head
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;  // edge length; 0 for layers without a kernel
  int stride = 1;
  Shape3 in_shape{};
  Shape3 out_shape{};
  Activation activation = Activation::relu;  // activation layers only
  Merge merge = Merge::sum;                  // skip_merge only
  int skip_from_block = -1;                  // skip_merge: the mirror encoder block
  double dropout = 0.0;                      // spatial_dropout only
};

struct ArchitecturePlan {
  Dim dim = Dim::d2;
  Shape3 input_shape{};
  int in_channels = 1;
  int n_classes = 2;
  std::vector<int> block_filters;
  std::vector<LayerSpec> layers;
};

// Encoder doubles, decoder halves: [b, 2b, ..., 2^d b, ..., 2b, b] with d = (n_blocks - 1) / 2.
std::vector<int> filters_per_block(int base_filters, int n_blocks);

// Throws ValidationError carrying the violations when g is not valid for dim.
ArchitecturePlan build_plan(const Genome& g, Dim dim, const Shape3& input_shape, int in_channels = 1,
                            int n_classes = 2);

std::int64_t layer_parameters(const LayerSpec& layer, Dim dim);
std::int64_t count_parameters(const ArchitecturePlan& plan);

// Shape-independent convenience: |theta| for a genome.
std::int64_t count_parameters(const Genome& g, Dim dim, int in_channels = 1, int n_classes = 2);

// Layer records as a JSON array (kind, channels, kernel, stride, shapes, params).
nlohmann::json describe(const ArchitecturePlan& plan);

}  // namespace evofcn
