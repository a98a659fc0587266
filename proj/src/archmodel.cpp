#include "evofcn/archmodel.hpp"

#include "evofcn/errors.hpp"

namespace evofcn {

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::activation: return "activation";
    case LayerKind::residual_add: return "residual_add";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::transpose_conv: return "transpose_conv";
    case LayerKind::skip_merge: return "skip_merge";
    case LayerKind::spatial_dropout: return "spatial_dropout";
    case LayerKind::final_conv: return "final_conv";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

std::vector<int> filters_per_block(int base_filters, int n_blocks) {
  if (n_blocks < 1 || n_blocks % 2 == 0)
    throw ValidationError("filters_per_block needs an odd positive block count, got " +
                          std::to_string(n_blocks));
  if (base_filters < 1) throw ValidationError("base_filters must be positive");
  const int depth = (n_blocks - 1) / 2;
  std::vector<int> f(n_blocks);
  for (int i = 0; i <= depth; ++i) {
    f[i] = base_filters << i;
    f[n_blocks - 1 - i] = base_filters << i;
  }
  return f;
}

namespace {

class PlanBuilder {
 public:
  PlanBuilder(ArchitecturePlan& plan, Dim dim) : plan_(plan), dim_(dim) {}

  void push(LayerSpec l) {
    l.in_shape = shape_;
    if (l.out_shape == Shape3{}) l.out_shape = shape_;
    shape_ = l.out_shape;
    channels_ = l.out_channels;
    plan_.layers.push_back(l);
  }

  void conv(int block, int kernel, int out) {
    push({.kind = LayerKind::conv, .block = block, .in_channels = channels_, .out_channels = out,
          .kernel = kernel});
  }
  void simple(LayerKind kind, int block) {
    push({.kind = kind, .block = block, .in_channels = channels_, .out_channels = channels_});
  }
  void activation(int block, Activation a) {
    push({.kind = LayerKind::activation, .block = block, .in_channels = channels_,
          .out_channels = channels_, .activation = a});
  }

  void residual_block(int block, const Genome& g, int filters) {
    conv(block, g.k1, filters);
    simple(LayerKind::batch_norm, block);
    activation(block, g.activation);
    conv(block, g.k2, filters);
    simple(LayerKind::batch_norm, block);
    activation(block, g.activation);
    conv(block, g.k3, filters);
    simple(LayerKind::batch_norm, block);
    simple(LayerKind::residual_add, block);
    activation(block, g.activation);
  }

  Shape3 scaled(int num, int den) const {
    Shape3 s = shape_;
    const int rank = spatial_rank(dim_);
    for (int a = 0; a < rank; ++a) s[a] = s[a] * num / den;
    return s;
  }

  int channels() const { return channels_; }
  Shape3 shape() const { return shape_; }
  void start(const Shape3& shape, int channels) {
    shape_ = shape;
    channels_ = channels;
  }

 private:
  ArchitecturePlan& plan_;
  Dim dim_;
  Shape3 shape_{};
  int channels_ = 0;
};

}  // namespace

ArchitecturePlan build_plan(const Genome& g, Dim dim, const Shape3& input_shape, int in_channels,
                            int n_classes) {
  auto vr = validate_genome(g, default_search_space(dim), input_shape, true);
  if (in_channels < 1) vr.violations.push_back("in_channels must be >= 1");
  if (n_classes < 1) vr.violations.push_back("n_classes must be >= 1");
  if (!vr.ok()) {
    std::string msg = "invalid genome:";
    for (const auto& v : vr.violations) msg += " " + v + ";";
    throw ValidationError(msg, vr.violations);
  }

  ArchitecturePlan plan;
  plan.dim = dim;
  plan.input_shape = input_shape;
  plan.in_channels = in_channels;
  plan.n_classes = n_classes;
  plan.block_filters = filters_per_block(g.base_filters, g.n_blocks);

  const int depth = (g.n_blocks - 1) / 2;
  PlanBuilder b(plan, dim);
  b.start(input_shape, in_channels);
  std::vector<int> encoder_channels;

  for (int blk = 0; blk < g.n_blocks; ++blk) {
    const int filters = plan.block_filters[blk];
    if (blk > depth) {
      const int mirror = g.n_blocks - 1 - blk;
      b.push({.kind = LayerKind::transpose_conv, .block = blk, .in_channels = b.channels(),
              .out_channels = filters, .kernel = 2, .stride = 2, .out_shape = b.scaled(2, 1)});
      const int skip = encoder_channels[mirror];
      b.push({.kind = LayerKind::skip_merge, .block = blk, .in_channels = b.channels(),
              .out_channels = g.merge == Merge::concat ? b.channels() + skip : b.channels(),
              .merge = g.merge, .skip_from_block = mirror});
    }
    if (blk > 0) {
      b.push({.kind = LayerKind::spatial_dropout, .block = blk, .in_channels = b.channels(),
              .out_channels = b.channels(), .dropout = g.dropout});
    }
    b.residual_block(blk, g, filters);
    if (blk < depth) {
      encoder_channels.push_back(filters);
      b.push({.kind = LayerKind::max_pool, .block = blk, .in_channels = filters,
              .out_channels = filters, .kernel = 2, .stride = 2, .out_shape = b.scaled(1, 2)});
    }
  }
  b.push({.kind = LayerKind::final_conv, .in_channels = b.channels(), .out_channels = n_classes,
          .kernel = 1});
  b.push({.kind = LayerKind::softmax, .in_channels = n_classes, .out_channels = n_classes});
  return plan;
}

std::int64_t layer_parameters(const LayerSpec& l, Dim dim) {
  const int rank = spatial_rank(dim);
  auto kvol = [rank](int k) {
    std::int64_t v = 1;
    for (int i = 0; i < rank; ++i) v *= k;
    return v;
  };
  const std::int64_t in = l.in_channels, out = l.out_channels;
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::final_conv:
    case LayerKind::transpose_conv:
      return kvol(l.kernel) * in * out + out;
    case LayerKind::batch_norm:
      return 2 * out;
    default:
      return 0;
  }
}

std::int64_t count_parameters(const ArchitecturePlan& plan) {
  std::int64_t total = 0;
  for (const auto& l : plan.layers) total += layer_parameters(l, plan.dim);
  return total;
}

std::int64_t count_parameters(const Genome& g, Dim dim, int in_channels, int n_classes) {
  // Parameter count does not depend on spatial extent; use the smallest shape
  // that satisfies the pooling divisibility for this depth.
  const int side = 1 << ((g.n_blocks - 1) / 2);
  const Shape3 shape{side, side, dim == Dim::d2 ? 1 : side};
  return count_parameters(build_plan(g, dim, shape, in_channels, n_classes));
}

nlohmann::json describe(const ArchitecturePlan& plan) {
  const int rank = spatial_rank(plan.dim);
  auto shape_json = [rank](const Shape3& s) {
    nlohmann::json j = nlohmann::json::array();
    for (int a = 0; a < rank; ++a) j.push_back(s[a]);
    return j;
  };
  nlohmann::json out = nlohmann::json::array();
  for (const auto& l : plan.layers) {
    nlohmann::json r = {{"kind", to_string(l.kind)},
                        {"block", l.block},
                        {"in_channels", l.in_channels},
                        {"out_channels", l.out_channels},
                        {"kernel", l.kernel},
                        {"stride", l.stride},
                        {"in_shape", shape_json(l.in_shape)},
                        {"out_shape", shape_json(l.out_shape)},
                        {"params", layer_parameters(l, plan.dim)}};
    if (l.kind == LayerKind::activation) r["activation"] = to_string(l.activation);
    if (l.kind == LayerKind::skip_merge) {
      r["merge"] = to_string(l.merge);
      r["skip_from_block"] = l.skip_from_block;
    }
    if (l.kind == LayerKind::spatial_dropout) r["p"] = l.dropout;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace evofcn
