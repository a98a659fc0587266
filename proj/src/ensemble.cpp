#include "evofcn/ensemble.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "evofcn/errors.hpp"

namespace evofcn {

ProbabilityMap average_probability_maps(const std::vector<ProbabilityMap>& maps) {
  if (maps.empty()) throw ValidationError("no probability maps to average");
  const auto& ref = maps.front();
  if (ref.classes.empty()) throw ValidationError("probability map has no classes");
  for (const auto& m : maps) {
    if (m.n_classes() != ref.n_classes())
      throw ValidationError("probability maps differ in class count");
    for (const auto& g : m.classes)
      if (g.dims != ref.dims()) throw ValidationError("probability maps differ in dims");
  }
  ProbabilityMap out = ref;
  const std::size_t n = ref.classes.front().size();
  const double inv = 1.0 / static_cast<double>(maps.size());
  for (int c = 0; c < ref.n_classes(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0;
      for (const auto& m : maps) sum += m.classes[c].data[i];
      out.classes[c].data[i] = static_cast<float>(sum * inv);
    }
  }
  return out;
}

LabelGrid argmax_labels(const ProbabilityMap& m) {
  if (m.classes.empty()) throw ValidationError("probability map has no classes");
  if (m.n_classes() > 256) throw ValidationError("at most 256 classes fit a u8 label grid");
  const auto& ref = m.classes.front();
  LabelGrid out(ref.dims, ref.spacing);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    int best = 0;
    for (int c = 1; c < m.n_classes(); ++c)
      if (m.classes[c].data[i] > m.classes[best].data[i]) best = c;
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

LabelGrid majority_vote(const std::vector<LabelGrid>& segs, bool allow_even) {
  if (segs.empty()) throw ValidationError("no segmentations to vote over");
  if (segs.size() % 2 == 0 && !allow_even)
    throw ValidationError("majority vote needs an odd number of voters, got " + std::to_string(segs.size()));
  for (const auto& s : segs)
    if (s.dims != segs.front().dims) throw ValidationError("segmentations differ in dims");
  LabelGrid out(segs.front().dims, segs.front().spacing);
  std::array<int, 256> votes{};
  for (std::size_t i = 0; i < out.size(); ++i) {
    votes.fill(0);
    for (const auto& s : segs) ++votes[s.data[i]];
    // max_element returns the first maximum, i.e. the lowest label among ties.
    out.data[i] = static_cast<std::uint8_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }
  return out;
}

namespace {

struct DisjointSet {
  std::vector<int> parent;
  int make() {
    parent.push_back(static_cast<int>(parent.size()));
    return parent.back();
  }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

struct Offset {
  int dx, dy, dz;
};

// Neighbours already visited by an x-fastest raster scan.
std::vector<Offset> backward_offsets(Connectivity conn) {
  if (conn == Connectivity::six) return {{-1, 0, 0}, {0, -1, 0}, {0, 0, -1}};
  std::vector<Offset> out;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

}  // namespace

std::vector<int> label_components(const LabelGrid& seg, Connectivity conn, int* n_components) {
  const auto [nx, ny, nz] = seg.dims;
  std::vector<int> provisional(seg.size(), -1);
  DisjointSet sets;
  const auto offsets = backward_offsets(conn);

  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const std::size_t i = seg.index(x, y, z);
        if (!seg.data[i]) continue;
        int label = -1;
        for (const auto& o : offsets) {
          const int xx = x + o.dx, yy = y + o.dy, zz = z + o.dz;
          if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny) continue;
          const int nb = provisional[seg.index(xx, yy, zz)];
          if (nb < 0) continue;
          if (label < 0)
            label = nb;
          else
            sets.unite(label, nb);
        }
        provisional[i] = label < 0 ? sets.make() : label;
      }

  // Final labels numbered by first appearance in storage order.
  std::vector<int> remap(sets.parent.size(), 0);
  int next = 0;
  std::vector<int> labels(seg.size(), 0);
  for (std::size_t i = 0; i < seg.size(); ++i) {
    if (provisional[i] < 0) continue;
    const int root = sets.find(provisional[i]);
    if (remap[root] == 0) remap[root] = ++next;
    labels[i] = remap[root];
  }
  if (n_components) *n_components = next;
  return labels;
}

LabelGrid keep_largest_component(const LabelGrid& seg, Connectivity conn) {
  int n = 0;
  const auto labels = label_components(seg, conn, &n);
  LabelGrid out(seg.dims, seg.spacing, 0);
  if (n == 0) return out;
  std::vector<std::size_t> sizes(n + 1, 0);
  for (int l : labels) ++sizes[l];
  int best = 1;
  for (int l = 2; l <= n; ++l)
    if (sizes[l] > sizes[best]) best = l;
  for (std::size_t i = 0; i < seg.size(); ++i)
    if (labels[i] == best) out.data[i] = seg.data[i];
  return out;
}

}  // namespace evofcn
