#include "gffperc/percolation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace gffperc {

ComponentDecomposition level_components(const RegularGraph& g, const GraphField& field,
                                        double h) {
  const std::size_t n = g.size();
  if (field.values.size() != n) throw std::invalid_argument("field size mismatch");

  ComponentDecomposition out;
  out.level = h;
  out.labels.assign(n, ComponentDecomposition::npos);

  std::vector<std::uint32_t> queue;
  for (std::uint32_t start = 0; start < n; ++start) {
    if (field.values[start] < h || out.labels[start] != ComponentDecomposition::npos)
      continue;
    // Sweeping starts in ascending order makes the BFS root the smallest
    // index of its component, which is exactly the canonical label.
    queue.assign(1, start);
    out.labels[start] = start;
    std::uint32_t count = 0;
    while (!queue.empty()) {
      const std::uint32_t v = queue.back();
      queue.pop_back();
      ++count;
      for (std::uint32_t u : g.neighbors(v)) {
        if (field.values[u] >= h && out.labels[u] == ComponentDecomposition::npos) {
          out.labels[u] = start;
          queue.push_back(u);
        }
      }
    }
    out.sizes.push_back(count);
  }
  std::sort(out.sizes.begin(), out.sizes.end(), std::greater<>());
  out.max_size = out.sizes.empty() ? 0 : out.sizes.front();
  return out;
}

MesoscopicCensus mesoscopic_census(const RegularGraph& g, const GraphField& field, double h,
                                   const ScaleConstants& constants, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  const std::size_t n = g.size();
  ComponentDecomposition comps = level_components(g, field, h);

  std::vector<std::uint32_t> size_at_root(n, 0);
  for (std::uint32_t v = 0; v < n; ++v)
    if (comps.labels[v] != ComponentDecomposition::npos) ++size_at_root[comps.labels[v]];

  MesoscopicCensus census;
  census.level = h;
  census.gamma = gamma;
  census.threshold = std::pow(static_cast<double>(n), gamma);
  const double cut = census.threshold - 1e-9;  // guard pow() round-off at integer thresholds

  for (std::uint32_t x = 0; x < n; ++x) {
    if (g.tree_excess(x, 2 * constants.R_n) > 0) ++census.non_tree_like;
    const std::uint32_t root = comps.labels[x];
    if (root == ComponentDecomposition::npos) continue;
    if (static_cast<double>(size_at_root[root]) >= cut) ++census.cluster_count;
    std::uint32_t on_sphere = 0;
    for (std::uint32_t s : forward_sphere_image(g, x, constants.r_n))
      if (comps.labels[s] == root) ++on_sphere;
    if (static_cast<double>(on_sphere) >= cut) ++census.sphere_restricted_count;
  }
  census.tree_like_fraction =
      1.0 - static_cast<double>(census.non_tree_like) / static_cast<double>(n);
  return census;
}

}  // namespace gffperc
