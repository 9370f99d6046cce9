#pragma once

#include <cstdint>
#include <vector>

#include "gffperc/graph.hpp"
#include "gffperc/zagff.hpp"

namespace gffperc {

// Connected components of the super-level set {x : field(x) >= h}.  Labels
// are canonical (smallest vertex index in the component), so equal inputs
// give byte-identical outputs regardless of traversal or thread count.
struct ComponentDecomposition {
  static constexpr std::uint32_t npos = 0xffffffffu;  // not in the level set

  double level = 0.0;
  std::vector<std::uint32_t> labels;  // per vertex; npos off the level set
  std::vector<std::uint32_t> sizes;   // component sizes, descending
  std::uint32_t max_size = 0;
};

ComponentDecomposition level_components(const RegularGraph& g, const GraphField& field,
                                        double h);

// Counts of vertices whose level-h cluster is mesoscopically large: either
// its trace on the chart-forward sphere of radius r_n reaches size N^gamma,
// or the cluster itself does.  Also reports how many vertices fail to be
// tree-like out to radius 2*R_n.
struct MesoscopicCensus {
  double level = 0.0;
  double gamma = 0.0;
  double threshold = 0.0;                     // N^gamma
  std::uint32_t sphere_restricted_count = 0;  // #{x : |C_x ∩ S⁺(x, r_n)| >= N^gamma}
  std::uint32_t cluster_count = 0;            // #{x : |C_x| >= N^gamma}
  std::uint32_t non_tree_like = 0;            // #{x : tree excess of B(x, 2 R_n) > 0}
  double tree_like_fraction = 0.0;
};

MesoscopicCensus mesoscopic_census(const RegularGraph& g, const GraphField& field, double h,
                                   const ScaleConstants& constants, double gamma);

}  // namespace gffperc
