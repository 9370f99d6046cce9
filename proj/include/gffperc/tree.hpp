#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gffperc/rng.hpp"

namespace gffperc {

// Ball of radius `depth` around the root of the infinite d-regular tree.
//
// Vertices are addressed implicitly in BFS order -- index 0 is the root,
// level k occupies a contiguous block -- and parent/child/level queries are
// pure index arithmetic, so the ball itself costs nothing to "hold" even at
// depths where materializing it would be absurd.  Anything that needs actual
// storage (fields, linear solves) materializes only the vertex sets it
// touches.
//
// One root neighbor is marked as the designated "backward" direction: by
// convention it is child 0, mirroring the canonical chart on graphs.  The
// forward part of the tree is everything not descending through it.
class TreeBall {
 public:
  TreeBall(int d, int depth);

  int degree() const { return d_; }
  int depth() const { return depth_; }
  std::uint64_t size() const { return total_; }
  static constexpr std::uint64_t root() { return 0; }

  int level(std::uint64_t v) const;
  std::uint64_t parent(std::uint64_t v) const;  // throws at the root
  int child_count(std::uint64_t v) const;       // d at root, d-1 inside, 0 at depth
  std::uint64_t child(std::uint64_t v, int j) const;
  std::uint64_t marked_neighbor() const;        // ō, the backward root neighbor

  bool in_forward_part(std::uint64_t v) const;
  int dist(std::uint64_t a, std::uint64_t b) const;

  // Child-index sequence from the root (empty for the root itself).
  std::vector<int> address(std::uint64_t v) const;
  std::uint64_t at_address(std::span<const int> addr) const;

  // Materialized vertex lists; these throw std::length_error rather than
  // attempt an allocation in the hundreds of millions.
  std::vector<std::uint64_t> sphere(int k) const;
  std::vector<std::uint64_t> forward_sphere(int k) const;  // |.| = (d-1)^k
  std::vector<std::uint64_t> ball_vertices(int k) const;

  // x plus its descendants (away from the root) down to rel_depth levels
  // below x, clipped at the truncation.  For the root this is the forward
  // part only: the marked subtree is excluded.
  std::vector<std::uint64_t> forward_subtree(std::uint64_t x, int rel_depth) const;

  std::uint64_t sphere_count(int k) const;          // d(d-1)^{k-1}
  std::uint64_t forward_sphere_count(int k) const;  // (d-1)^k
  std::uint64_t level_offset(int k) const;          // first vertex id of level k

 private:
  void check_vertex(std::uint64_t v) const;

  int d_;
  int depth_;
  std::uint64_t total_;
  std::vector<std::uint64_t> offset_;  // offset_[k] = first index of level k
  std::vector<std::uint64_t> pow_;     // pow_[k] = (d-1)^k
};

// Centred Gaussian field values on a fully materialized tree ball.
struct TreeField {
  TreeField(TreeBall b) : ball(b) {}

  TreeBall ball;
  std::vector<double> values;                 // indexed by vertex id
  std::optional<double> root_condition;       // pinned root value, if any
};

// Covariance of the tree field: ((d-1)/(d-2)) * (1/(d-1))^dist.
double tree_green(int d, int dist);

// Root-to-leaves sampler: the root is N(0, (d-1)/(d-2)) unless pinned, and
// every other vertex is parent/(d-1) plus independent N(0, d/(d-1)) noise.
// Deterministic given the seed.
TreeField sample_tree_gff(const TreeBall& ball, std::optional<double> root_condition,
                          std::uint64_t seed);

// Green function of the walk killed on exiting U, solved exactly (sparse
// Cholesky; at most 1e5 unknowns).  U must consist of distinct vertices
// strictly above the truncation depth, so that every exit is observable.
// Returns 0 when x or y lies outside U.
double killed_tree_green(const TreeBall& ball, std::span<const std::uint64_t> U,
                         std::uint64_t x, std::uint64_t y);

// Whole column g^U(., y), aligned with the order of U.
std::vector<double> killed_tree_green_column(const TreeBall& ball,
                                             std::span<const std::uint64_t> U,
                                             std::uint64_t y);

// Exact law of the first visit to the sphere S(o,R) for the walk started at
// y inside B(o,R); aligned with ball.sphere(R).  Requires R <= depth.
std::vector<double> hitting_distribution_sphere(const TreeBall& ball,
                                                std::uint64_t y, int R);

// Component of {values >= h} containing the root, restricted to the forward
// part of the tree.  `censored` reports that the cluster reached the
// truncation depth, i.e. the counts are lower bounds for the infinite tree.
struct ForwardCluster {
  std::vector<std::uint64_t> vertices;      // sorted ids
  std::vector<std::uint64_t> level_counts;  // |C ∩ S⁺(o,k)|, k = 0..depth
  bool censored = false;

  std::uint64_t total() const;
};

ForwardCluster forward_cluster(const TreeField& field, double h);

// Streaming variant for depths where the ball cannot be materialized: field
// values are generated on the fly along the cluster boundary only (memory is
// O(depth)).  Same root/noise law as sample_tree_gff.
struct ClusterLevelCounts {
  std::vector<std::uint64_t> counts;  // size depth+1
  bool censored = false;

  std::uint64_t total() const;
};

ClusterLevelCounts lazy_forward_cluster_counts(int d, int depth, double h,
                                               std::optional<double> root_condition,
                                               Rng& rng);

}  // namespace gffperc
