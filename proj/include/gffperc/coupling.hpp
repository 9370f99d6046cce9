#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gffperc/graph.hpp"
#include "gffperc/tree.hpp"
#include "gffperc/zagff.hpp"

namespace gffperc {

// One joint draw of the zero-average graph field and the regular-tree field
// over a chart domain: either a single ball B(x,R) or a disjoint pair
// B(x,R) ∪ B(x',R).  Both fields decompose against the killed region U (the
// (R-1)-ball(s)) as
//
//     graph_field = killed_part + graph_harmonic
//     tree_field  = killed_part + tree_harmonic
//
// with a *shared* killed part, so the difference of the two fields equals
// the difference of their harmonic parts identically, replica by replica.
// The harmonic parts are the expected boundary values at the exit of U,
// driven by sphere values drawn from the exact marginal law of each side
// (zero-average Green restriction on the graph, distance kernel on the
// tree), independently of the killed part and of each other.
struct CoupledPair {
  std::uint32_t x = 0;
  std::optional<std::uint32_t> x_prime;  // second centre for two-ball charts
  int inner_radius = 0;                  // r: deviation is measured here
  int outer_radius = 0;                  // R: fields live on the R-ball(s)

  // Chart domain, sorted ascending.  tree_address[i] is the image of
  // domain[i] on the tree: the child-index path from the tree root, using
  // the canonical chart at x (for two-ball charts the second ball hangs off
  // the lexicographically minimal shortest path from x to x').  Tree
  // distances between chart points are |a| + |b| - 2*lcp(a, b).
  std::vector<std::uint32_t> domain;
  std::vector<std::vector<int>> tree_address;

  std::vector<std::uint8_t> killed_region;  // 1 iff domain[i] lies in U
  std::vector<double> killed_part;          // shared field, zero off U
  std::vector<double> graph_harmonic;       // exit-value average, graph side
  std::vector<double> tree_harmonic;        // exit-value average, tree side
  std::vector<double> graph_field;          // killed_part + graph_harmonic
  std::vector<double> tree_field;           // killed_part + tree_harmonic

  // max over the inner ball(s) of |graph_field - tree_field|.
  double sup_deviation = 0.0;

  std::size_t index_of(std::uint32_t v) const;  // throws if v not in domain
};

// Samples a coupled pair of fields around x (and x' when given).  Requires
// 1 <= r < R, a tree-like 2R-ball around each centre, and for pairs that the
// two 2R-balls are disjoint; violations raise errors naming the failed
// geometric condition.  Deterministic given the seed.
CoupledPair couple_local(const GreenOperator& green, const RegularGraph& g,
                         std::uint32_t x, std::optional<std::uint32_t> x_prime,
                         int r, int R, std::uint64_t seed);

// Exceedance thresholds used by the deviation tail measurement when the
// caller does not supply a grid.
inline constexpr std::array<double, 4> kDeviationEpsilonGrid{0.1, 0.2, 0.5, 1.0};

// Empirical tail of the coupling deviation over independent replicas:
// exceed[k] counts replicas with sup_deviation > epsilons[k].  Replica i
// uses couple_local with sub-seed i, so the tail of a fixed (r, R) cell is
// reproducible in isolation.
struct DeviationTail {
  int inner_radius = 0;
  int outer_radius = 0;
  std::size_t replicas = 0;
  std::vector<double> epsilons;
  std::vector<std::size_t> exceed;
  double mean_deviation = 0.0;
  double max_deviation = 0.0;
};

DeviationTail deviation_tail(const GreenOperator& green, const RegularGraph& g,
                             std::uint32_t x, std::optional<std::uint32_t> x_prime,
                             int r, int R, std::size_t replicas, std::uint64_t seed,
                             std::span<const double> epsilons = kDeviationEpsilonGrid);

// Variance of the harmonic average over the exit sphere, vertex by vertex.
// For a walk started at y inside B(centre, R), the expected field value at
// the first sphere visit is a linear functional of the field on the sphere;
// `exact` is its variance (hitting law x covariance kernel x hitting law)
// and `bound` the geometric envelope decaying like (1/(d-1))^(R - 2 dist).
struct BoundaryVariance {
  std::uint64_t vertex = 0;  // graph vertex id, or tree ball vertex id
  int distance = 0;          // distance from the centre
  double exact = 0.0;
  double bound = 0.0;
};

// Graph side: sphere S(x,R) of the zero-average field.  Requires a
// tree-like 2R-ball around x.  The envelope prefactor is
// 3 d^2 / ((d-1)(d-2)); results follow the sorted order of B(x,R).
std::vector<BoundaryVariance> boundary_variance_check(const GreenOperator& green,
                                                      const RegularGraph& g,
                                                      std::uint32_t x, int R);

// Tree side: sphere S(o,R) in a truncated ball, prefactor d^2/((d-1)(d-2));
// results follow ball_vertices(R) order.
std::vector<BoundaryVariance> boundary_variance_check(const TreeBall& ball, int R);

// How close the conditional law at a well-insulated boundary vertex comes to
// its idealized tree form: mean_gap = |conditional mean - observed(xbar)/(d-1)|
// and var_gap = |conditional variance - d/(d-1)|, where xbar is the unique
// explored neighbor of x.
struct ProximityGap {
  double mean_gap = 0.0;
  double var_gap = 0.0;
  std::uint32_t explored_neighbor = 0;
  ConditionalLaw law;
};

// Preconditions, each reported by name on failure: x passes the good-vertex
// test against `conditioning` at `shell_radius`; |conditioning| is at most
// size_factor * ln N; sup |observed| is at most value_factor * sqrt(ln N).
ProximityGap conditional_proximity_check(const GreenOperator& green, const RegularGraph& g,
                                         std::span<const std::uint32_t> conditioning,
                                         std::span<const double> observed, std::uint32_t x,
                                         int shell_radius, double size_factor = 2.0,
                                         double value_factor = 3.0);

}  // namespace gffperc
