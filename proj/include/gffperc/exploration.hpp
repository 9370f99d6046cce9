#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "gffperc/graph.hpp"
#include "gffperc/stats.hpp"
#include "gffperc/zagff.hpp"

namespace gffperc {

// ---------------------------------------------------------------------------
// Locality test at the boundary of an explored set
// ---------------------------------------------------------------------------

// Which of the three conditions a boundary vertex failed (kNone = passed all).
enum class GoodVertexFailure : std::uint8_t {
  kNone,
  kMultiNeighbor,  // more than one explored neighbor
  kTreeExcess,     // the shell around x contains a cycle
  kBoundaryPath,   // another boundary vertex reaches x inside the shell
};

// Outcome of the locality test for a vertex x on the outer boundary of an
// explored set A.  The shell F collects the vertices of B(A,s) \ A reachable
// from x without stepping back into A; x is good when
//   (1) x has exactly one explored neighbor,
//   (2) the subgraph induced by F is a tree, and
//   (3) no other boundary vertex of A lies in F,
// i.e. the region the exploration is about to enter through x hangs off the
// explored set at a single point and carries no cycle within distance s.
struct GoodVertexVerdict {
  bool is_good = false;
  GoodVertexFailure failure = GoodVertexFailure::kNone;
  std::optional<std::uint32_t> explored_neighbor;  // set iff condition (1) holds
  std::vector<std::uint32_t> shell;                // F, sorted
};

// Runs the test above.  `explored` lists A in any order (duplicates rejected);
// x must lie outside A but have at least one neighbor inside it, and s >= 1.
// Throws std::invalid_argument when the inputs violate these preconditions.
GoodVertexVerdict good_vertex_test(const RegularGraph& g,
                                   std::span<const std::uint32_t> explored,
                                   std::uint32_t x, int s);

// Radius used by the locality test when exploring a graph with n vertices of
// degree d: grows like 8 log_{d-1} log_{d-1} n, never below 1.
int exploration_shell_radius(int d, std::size_t n);

// ---------------------------------------------------------------------------
// Sequential conditioning engine
// ---------------------------------------------------------------------------

// Conditions the zero-average field on one revealed value at a time.  The
// covariance of the revealed set is kept as a growing Cholesky factor, so the
// next conditional law costs two triangular solves (O(k^2) for k revealed
// values) instead of a fresh harmonic solve per step.  Agrees with
// conditional_law to solver precision; the hit-time route stays the oracle.
class SequentialConditioner {
 public:
  explicit SequentialConditioner(const GreenOperator& green);

  std::size_t size() const { return vertices_.size(); }

  // Conditional mean and variance at u given every value revealed so far
  // (the unconditional marginal while nothing is revealed).  For an already
  // revealed u the law degenerates to its value.
  ConditionalLaw predict(std::uint32_t u) const;

  // Reveal the value at u; u must not have been revealed before.
  void push(std::uint32_t u, double value);

 private:
  const Eigen::VectorXd& fetch_column(std::uint32_t u) const;

  const GreenOperator* green_;
  std::vector<std::uint32_t> vertices_;      // reveal order
  std::vector<double> values_;               // aligned with vertices_
  std::vector<std::vector<double>> factor_;  // row k of the Cholesky factor
  std::vector<double> solved_;               // factor^{-1} * values
  mutable std::unordered_map<std::uint32_t, Eigen::VectorXd> columns_;
};

// ---------------------------------------------------------------------------
// Two-queue component exploration
// ---------------------------------------------------------------------------

inline constexpr double kDefaultSizeCapFactor = 20.0;  // K in the |C| < K ln n cap
inline constexpr double kDefaultAnomalyFactor = 3.0;   // c in the c sqrt(ln n) threshold

enum class TraceAction : std::uint8_t {
  kPopSecondary,  // vertex leaves the secondary queue and roots a new subtree
  kPopPrimary,    // vertex leaves the primary queue
  kDefer,         // primary-queue vertex failed the locality test, sent to SQ
  kGenerate,      // conditional value drawn, vertex becomes explored
  kEnqueue,       // unseen neighbor of a fresh cluster vertex enters PQ
  kStopCap,       // cluster reached the size cap, run halted
};

const char* trace_action_name(TraceAction a);

struct TraceEvent {
  std::uint64_t step = 0;  // 0-based, one per recorded action
  TraceAction action = TraceAction::kPopSecondary;
  std::uint32_t vertex = 0;
  // Generated value for kGenerate events, NaN otherwise.
  double value = std::numeric_limits<double>::quiet_NaN();
  std::uint32_t pq_size = 0;  // queue sizes after the action
  std::uint32_t sq_size = 0;
};

// Complete record of one exploration run.  `explored`/`values` follow
// generation order; `cluster` holds the explored vertices with value >= h
// (sorted); `subtree_roots` lists the secondary-queue pops in pop order and
// `subtrees[i]` the cluster vertices attributed to root i (sorted, possibly
// empty).  The cluster is the disjoint union of the subtrees.
struct ExplorationTrace {
  std::uint32_t start = 0;
  double level = 0.0;              // h
  double cap = 0.0;                // K ln n; the run halts once |cluster| >= cap
  double anomaly_threshold = 0.0;  // c_kappa sqrt(ln n)
  int shell_radius = 1;            // s passed to the locality test
  bool terminated_by_cap = false;
  bool anomalous = false;  // some generated |value| reached the threshold
  std::size_t k_end = 0;   // number of secondary-queue pops == subtree count

  std::vector<std::uint32_t> explored;
  std::vector<double> values;
  std::vector<std::uint32_t> cluster;
  std::vector<std::uint32_t> subtree_roots;
  std::vector<std::vector<std::uint32_t>> subtrees;
  std::vector<TraceEvent> events;
};

// Grows the level-h component of x one conditional value at a time.  Vertices
// whose surroundings pass the locality test are expanded immediately through
// the primary queue; the rest are parked on the secondary queue and root
// their own subtree when popped.  Queues are strict FIFO, neighbors enter in
// ascending index order, and values are drawn as conditional mean plus
// conditional standard deviation times an N(0,1) stream seeded from `seed`,
// so identical inputs reproduce the trace byte for byte.
ExplorationTrace explore_component(const RegularGraph& g,
                                   const GreenOperator& green, std::uint32_t x,
                                   double h, double size_cap_factor,
                                   double anomaly_factor, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Subtree domination experiment
// ---------------------------------------------------------------------------

// Aggregate outcome of comparing exploration subtrees against independent
// tree-field clusters (see subtree_domination_experiment).
struct SubtreeDominationReport {
  std::size_t traces = 0;       // exploration runs performed
  std::size_t anomalous = 0;    // runs excluded for exceeding the threshold
  std::size_t comparisons = 0;  // subtrees examined across retained runs
  std::size_t dominated = 0;    // comparisons with |subtree| <= tree cluster
  std::size_t censored = 0;     // tree clusters that hit the truncation depth
  Interval frequency{0.0, 0.0};  // Wilson 95% interval for dominated/comparisons
};

// For `replicas` independent explorations of x at level h, pairs every
// subtree with an independent cluster of the tree field: the tree root is
// pinned at the subtree root's generated value and the cluster is taken at
// the slightly lower level h - epsilon, truncated at `depth` generations.
// Records how often the subtree is no larger than its tree partner,
// restricted to runs whose values stayed below the anomaly threshold.
SubtreeDominationReport subtree_domination_experiment(
    const RegularGraph& g, const GreenOperator& green, std::uint32_t x,
    double h, double epsilon, int depth, std::size_t replicas,
    std::uint64_t seed);

}  // namespace gffperc
