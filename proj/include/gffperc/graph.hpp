#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gffperc {

// Finite d-regular (multi)graph on vertex set {0, ..., n-1}.
//
// Adjacency is stored flat with exactly d entries per vertex and each row
// sorted, so iteration order -- and everything derived from it, charts in
// particular -- is deterministic.  A self-loop occupies two entries of its
// own row and a parallel edge repeats an entry; such graphs can be loaded
// and inspected, but the assumption audit rejects them.
class RegularGraph {
 public:
  static constexpr std::uint32_t npos = 0xffffffffu;

  // `flat` holds n*d neighbor entries, row v at [v*d, (v+1)*d).  Rows are
  // sorted on construction.  Throws std::invalid_argument on malformed input
  // (wrong size, out-of-range entries, asymmetric edge endpoint counts).
  RegularGraph(int d, std::size_t n, std::vector<std::uint32_t> flat);

  int degree() const { return d_; }
  std::size_t size() const { return n_; }

  std::span<const std::uint32_t> neighbors(std::uint32_t v) const {
    return {adj_.data() + static_cast<std::size_t>(v) * d_,
            static_cast<std::size_t>(d_)};
  }

  bool is_simple() const;     // no self-loops, no parallel edges
  bool is_connected() const;  // BFS from vertex 0

  // BFS distances from `source`; -1 marks vertices further than `max_dist`
  // (or unreachable).  max_dist < 0 means unbounded.
  std::vector<int> distances(std::uint32_t source, int max_dist = -1) const;

  // Vertices at distance <= r (sorted) / exactly r (sorted).
  std::vector<std::uint32_t> ball(std::uint32_t center, int radius) const;
  std::vector<std::uint32_t> sphere(std::uint32_t center, int radius) const;

  // Edges minus vertices plus one on the subgraph induced by B(center, radius).
  int tree_excess(std::uint32_t center, int radius) const;

  // Copy with vertex v renamed perm[v]; perm must be a permutation of 0..n-1.
  RegularGraph relabeled(const std::vector<std::uint32_t>& perm) const;

  static RegularGraph complete(int n_vertices);  // K_n, degree n-1
  static RegularGraph petersen();

  // Text format: first line "d N", then one line per vertex
  // "v: u1 u2 ... ud" with sorted neighbor indices.
  std::string to_text() const;
  static RegularGraph from_text(const std::string& text);

 private:
  int d_;
  std::size_t n_;
  std::vector<std::uint32_t> adj_;
};

// Uniform-ish simple d-regular graph from the pairing (configuration) model:
// shuffle the n*d half-edge stubs, pair them up, and restart the whole
// pairing whenever it produces a self-loop, a parallel edge, or a
// disconnected graph.  Deterministic given the seed.  Throws
// std::invalid_argument when n*d is odd or n <= d, std::runtime_error when
// the retry budget (10*n attempts) is exhausted.
RegularGraph generate_random_regular(int d, std::size_t n, std::uint64_t seed);

// Result of checking a graph against the standing structural hypotheses:
// (0) d-regular, connected, simple;
// (1) every ball of radius floor(alpha * log_{d-1} N) has tree excess <= 1;
// (2) the spectral gap of I - P is at least beta.
struct AssumptionReport {
  double alpha = 0.0;
  double beta = 0.0;
  int radius_checked = 0;
  int max_tree_excess_in_ball = 0;
  double spectral_gap = 0.0;
  bool connected = false;
  bool simple = false;
  std::array<bool, 3> passes{false, false, false};

  bool all() const { return passes[0] && passes[1] && passes[2]; }
};

enum class SpectralMethod {
  kAuto,      // dense for N <= 4096, iterative above
  kDense,     // full symmetric eigensolve of P
  kIterative  // deflated Lanczos on the complement of constants
};

// Smallest nonzero eigenvalue of I - P (equivalently 1 minus the second
// largest eigenvalue of the transition matrix P = A/d).  Returns 0 for a
// disconnected graph.  The iterative path targets relative accuracy 1e-8.
double spectral_gap(const RegularGraph& g, SpectralMethod method = SpectralMethod::kAuto);

// Full audit; requires 0 < alpha <= 1 and 0 < beta <= 2.
AssumptionReport audit_assumptions(const RegularGraph& g, double alpha, double beta);

// The handful of scales everything downstream is phrased in.  All logs are
// base d-1.  `spectral_gap` should come from an audit of the same graph.
struct ScaleConstants {
  int d = 0;
  std::size_t n = 0;
  double alpha = 0.0;
  double beta = 0.0;
  double spectral_gap = 0.0;

  double c0 = 0.0;   // alpha * beta / (d - 1), must land in (0,1)
  int s_n = 1;       // max{1, floor(8 log(log N))}  -- insulation radius
  int r_n = 1;       // max{1, floor((c0/18) log N)} -- inner sphere radius
  int R_n = 1;       // max{1, floor((c0/6) log N)}  -- outer sphere radius
  double t_n = 0.0;  // (ln N)^2 / spectral_gap      -- mixing time scale

  // Per-level exponent (c0/20) * log_{d-1}(lambda_h) for a growth rate
  // lambda_h of the level-h tree cluster.
  double gamma(double lambda_h) const;
};

ScaleConstants scale_constants(int d, std::size_t n, double alpha, double beta,
                               double spectral_gap);

// ---------------------------------------------------------------------------
// Canonical chart from the d-regular tree onto the graph.
//
// A tree address is the sequence of child choices along the unique
// non-backtracking path from the root: the root exposes all d sorted
// neighbors as children 0..d-1, every later vertex exposes its sorted
// neighbor list minus the parent as children 0..d-2.  The empty address is
// the root itself.

// Image of the given address under the chart centred at x.
std::uint32_t cover_tree_image(const RegularGraph& g, std::uint32_t x,
                               std::span<const int> addr);

// The canonical preimage of y under the chart at x: the address of minimal
// depth (= graph distance), ties broken lexicographically.  Throws if y is
// unreachable from x.
std::vector<int> min_depth_preimage_address(const RegularGraph& g,
                                            std::uint32_t x, std::uint32_t y);

// Image of the forward sphere of radius R: addresses whose first step avoids
// child 0 (the designated "backward" neighbor of the root) and then branch
// freely.  Returns the image vertex set, sorted and deduplicated.
std::vector<std::uint32_t> forward_sphere_image(const RegularGraph& g,
                                                std::uint32_t x, int R);

// Number of non-backtracking paths from x to y that stay inside B(x, R) and
// have length in [len_lo, len_hi).  Requires y in B(x, R) and tree excess
// <= 1 in the ball (std::domain_error otherwise): with at most one cycle in
// sight the count per cycle-length window is provably at most 2.
std::size_t count_nonbacktracking_paths(const RegularGraph& g, std::uint32_t x,
                                        std::uint32_t y, int R, int len_lo,
                                        int len_hi);

}  // namespace gffperc
