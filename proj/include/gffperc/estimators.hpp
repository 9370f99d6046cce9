#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Monte Carlo estimators for level-set percolation of the Gaussian free
// field on the infinite d-regular tree.  All quantities are read off the
// forward cluster of the root: the component of {values >= h} inside the
// forward tree, where the root has d-1 children and every vertex below it
// has d-1 children of its own.  Clusters are sampled lazily to a truncation
// depth, so every "survival" statement is depth-limited and reported
// together with the depth; no extrapolation is claimed.
//
// Determinism contract: replica i of any estimator draws from an RNG seeded
// with the i-th sub-seed of the master seed.  Results are therefore
// deterministic functions of (config, seed), independent of evaluation
// order, and replicas are coupled across calls that share a master seed
// (the basis of the depth-nesting and common-random-number properties).

namespace gffperc {

// Result envelope shared by the scalar estimators.  `details` carries
// estimator-specific diagnostics (fit residuals, confidence bounds, flags
// encoded as 0/1) under stable string keys.
struct EstimateReport {
  std::string quantity;
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t replicas = 0;
  std::size_t censored = 0;  // replicas whose cluster reached the truncation depth
  std::uint64_t seed = 0;

  // Config echo.
  int d = 0;
  int depth = 0;
  std::vector<double> h_grid;      // levels this estimate touched
  std::vector<double> delta_grid;  // exponential-moment tilts, when used

  std::vector<std::pair<std::string, double>> details;

  double detail(std::string_view key) const;  // throws std::out_of_range on a miss
  bool has_detail(std::string_view key) const;
};

// Fraction of replicas whose forward cluster at level h reaches the
// truncation depth -- the depth-limited stand-in for the forward
// percolation probability.  Deeper truncations give non-increasing
// estimates replica by replica under a shared master seed, because a
// replica's draw sequence agrees across truncation depths until the first
// vertex at the shallower depth is generated.  Standard error is binomial.
// The censored count equals the survivor count by construction.
EstimateReport estimate_eta_plus(int d, double h, int depth, std::size_t replicas,
                                 std::uint64_t seed);

// Geometric growth rate of the mean forward-sphere cluster counts
// E|C ∩ S⁺(o,k)|:
// least-squares fit of log mean counts against k over the window
// k in [depth/2, depth], reported as exp(slope).  Levels with zero mean are
// excluded from the fit and counted under the "floored_levels" detail; if
// fewer than two levels remain the estimate is 0 with the "no_growth" flag.
// Standard error comes from eight round-robin replica batches refit
// independently; "fit_rms" records the root-mean-square fit residual.
EstimateReport estimate_lambda(int d, double h, int depth, std::size_t replicas,
                               std::uint64_t seed);

// Critical level: the point where the growth rate above crosses one.
// Requires the (sorted) grid to bracket the crossing -- growth rate above 1
// at the grid minimum and below 1 at the maximum -- and throws
// std::domain_error telling the caller to extend the grid otherwise.  All
// levels are evaluated with common random numbers (replica i reuses the
// same sub-seed everywhere), the bracketing grid pair is refined by
// bisection, and the estimate interpolates the final bracket.  The
// confidence interval is a percentile bootstrap over replicas: each
// resample rebuilds the whole growth-rate curve from the stored per-replica
// sphere counts and reads off its own crossing.  Details: "ci_lo", "ci_hi",
// "ci_width", "bracket_lo"/"bracket_hi" with "lambda_at_bracket_lo" > 1 >
// "lambda_at_bracket_hi" (the bisection contract),
// "lambda_at_grid_min"/"lambda_at_grid_max", "evaluations", and
// "bootstrap_clamped" (resamples whose curve never crossed 1).  The
// censored count is taken at the evaluation nearest the estimate.  Throws
// std::runtime_error if the estimate does not land in (0, infinity).
EstimateReport estimate_h_star(int d, std::span<const double> h_grid, int depth,
                               std::size_t replicas, std::uint64_t seed);

// Empirical check that for h below the critical level, the probability of
// the forward cluster holding at least lambda^k / k^2 vertices on the
// k-sphere stabilizes (in k) at the survival probability.  Shares the
// replica sub-seed schedule with estimate_eta_plus and estimate_lambda, so
// at equal (d, h, depth, replicas, seed) the reference value below equals
// the eta estimate exactly.
struct SphereGrowthRow {
  int level = 0;
  double probability = 0.0;  // P[ |C ∩ S⁺(o,k)| >= lambda^k / k^2 ]
  double std_error = 0.0;
};

struct SphereGrowthCheck {
  std::vector<SphereGrowthRow> rows;  // levels depth/2 .. depth
  double eta_depth_limited = 0.0;     // reach-depth fraction, same replicas
  double eta_std_error = 0.0;
  std::size_t replicas = 0;
};

SphereGrowthCheck check_sphere_growth(int d, double h, double lambda_hat, int depth,
                                      std::size_t replicas, std::uint64_t seed);

// Subcritical exponential moments.  With the root pinned at a, the tilted
// cluster mass g(a) = E_a[(1+delta)^{|C|}] satisfies the one-step identity
//   g(a) = (1+delta) * ( E[ g(a/(d-1) + Y) ] )^(d-1),   Y ~ N(0, d/(d-1)),
// because the root (in the cluster whenever a >= h) passes value a/(d-1)
// plus fresh noise to each of its d-1 forward children, whose subtrees are
// independent copies.  For each tilt delta and each pin a in {h, h+1/2,
// h+1, h+2} the cell estimates g(a) by outer Monte Carlo, the right-hand
// side by nested Monte Carlo (64 draws of Y, each with a full inner
// estimate under stratified sub-seeds), and reports the residual with a
// bootstrap standard error over both stages.  Tilted masses accumulate in
// log space; a replica whose exponent exceeds 700 marks the cell diverged
// and stops its sampling.
struct FixedPointCell {
  double delta = 0.0;
  double a = 0.0;  // pinned root value
  double g_estimate = 0.0;
  double g_std_error = 0.0;
  double recursion_value = 0.0;  // (1+delta) * (mean inner estimate)^(d-1)
  double residual = 0.0;
  double residual_std_error = 0.0;
  bool diverged = false;
  std::size_t censored = 0;  // outer replicas that hit the truncation depth
};

struct ExpMomentReport {
  int d = 0;
  double h = 0.0;
  int depth = 0;
  std::size_t replicas = 0;
  std::uint64_t seed = 0;
  std::vector<double> a_grid;
  std::vector<double> delta_grid;
  std::vector<FixedPointCell> cells;  // delta-major, a-minor order
  // Largest tilt whose cells are all bounded and consistent: no overflow,
  // relative standard error of the tilted mass at most 25% (an
  // out-of-control sample mean signals an infinite-mean tilt), and every
  // residual within five bootstrap standard errors.  `any_qualified` is
  // false when no tested tilt passed (best_delta then stays 0).
  double best_delta = 0.0;
  bool any_qualified = false;
};

ExpMomentReport check_exp_moment_fixed_point(int d, double h,
                                             std::span<const double> delta_grid, int depth,
                                             std::size_t replicas, std::uint64_t seed);

}  // namespace gffperc
