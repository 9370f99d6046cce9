#pragma once

#include <cstdint>
#include <vector>

#include "gffperc/graph.hpp"
#include "gffperc/stats.hpp"

namespace gffperc {

// Default structural-audit parameters for the experiment ladders: radius-2
// tree-excess balls and a spectral-gap floor comfortably below the typical
// gap of a random 3-regular graph (~0.057), so freshly generated graphs
// almost always pass on the first attempt.
inline constexpr double kLadderAuditAlpha = 0.2;
inline constexpr double kLadderAuditBeta = 0.04;

// Upper bound on generation attempts per ladder size before giving up;
// rejected (unaudited) graphs are skipped deterministically.
inline constexpr int kLadderAuditAttempts = 32;

// ---------------------------------------------------------------------------
// Largest level-set component across a ladder of graph sizes
// ---------------------------------------------------------------------------

struct SubcriticalConfig {
  int d = 3;
  double h = 0.0;             // level; meaningful above the critical level
  double size_factor = 15.0;  // K in the P[max >= K ln N] exceedance check
  std::size_t replicas = 200;
  std::uint64_t seed = 1;
  std::vector<std::size_t> ladder{1024, 2048, 4096, 8192};
  double alpha = kLadderAuditAlpha;
  double beta = kLadderAuditBeta;
  int threads = 1;
};

struct SubcriticalRung {
  std::size_t n = 0;
  std::uint64_t graph_seed = 0;  // accepted generator seed
  int audit_attempts = 1;        // generations needed to pass the audit
  double spectral_gap = 0.0;
  double ln_n = 0.0;
  double mean_max = 0.0;  // largest component of {field >= h}, replica mean
  double se_max = 0.0;
  double ratio = 0.0;  // mean_max / ln n
  double exceed_fraction = 0.0;  // P[max >= size_factor * ln n]
  std::uint32_t max_observed = 0;
  std::vector<std::uint32_t> max_sizes;  // per replica, task order
};

struct SubcriticalReport {
  int d = 3;
  double h = 0.0;
  double size_factor = 0.0;
  std::size_t replicas = 0;
  std::uint64_t seed = 0;
  double alpha = 0.0, beta = 0.0;

  std::vector<SubcriticalRung> rungs;
  LineFit fit;  // mean_max against ln N: slope near-constant growth per e-fold

  // The check the run asserts: the exceedance probability at the configured
  // size factor does not grow with N.
  bool exceed_non_increasing = false;
  bool passed() const { return exceed_non_increasing; }
};

// Samples `replicas` zero-average fields per ladder size on a freshly
// generated, audited d-regular graph and records the largest component of
// the level set {field >= h}.  Graphs failing the audit are rejected and the
// next deterministic sub-seed is tried.  Throws std::invalid_argument on bad
// configuration and std::runtime_error when no graph passes the audit.
SubcriticalReport run_subcritical_experiment(const SubcriticalConfig& cfg);

// ---------------------------------------------------------------------------
// Density of mesoscopically large clusters across the same ladder
// ---------------------------------------------------------------------------

struct SupercriticalConfig {
  int d = 3;
  double h = 0.0;     // level; meaningful below the critical level
  double delta = 0.1; // cluster growth rate is measured at h + delta
  std::size_t replicas = 100;
  std::uint64_t seed = 1;
  std::vector<std::size_t> ladder{1024, 2048, 4096, 8192};
  double alpha = kLadderAuditAlpha;
  double beta = kLadderAuditBeta;
  int threads = 1;

  // Tree-side reference estimates (survival probability at h, growth rate
  // at h + delta) driving the thresholds.
  int eta_depth = 25;
  std::size_t eta_replicas = 4000;
  int lambda_depth = 18;
  std::size_t lambda_replicas = 2000;
};

struct SupercriticalRung {
  std::size_t n = 0;
  std::uint64_t graph_seed = 0;
  int audit_attempts = 1;
  double spectral_gap = 0.0;
  double ln_n = 0.0;

  double gamma = 0.0;      // size exponent derived from the measured growth rate
  double threshold = 0.0;  // N^gamma

  double mean_fraction = 0.0;  // #{x : |C_x| >= N^gamma} / N, replica mean
  double se_fraction = 0.0;
  double variance_over_n2 = 0.0;  // replica variance of the count, divided by N^2
  double meets_half_eta = 0.0;    // fraction of replicas with fraction >= eta_hat/2
  double mean_sphere_fraction = 0.0;     // sphere-restricted census, replica mean
  double mean_tree_like_fraction = 0.0;  // vertices tree-like out to 2 R_n
  std::vector<double> fractions;         // per replica, task order
};

struct SupercriticalReport {
  int d = 3;
  double h = 0.0;
  double delta = 0.0;
  std::size_t replicas = 0;
  std::uint64_t seed = 0;
  double alpha = 0.0, beta = 0.0;

  double eta_hat = 0.0;  // tree survival probability at h (depth-limited)
  double eta_se = 0.0;
  double lambda_hat = 0.0;  // tree growth rate at h + delta
  double lambda_se = 0.0;

  std::vector<SupercriticalRung> rungs;

  bool frequency_non_decreasing = false;  // meets_half_eta along the ladder
  bool variance_decreasing = false;       // variance_over_n2 strictly down
  bool top_mean_above_half_eta = false;   // mean_fraction at the largest N
  bool top_mean_near_eta = false;         // >= eta_hat - 2*eta_se at the top
  bool passed() const { return frequency_non_decreasing; }
};

// For each ladder size, counts vertices whose level-h cluster reaches size
// N^gamma, gamma = (c0/20) log_{d-1}(lambda_hat) with lambda_hat measured on
// the tree at h + delta, and compares the per-replica fractions against half
// the tree survival probability.  Throws std::domain_error when the measured
// growth rate at h + delta is <= 1 (the level is not below critical), plus
// the same audit and argument errors as the subcritical run.
SupercriticalReport run_supercritical_experiment(const SupercriticalConfig& cfg);

}  // namespace gffperc
