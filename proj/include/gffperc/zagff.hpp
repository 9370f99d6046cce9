#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gffperc/graph.hpp"

namespace gffperc {

// Field values on a graph, one per vertex.  Sampled fields sum to zero over
// the vertex set (up to solver tolerance): the constant mode carries no mass.
struct GraphField {
  std::vector<double> values;
};

enum class GreenMode {
  kAuto,      // dense spectral data for N <= 4096, matrix-free above
  kDense,     // force the full eigendecomposition
  kIterative  // force the matrix-free path
};

// Zero-average Green operator: the group inverse of I - P on the complement
// of the constants.  Dense regime keeps the eigenpairs of P (and lazily a
// full matrix); the iterative regime answers column/apply queries with
// deflated conjugate-gradient solves and samples through a Chebyshev
// approximation of the inverse square root (relative accuracy ~1e-6).
class GreenOperator {
 public:
  explicit GreenOperator(const RegularGraph& g, GreenMode mode = GreenMode::kAuto);

  const RegularGraph& graph() const { return graph_; }
  std::size_t size() const { return graph_.size(); }
  bool dense_mode() const { return dense_; }
  double spectral_gap_estimate() const { return gap_; }

  double entry(std::uint32_t x, std::uint32_t y) const;
  Eigen::VectorXd column(std::uint32_t y) const;       // G e_y
  Eigen::VectorXd apply(const Eigen::VectorXd& f) const;  // G f

  // Full matrix, materialized on first use.  Dense regime only.
  const Eigen::MatrixXd& matrix() const;

  // Field with covariance G: independent N(0,1) weights on the non-kernel
  // eigenmodes (dense) or a Chebyshev filter applied to white noise
  // (iterative).  Deterministic given the seed.
  GraphField sample(std::uint64_t seed) const;

 private:
  Eigen::VectorXd cg_solve(const Eigen::VectorXd& rhs) const;
  Eigen::VectorXd chebyshev_inv_sqrt(const Eigen::VectorXd& noise) const;
  Eigen::VectorXd apply_laplacian(const Eigen::VectorXd& v) const;

  RegularGraph graph_;
  bool dense_ = true;
  double gap_ = 0.0;

  // dense regime
  Eigen::VectorXd lambda_;     // eigenvalues of I - P, ascending in P order
  Eigen::VectorXd inv_lambda_; // pseudo-inverse weights (0 on the kernel)
  Eigen::MatrixXd vecs_;
  mutable std::optional<Eigen::MatrixXd> full_;

  // iterative regime
  std::vector<double> cheb_coef_;
  double cheb_lo_ = 0.0, cheb_hi_ = 2.0;

  mutable std::unique_ptr<std::mutex> mtx_;
  mutable std::unordered_map<std::uint32_t, Eigen::VectorXd> col_cache_;
};

GreenOperator build_green(const RegularGraph& g, GreenMode mode = GreenMode::kAuto);

GraphField sample_zagff(const GreenOperator& green, std::uint64_t seed);

// Exact solvers for hitting a target set A: expected hitting times, hitting
// distributions, and expectations of boundary functionals, all sharing one
// sparse factorization of I - P off A.  Functional arguments align with
// targets() order (sorted, deduplicated).
class HarmonicSystem {
 public:
  HarmonicSystem(const RegularGraph& g, std::vector<std::uint32_t> targets);

  const std::vector<std::uint32_t>& targets() const { return targets_; }

  double expected_hit_time(std::uint32_t x) const;  // 0 on the target set
  double mean_expected_hit_time() const;            // uniform average over starts

  // Law of the first visited target, starting from x.
  std::vector<double> hit_distribution(std::uint32_t x) const;

  // E_x[f(X at first visit)] for f given on targets; _all returns the value
  // for every start, whose uniform average is the stationary expectation.
  double boundary_expectation(std::uint32_t x, std::span<const double> f) const;
  Eigen::VectorXd boundary_expectation_all(std::span<const double> f) const;
  double mean_boundary_expectation(std::span<const double> f) const;

 private:
  const RegularGraph* g_;
  std::vector<std::uint32_t> targets_;
  std::vector<int> row_of_;     // vertex -> complement row, -1 on targets
  std::vector<std::uint32_t> comp_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> factor_;
  Eigen::VectorXd hit_times_;   // on complement rows
};

// Law of the field at x given its values on A: the mean is the harmonic
// extension corrected by the hitting-time ratio (the zero-average constraint
// leaks through the constant mode), the variance likewise corrects the
// killed variance.  Agrees exactly with Schur-complement conditioning.
struct ConditionalLaw {
  double mean = 0.0;
  double variance = 0.0;
};

ConditionalLaw conditional_law(const GreenOperator& green,
                               std::span<const std::uint32_t> A,
                               std::span<const double> observed, std::uint32_t x);

// Variant reusing a prebuilt HarmonicSystem for the same A; `observed`
// aligns with system.targets().
ConditionalLaw conditional_law(const GreenOperator& green, const HarmonicSystem& system,
                               std::span<const double> observed, std::uint32_t x);

// Green function of the walk killed on exiting U (a proper subset), by exact
// sparse solve.  Zero when x or y is outside U.
double killed_graph_green(const RegularGraph& g, std::span<const std::uint32_t> U,
                          std::uint32_t x, std::uint32_t y);
std::vector<double> killed_graph_green_column(const RegularGraph& g,
                                              std::span<const std::uint32_t> U,
                                              std::uint32_t y);
// Full matrix on U, aligned with the order of U as given.
Eigen::MatrixXd killed_graph_green_matrix(const RegularGraph& g,
                                          std::span<const std::uint32_t> U);

}  // namespace gffperc
