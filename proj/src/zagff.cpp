#include "gffperc/zagff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "gffperc/rng.hpp"

namespace gffperc {

namespace {

constexpr std::size_t kDenseLimit = 4096;
constexpr double kKernelRel = 1e-10;  // relative cutoff isolating the constant mode
constexpr std::uint64_t kZagffSampleTag = 0x7a61676666ULL;

// I - P restricted to the rows/columns of `sub` (given order).  Duplicate
// adjacencies accumulate, so multigraphs are handled exactly.
Eigen::SparseMatrix<double> restricted_laplacian(const RegularGraph& g,
                                                 std::span<const std::uint32_t> sub,
                                                 const std::vector<int>& row_of) {
  const double invd = 1.0 / static_cast<double>(g.degree());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(sub.size() * (g.degree() + 1));
  for (std::size_t r = 0; r < sub.size(); ++r) {
    trips.emplace_back(static_cast<int>(r), static_cast<int>(r), 1.0);
    for (std::uint32_t u : g.neighbors(sub[r])) {
      const int c = row_of[u];
      if (c >= 0) trips.emplace_back(static_cast<int>(r), c, -invd);
    }
  }
  Eigen::SparseMatrix<double> m(static_cast<int>(sub.size()), static_cast<int>(sub.size()));
  m.setFromTriplets(trips.begin(), trips.end());
  return m;
}

std::vector<int> index_map(std::size_t n, std::span<const std::uint32_t> sub) {
  std::vector<int> row_of(n, -1);
  for (std::size_t r = 0; r < sub.size(); ++r) {
    const std::uint32_t v = sub[r];
    if (v >= n) throw std::invalid_argument("subset vertex out of range");
    if (row_of[v] >= 0) throw std::invalid_argument("subset contains duplicates");
    row_of[v] = static_cast<int>(r);
  }
  return row_of;
}

}  // namespace

GreenOperator::GreenOperator(const RegularGraph& g, GreenMode mode)
    : graph_(g), mtx_(std::make_unique<std::mutex>()) {
  if (!graph_.is_connected())
    throw std::invalid_argument("zero-average Green function needs a connected graph");
  const std::size_t n = graph_.size();
  dense_ = (mode == GreenMode::kDense) ||
           (mode == GreenMode::kAuto && n <= kDenseLimit);

  if (dense_) {
    const double invd = 1.0 / static_cast<double>(graph_.degree());
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                              static_cast<Eigen::Index>(n));
    for (std::uint32_t v = 0; v < n; ++v)
      for (std::uint32_t u : graph_.neighbors(v)) p(v, u) += invd;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    lambda_ = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)) - es.eigenvalues();
    vecs_ = es.eigenvectors();
    const double cutoff = kKernelRel * lambda_.maxCoeff();
    inv_lambda_.resize(lambda_.size());
    gap_ = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < lambda_.size(); ++i) {
      if (lambda_[i] > cutoff) {
        inv_lambda_[i] = 1.0 / lambda_[i];
        gap_ = std::min(gap_, lambda_[i]);
      } else {
        inv_lambda_[i] = 0.0;
      }
    }
  } else {
    gap_ = spectral_gap(graph_, SpectralMethod::kIterative);
    if (!(gap_ > 0)) throw std::runtime_error("spectral gap estimate not positive");
    cheb_lo_ = 0.9 * gap_;
    cheb_hi_ = 2.0;
    const double kappa = cheb_hi_ / cheb_lo_;
    const double rho = (std::sqrt(kappa) - 1.0) / (std::sqrt(kappa) + 1.0);
    int degree = static_cast<int>(std::ceil(std::log(1e-8) / std::log(rho))) + 10;
    degree = std::clamp(degree, 16, 400);
    const int nodes = std::max(64, 4 * (degree + 1));
    cheb_coef_.assign(static_cast<std::size_t>(degree) + 1, 0.0);
    for (int k = 0; k < nodes; ++k) {
      const double theta = std::numbers::pi * (k + 0.5) / nodes;
      const double t = std::cos(theta);
      const double x = 0.5 * ((cheb_hi_ - cheb_lo_) * t + (cheb_hi_ + cheb_lo_));
      const double fx = 1.0 / std::sqrt(x);
      for (int j = 0; j <= degree; ++j) cheb_coef_[static_cast<std::size_t>(j)] += fx * std::cos(j * theta);
    }
    for (double& c : cheb_coef_) c *= 2.0 / nodes;
  }
}

Eigen::VectorXd GreenOperator::apply_laplacian(const Eigen::VectorXd& v) const {
  const std::size_t n = graph_.size();
  const double invd = 1.0 / static_cast<double>(graph_.degree());
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  for (std::uint32_t x = 0; x < n; ++x) {
    double acc = 0.0;
    for (std::uint32_t u : graph_.neighbors(x)) acc += v[u];
    out[x] = v[x] - invd * acc;
  }
  return out;
}

Eigen::VectorXd GreenOperator::cg_solve(const Eigen::VectorXd& rhs) const {
  Eigen::VectorXd b = rhs;
  b.array() -= b.mean();
  const double bnorm = b.norm();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  if (bnorm == 0.0) return x;
  const double tol = std::max(1e-12, 1e-11 * bnorm);
  Eigen::VectorXd r = b;
  Eigen::VectorXd p = r;
  double rs = r.squaredNorm();
  const int maxit = 10000;
  for (int it = 0; it < maxit; ++it) {
    if (std::sqrt(rs) <= tol) {
      x.array() -= x.mean();
      return x;
    }
    Eigen::VectorXd ap = apply_laplacian(p);
    const double alpha = rs / p.dot(ap);
    x += alpha * p;
    r -= alpha * ap;
    if ((it & 31) == 31) r.array() -= r.mean();  // shed rounding in the constant mode
    const double rs_next = r.squaredNorm();
    p = r + (rs_next / rs) * p;
    rs = rs_next;
  }
  throw std::runtime_error("conjugate gradient failed to converge");
}

Eigen::VectorXd GreenOperator::chebyshev_inv_sqrt(const Eigen::VectorXd& noise) const {
  const double scale = 2.0 / (cheb_hi_ - cheb_lo_);
  const double shift = (cheb_hi_ + cheb_lo_) / (cheb_hi_ - cheb_lo_);
  auto scaled = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return scale * apply_laplacian(v) - shift * v;
  };
  Eigen::VectorXd t0 = noise;
  t0.array() -= t0.mean();
  Eigen::VectorXd acc = 0.5 * cheb_coef_[0] * t0;
  if (cheb_coef_.size() > 1) {
    Eigen::VectorXd t1 = scaled(t0);
    acc += cheb_coef_[1] * t1;
    for (std::size_t j = 2; j < cheb_coef_.size(); ++j) {
      Eigen::VectorXd t2 = 2.0 * scaled(t1) - t0;
      acc += cheb_coef_[j] * t2;
      t0.swap(t1);
      t1.swap(t2);
    }
  }
  acc.array() -= acc.mean();
  return acc;
}

double GreenOperator::entry(std::uint32_t x, std::uint32_t y) const {
  const std::size_t n = graph_.size();
  if (x >= n || y >= n) throw std::invalid_argument("vertex out of range");
  if (dense_) {
    if (full_) return (*full_)(x, y);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < lambda_.size(); ++i)
      acc += inv_lambda_[i] * vecs_(x, i) * vecs_(y, i);
    return acc;
  }
  return column(y)[x];
}

Eigen::VectorXd GreenOperator::column(std::uint32_t y) const {
  const std::size_t n = graph_.size();
  if (y >= n) throw std::invalid_argument("vertex out of range");
  if (dense_) {
    if (full_) return full_->col(y);
    return vecs_ * inv_lambda_.cwiseProduct(vecs_.row(y).transpose());
  }
  {
    std::lock_guard<std::mutex> lock(*mtx_);
    auto it = col_cache_.find(y);
    if (it != col_cache_.end()) return it->second;
  }
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  e[y] = 1.0;
  Eigen::VectorXd col = cg_solve(e);
  {
    std::lock_guard<std::mutex> lock(*mtx_);
    if (col_cache_.size() >= kDenseLimit) col_cache_.clear();
    col_cache_.emplace(y, col);
  }
  return col;
}

Eigen::VectorXd GreenOperator::apply(const Eigen::VectorXd& f) const {
  if (static_cast<std::size_t>(f.size()) != graph_.size())
    throw std::invalid_argument("vector size mismatch");
  if (dense_) {
    if (full_) return (*full_) * f;
    return vecs_ * inv_lambda_.cwiseProduct(vecs_.transpose() * f);
  }
  return cg_solve(f);
}

const Eigen::MatrixXd& GreenOperator::matrix() const {
  if (!dense_) throw std::logic_error("full matrix unavailable in matrix-free mode");
  std::lock_guard<std::mutex> lock(*mtx_);
  if (!full_) full_ = vecs_ * inv_lambda_.asDiagonal() * vecs_.transpose();
  return *full_;
}

GraphField GreenOperator::sample(std::uint64_t seed) const {
  const std::size_t n = graph_.size();
  Rng rng(task_seed(seed, kZagffSampleTag));
  Eigen::VectorXd xi(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) xi[static_cast<Eigen::Index>(i)] = rng.normal();
  Eigen::VectorXd psi;
  if (dense_) {
    psi = vecs_ * inv_lambda_.cwiseSqrt().cwiseProduct(xi);
  } else {
    psi = chebyshev_inv_sqrt(xi);
  }
  psi.array() -= psi.mean();
  GraphField field;
  field.values.assign(psi.data(), psi.data() + psi.size());
  return field;
}

GreenOperator build_green(const RegularGraph& g, GreenMode mode) {
  return GreenOperator(g, mode);
}

GraphField sample_zagff(const GreenOperator& green, std::uint64_t seed) {
  return green.sample(seed);
}

HarmonicSystem::HarmonicSystem(const RegularGraph& g, std::vector<std::uint32_t> targets)
    : g_(&g), targets_(std::move(targets)) {
  if (targets_.empty()) throw std::invalid_argument("target set must be nonempty");
  if (!g.is_connected()) throw std::invalid_argument("hitting solves need a connected graph");
  std::sort(targets_.begin(), targets_.end());
  targets_.erase(std::unique(targets_.begin(), targets_.end()), targets_.end());
  const std::size_t n = g.size();
  if (targets_.back() >= n) throw std::invalid_argument("target vertex out of range");
  row_of_.assign(n, std::numeric_limits<int>::min());
  for (std::size_t j = 0; j < targets_.size(); ++j)
    row_of_[targets_[j]] = -static_cast<int>(j) - 1;  // targets hold -(index+1)
  comp_.clear();
  for (std::uint32_t v = 0; v < n; ++v)
    if (row_of_[v] == std::numeric_limits<int>::min()) {
      row_of_[v] = static_cast<int>(comp_.size());
      comp_.push_back(v);
    }
  if (!comp_.empty()) {
    std::vector<int> comp_row(n, -1);
    for (std::size_t r = 0; r < comp_.size(); ++r) comp_row[comp_[r]] = static_cast<int>(r);
    Eigen::SparseMatrix<double> m = restricted_laplacian(g, comp_, comp_row);
    factor_.compute(m);
    if (factor_.info() != Eigen::Success)
      throw std::runtime_error("hitting system factorization failed");
    hit_times_ = factor_.solve(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(comp_.size())));
  }
}

double HarmonicSystem::expected_hit_time(std::uint32_t x) const {
  if (x >= row_of_.size()) throw std::invalid_argument("vertex out of range");
  const int r = row_of_[x];
  return r >= 0 ? hit_times_[r] : 0.0;
}

double HarmonicSystem::mean_expected_hit_time() const {
  const double total = comp_.empty() ? 0.0 : hit_times_.sum();
  return total / static_cast<double>(row_of_.size());
}

Eigen::VectorXd HarmonicSystem::boundary_expectation_all(std::span<const double> f) const {
  if (f.size() != targets_.size()) throw std::invalid_argument("functional size mismatch");
  const std::size_t n = row_of_.size();
  const double invd = 1.0 / static_cast<double>(g_->degree());
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < targets_.size(); ++j) out[targets_[j]] = f[j];
  if (!comp_.empty()) {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(comp_.size()));
    for (std::size_t r = 0; r < comp_.size(); ++r) {
      double acc = 0.0;
      for (std::uint32_t u : g_->neighbors(comp_[r])) {
        const int t = row_of_[u];
        if (t < 0) acc += f[static_cast<std::size_t>(-t - 1)];
      }
      rhs[static_cast<Eigen::Index>(r)] = invd * acc;
    }
    Eigen::VectorXd w = factor_.solve(rhs);
    for (std::size_t r = 0; r < comp_.size(); ++r) out[comp_[r]] = w[static_cast<Eigen::Index>(r)];
  }
  return out;
}

double HarmonicSystem::boundary_expectation(std::uint32_t x, std::span<const double> f) const {
  if (x >= row_of_.size()) throw std::invalid_argument("vertex out of range");
  const int r = row_of_[x];
  if (r < 0) {
    if (f.size() != targets_.size()) throw std::invalid_argument("functional size mismatch");
    return f[static_cast<std::size_t>(-r - 1)];
  }
  return boundary_expectation_all(f)[x];
}

double HarmonicSystem::mean_boundary_expectation(std::span<const double> f) const {
  return boundary_expectation_all(f).mean();
}

std::vector<double> HarmonicSystem::hit_distribution(std::uint32_t x) const {
  if (x >= row_of_.size()) throw std::invalid_argument("vertex out of range");
  std::vector<double> law(targets_.size(), 0.0);
  const int r = row_of_[x];
  if (r < 0) {
    law[static_cast<std::size_t>(-r - 1)] = 1.0;
    return law;
  }
  // One symmetric solve: the chance of finishing at target a is the solve
  // against the indicator sources feeding a, paired with the unit mass at x.
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(comp_.size()));
  e[r] = 1.0;
  Eigen::VectorXd q = factor_.solve(e);
  const double invd = 1.0 / static_cast<double>(g_->degree());
  for (std::size_t rr = 0; rr < comp_.size(); ++rr) {
    for (std::uint32_t u : g_->neighbors(comp_[rr])) {
      const int t = row_of_[u];
      if (t < 0) law[static_cast<std::size_t>(-t - 1)] += invd * q[static_cast<Eigen::Index>(rr)];
    }
  }
  return law;
}

ConditionalLaw conditional_law(const GreenOperator& green, const HarmonicSystem& system,
                               std::span<const double> observed, std::uint32_t x) {
  const auto& targets = system.targets();
  if (observed.size() != targets.size()) throw std::invalid_argument("observed size mismatch");
  if (x >= green.size()) throw std::invalid_argument("vertex out of range");
  const auto at = std::lower_bound(targets.begin(), targets.end(), x);
  if (at != targets.end() && *at == x)
    return {observed[static_cast<std::size_t>(at - targets.begin())], 0.0};

  const double tx = system.expected_hit_time(x);
  const double tbar = system.mean_expected_hit_time();
  const double ratio = tx / tbar;

  const Eigen::VectorXd hpsi = system.boundary_expectation_all(observed);
  const double mean = hpsi[x] - ratio * hpsi.mean();

  const Eigen::VectorXd gcol = green.column(x);
  std::vector<double> g_on_targets(targets.size());
  for (std::size_t j = 0; j < targets.size(); ++j) g_on_targets[j] = gcol[targets[j]];
  const Eigen::VectorXd hg = system.boundary_expectation_all(g_on_targets);
  double variance = gcol[x] - hg[x] + ratio * hg.mean();
  if (variance < 0.0) variance = 0.0;  // round-off guard; exact value is >= 0
  return {mean, variance};
}

ConditionalLaw conditional_law(const GreenOperator& green,
                               std::span<const std::uint32_t> A,
                               std::span<const double> observed, std::uint32_t x) {
  if (A.size() != observed.size()) throw std::invalid_argument("observed size mismatch");
  if (A.empty()) throw std::invalid_argument("conditioning set must be nonempty");
  std::vector<std::size_t> order(A.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return A[a] < A[b]; });
  std::vector<std::uint32_t> verts;
  std::vector<double> vals;
  verts.reserve(A.size());
  vals.reserve(A.size());
  for (std::size_t i : order) {
    if (!verts.empty() && verts.back() == A[i])
      throw std::invalid_argument("conditioning set contains duplicates");
    verts.push_back(A[i]);
    vals.push_back(observed[i]);
  }
  HarmonicSystem system(green.graph(), verts);
  return conditional_law(green, system, vals, x);
}

namespace {

struct KilledSystem {
  std::vector<int> row_of;
  Eigen::SparseMatrix<double> mat;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> factor;

  KilledSystem(const RegularGraph& g, std::span<const std::uint32_t> U) {
    if (U.size() >= g.size())
      throw std::invalid_argument("killed Green function needs a proper subset");
    row_of = index_map(g.size(), U);
    mat = restricted_laplacian(g, U, row_of);
    factor.compute(mat);
    if (factor.info() != Eigen::Success)
      throw std::runtime_error("killed system factorization failed");
  }
};

Eigen::VectorXd killed_solve(const KilledSystem& sys, const Eigen::VectorXd& rhs) {
  Eigen::VectorXd w = sys.factor.solve(rhs);
  const double resid = (sys.mat * w - rhs).cwiseAbs().maxCoeff();
  if (!(resid <= 1e-8))
    throw std::runtime_error("killed system solve did not reach tolerance");
  return w;
}

}  // namespace

std::vector<double> killed_graph_green_column(const RegularGraph& g,
                                              std::span<const std::uint32_t> U,
                                              std::uint32_t y) {
  if (y >= g.size()) throw std::invalid_argument("vertex out of range");
  std::vector<double> out(g.size(), 0.0);
  if (U.empty()) return out;
  KilledSystem sys(g, U);
  if (sys.row_of[y] < 0) return out;
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(U.size()));
  e[sys.row_of[y]] = 1.0;
  Eigen::VectorXd w = killed_solve(sys, e);
  for (std::size_t r = 0; r < U.size(); ++r) out[U[r]] = w[static_cast<Eigen::Index>(r)];
  return out;
}

double killed_graph_green(const RegularGraph& g, std::span<const std::uint32_t> U,
                          std::uint32_t x, std::uint32_t y) {
  if (x >= g.size() || y >= g.size()) throw std::invalid_argument("vertex out of range");
  if (U.empty()) return 0.0;
  KilledSystem sys(g, U);
  if (sys.row_of[x] < 0 || sys.row_of[y] < 0) return 0.0;
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(U.size()));
  e[sys.row_of[y]] = 1.0;
  return killed_solve(sys, e)[sys.row_of[x]];
}

Eigen::MatrixXd killed_graph_green_matrix(const RegularGraph& g,
                                          std::span<const std::uint32_t> U) {
  const Eigen::Index m = static_cast<Eigen::Index>(U.size());
  if (U.empty()) return Eigen::MatrixXd(0, 0);
  KilledSystem sys(g, U);
  Eigen::MatrixXd out(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(m);
    e[j] = 1.0;
    out.col(j) = killed_solve(sys, e);
  }
  return 0.5 * (out + out.transpose());
}

}  // namespace gffperc
