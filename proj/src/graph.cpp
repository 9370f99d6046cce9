#include "gffperc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <queue>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "gffperc/rng.hpp"

namespace gffperc {

namespace {

// Deterministic, platform-independent start vector noise for the iterative
// eigensolver: a fixed splitmix64 stream, independent of any user seed.
double fixed_noise(std::uint64_t& state) {
  state = splitmix64(state + 0x9e3779b97f4a7c15ULL);
  return static_cast<double>(state >> 11) * 0x1.0p-53 - 0.5;
}

}  // namespace

RegularGraph::RegularGraph(int d, std::size_t n, std::vector<std::uint32_t> flat)
    : d_(d), n_(n), adj_(std::move(flat)) {
  if (d_ < 3) throw std::invalid_argument("RegularGraph: degree must be >= 3");
  if (n_ < static_cast<std::size_t>(d_) + 1)
    throw std::invalid_argument("RegularGraph: need at least d+1 vertices");
  if (adj_.size() != n_ * static_cast<std::size_t>(d_))
    throw std::invalid_argument("RegularGraph: adjacency must hold n*d entries");
  for (std::uint32_t u : adj_)
    if (u >= n_) throw std::invalid_argument("RegularGraph: neighbor index out of range");
  for (std::size_t v = 0; v < n_; ++v)
    std::sort(adj_.begin() + v * d_, adj_.begin() + (v + 1) * d_);

  // Multiset symmetry: every ordered pair (v,u) must occur as often as (u,v).
  // Comparing the sorted list of codes against the sorted list of reversed
  // codes checks exactly that.
  std::vector<std::uint64_t> codes, rev;
  codes.reserve(adj_.size());
  rev.reserve(adj_.size());
  for (std::size_t v = 0; v < n_; ++v) {
    for (std::uint32_t u : neighbors(static_cast<std::uint32_t>(v))) {
      codes.push_back(static_cast<std::uint64_t>(v) * n_ + u);
      rev.push_back(static_cast<std::uint64_t>(u) * n_ + v);
    }
  }
  std::sort(codes.begin(), codes.end());
  std::sort(rev.begin(), rev.end());
  if (codes != rev)
    throw std::invalid_argument("RegularGraph: adjacency is not symmetric");
  // A self-loop consumes two endpoints of its vertex, so the diagonal count
  // must be even; symmetry alone cannot see a half-loop.
  for (std::size_t v = 0; v < n_; ++v) {
    auto row = neighbors(static_cast<std::uint32_t>(v));
    if (std::count(row.begin(), row.end(), static_cast<std::uint32_t>(v)) % 2 != 0)
      throw std::invalid_argument("RegularGraph: dangling self-loop endpoint");
  }
}

bool RegularGraph::is_simple() const {
  for (std::size_t v = 0; v < n_; ++v) {
    auto row = neighbors(static_cast<std::uint32_t>(v));
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (row[i] == v) return false;                  // self-loop
      if (i > 0 && row[i] == row[i - 1]) return false;  // parallel edge
    }
  }
  return true;
}

std::vector<int> RegularGraph::distances(std::uint32_t source, int max_dist) const {
  std::vector<int> dist(n_, -1);
  dist[source] = 0;
  std::queue<std::uint32_t> frontier;
  frontier.push(source);
  while (!frontier.empty()) {
    std::uint32_t v = frontier.front();
    frontier.pop();
    if (max_dist >= 0 && dist[v] >= max_dist) continue;
    for (std::uint32_t u : neighbors(v)) {
      if (dist[u] < 0) {
        dist[u] = dist[v] + 1;
        frontier.push(u);
      }
    }
  }
  return dist;
}

bool RegularGraph::is_connected() const {
  auto dist = distances(0);
  return std::none_of(dist.begin(), dist.end(), [](int x) { return x < 0; });
}

std::vector<std::uint32_t> RegularGraph::ball(std::uint32_t center, int radius) const {
  auto dist = distances(center, radius);
  std::vector<std::uint32_t> out;
  for (std::size_t v = 0; v < n_; ++v)
    if (dist[v] >= 0) out.push_back(static_cast<std::uint32_t>(v));
  return out;
}

std::vector<std::uint32_t> RegularGraph::sphere(std::uint32_t center, int radius) const {
  auto dist = distances(center, radius);
  std::vector<std::uint32_t> out;
  for (std::size_t v = 0; v < n_; ++v)
    if (dist[v] == radius) out.push_back(static_cast<std::uint32_t>(v));
  return out;
}

int RegularGraph::tree_excess(std::uint32_t center, int radius) const {
  auto dist = distances(center, radius);
  std::size_t vertices = 0;
  std::size_t endpoint_pairs = 0;  // twice the induced edge count
  for (std::size_t v = 0; v < n_; ++v) {
    if (dist[v] < 0) continue;
    ++vertices;
    for (std::uint32_t u : neighbors(static_cast<std::uint32_t>(v)))
      if (dist[u] >= 0) ++endpoint_pairs;
  }
  return static_cast<int>(endpoint_pairs / 2 - vertices + 1);
}

RegularGraph RegularGraph::relabeled(const std::vector<std::uint32_t>& perm) const {
  if (perm.size() != n_)
    throw std::invalid_argument("relabeled: permutation size mismatch");
  std::vector<std::uint32_t> flat(n_ * d_);
  for (std::size_t v = 0; v < n_; ++v) {
    auto row = neighbors(static_cast<std::uint32_t>(v));
    for (int i = 0; i < d_; ++i)
      flat[static_cast<std::size_t>(perm[v]) * d_ + i] = perm[row[i]];
  }
  return RegularGraph(d_, n_, std::move(flat));
}

RegularGraph RegularGraph::complete(int n_vertices) {
  if (n_vertices < 4)
    throw std::invalid_argument("complete: need at least 4 vertices");
  int d = n_vertices - 1;
  std::vector<std::uint32_t> flat;
  flat.reserve(static_cast<std::size_t>(n_vertices) * d);
  for (int v = 0; v < n_vertices; ++v)
    for (int u = 0; u < n_vertices; ++u)
      if (u != v) flat.push_back(static_cast<std::uint32_t>(u));
  return RegularGraph(d, static_cast<std::size_t>(n_vertices), std::move(flat));
}

RegularGraph RegularGraph::petersen() {
  // Outer 5-cycle 0..4, inner pentagram 5..9, spokes i -- 5+i.
  std::vector<std::uint32_t> flat;
  for (std::uint32_t i = 0; i < 5; ++i) {
    flat.push_back((i + 1) % 5);
    flat.push_back((i + 4) % 5);
    flat.push_back(5 + i);
  }
  for (std::uint32_t i = 0; i < 5; ++i) {
    flat.push_back(i);
    flat.push_back(5 + (i + 2) % 5);
    flat.push_back(5 + (i + 3) % 5);
  }
  return RegularGraph(3, 10, std::move(flat));
}

std::string RegularGraph::to_text() const {
  std::string out = std::to_string(d_) + " " + std::to_string(n_) + "\n";
  for (std::size_t v = 0; v < n_; ++v) {
    out += std::to_string(v);
    out += ':';
    for (std::uint32_t u : neighbors(static_cast<std::uint32_t>(v))) {
      out += ' ';
      out += std::to_string(u);
    }
    out += '\n';
  }
  return out;
}

RegularGraph RegularGraph::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("graph file: missing header line");
  long long d = 0, n = 0;
  {
    std::istringstream head(line);
    std::string extra;
    if (!(head >> d >> n) || (head >> extra))
      throw std::runtime_error("graph file: header must be exactly 'd N'");
  }
  if (d < 3 || n <= d)
    throw std::runtime_error("graph file: implausible header values");
  std::vector<std::uint32_t> flat;
  flat.reserve(static_cast<std::size_t>(n) * d);
  for (long long v = 0; v < n; ++v) {
    if (!std::getline(in, line))
      throw std::runtime_error("graph file: truncated before vertex " + std::to_string(v));
    std::istringstream row(line);
    std::string label;
    if (!(row >> label) || label != std::to_string(v) + ":")
      throw std::runtime_error("graph file: expected '" + std::to_string(v) +
                               ":' at line " + std::to_string(v + 2));
    long long prev = -1;
    for (long long i = 0; i < d; ++i) {
      long long u;
      if (!(row >> u) || u < 0 || u >= n)
        throw std::runtime_error("graph file: bad neighbor on line " +
                                 std::to_string(v + 2));
      if (u < prev)
        throw std::runtime_error("graph file: neighbors not sorted on line " +
                                 std::to_string(v + 2));
      prev = u;
      flat.push_back(static_cast<std::uint32_t>(u));
    }
    std::string extra;
    if (row >> extra)
      throw std::runtime_error("graph file: trailing tokens on line " +
                               std::to_string(v + 2));
  }
  while (std::getline(in, line))
    if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos)
      throw std::runtime_error("graph file: unexpected content after adjacency");
  return RegularGraph(static_cast<int>(d), static_cast<std::size_t>(n), std::move(flat));
}

RegularGraph generate_random_regular(int d, std::size_t n, std::uint64_t seed) {
  if (d < 3) throw std::invalid_argument("generate_random_regular: degree must be >= 3");
  if (n <= static_cast<std::size_t>(d))
    throw std::invalid_argument("generate_random_regular: need n > d");
  if ((n * static_cast<std::size_t>(d)) % 2 != 0)
    throw std::invalid_argument("generate_random_regular: n*d must be even");

  Rng rng(task_seed(seed, 0x97ee9ULL));
  const std::size_t stubs_count = n * static_cast<std::size_t>(d);
  std::vector<std::uint32_t> stubs(stubs_count);
  const std::size_t budget = 10 * n;

  for (std::size_t attempt = 0; attempt < budget; ++attempt) {
    for (std::size_t i = 0; i < stubs_count; ++i)
      stubs[i] = static_cast<std::uint32_t>(i / d);
    // Fisher-Yates pairing of half-edge stubs.
    for (std::size_t i = stubs_count - 1; i > 0; --i)
      std::swap(stubs[i], stubs[rng.below(i + 1)]);

    bool clean = true;
    for (std::size_t k = 0; clean && k < stubs_count; k += 2)
      if (stubs[k] == stubs[k + 1]) clean = false;  // self-loop
    if (!clean) continue;

    std::vector<std::uint32_t> flat(stubs_count);
    std::vector<int> cursor(n, 0);
    for (std::size_t k = 0; k < stubs_count; k += 2) {
      std::uint32_t a = stubs[k], b = stubs[k + 1];
      flat[static_cast<std::size_t>(a) * d + cursor[a]++] = b;
      flat[static_cast<std::size_t>(b) * d + cursor[b]++] = a;
    }
    RegularGraph g(d, n, std::move(flat));
    if (g.is_simple() && g.is_connected()) return g;
  }
  throw std::runtime_error("generate_random_regular: retry budget exhausted (" +
                           std::to_string(budget) + " pairings)");
}

namespace {

double dense_gap(const RegularGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  const double inv_d = 1.0 / g.degree();
  for (Eigen::Index v = 0; v < n; ++v)
    for (std::uint32_t u : g.neighbors(static_cast<std::uint32_t>(v)))
      P(v, u) += inv_d;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(P, Eigen::EigenvaluesOnly);
  // Eigenvalues come back ascending; the top one is 1 (constants), the gap of
  // I - P is one minus the runner-up.
  return 1.0 - solver.eigenvalues()(n - 2);
}

// Lanczos with full reorthogonalization for the second-largest eigenvalue of
// P, run on the complement of the constant vector.  The operator is shifted
// to 2I + P so the target is the algebraically and magnitude-wise largest
// eigenvalue of the restricted operator (spectrum inside [1,3]).
double iterative_gap(const RegularGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.size());
  const double inv_d = 1.0 / g.degree();

  auto apply = [&](const Eigen::VectorXd& v, Eigen::VectorXd& out) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::uint32_t u : g.neighbors(static_cast<std::uint32_t>(i)))
        acc += v[u];
      out[i] = 2.0 * v[i] + inv_d * acc;
    }
  };
  auto deflate = [&](Eigen::VectorXd& v) { v.array() -= v.mean(); };

  const int maxit = static_cast<int>(std::min<Eigen::Index>(n - 1, 400));
  Eigen::MatrixXd basis(n, maxit + 1);
  Eigen::VectorXd v(n), w(n);

  std::uint64_t noise = 0x5ca1ab1e0ddba11ULL;
  for (Eigen::Index i = 0; i < n; ++i) v[i] = fixed_noise(noise);
  deflate(v);
  v.normalize();
  basis.col(0) = v;

  std::vector<double> alpha, beta;
  for (int k = 0; k < maxit; ++k) {
    apply(basis.col(k), w);
    double a = basis.col(k).dot(w);
    alpha.push_back(a);
    w -= a * basis.col(k);
    if (k > 0) w -= beta[k - 1] * basis.col(k - 1);
    deflate(w);
    // Full reorthogonalization, twice for numerical safety.
    for (int pass = 0; pass < 2; ++pass)
      w -= basis.leftCols(k + 1) * (basis.leftCols(k + 1).transpose() * w);
    double b = w.norm();
    beta.push_back(b);

    const int m = k + 1;
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      T(i, i) = alpha[i];
      if (i + 1 < m) T(i, i + 1) = T(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz(T);
    const double theta = ritz.eigenvalues()(m - 1);
    const double weight = std::abs(ritz.eigenvectors()(m - 1, m - 1));
    const double residual = b * weight;
    const double gap = 3.0 - theta;
    if (residual <= std::max(1e-8 * std::abs(gap), 1e-12) || b < 1e-13)
      return gap;
    basis.col(m) = w / b;
  }
  throw std::runtime_error("spectral_gap: Lanczos did not converge");
}

}  // namespace

double spectral_gap(const RegularGraph& g, SpectralMethod method) {
  constexpr std::size_t kDenseThreshold = 4096;
  switch (method) {
    case SpectralMethod::kDense:
      return dense_gap(g);
    case SpectralMethod::kIterative:
      return iterative_gap(g);
    case SpectralMethod::kAuto:
    default:
      return g.size() <= kDenseThreshold ? dense_gap(g) : iterative_gap(g);
  }
}

AssumptionReport audit_assumptions(const RegularGraph& g, double alpha, double beta) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("audit_assumptions: alpha must lie in (0,1]");
  if (!(beta > 0.0 && beta <= 2.0))
    throw std::invalid_argument("audit_assumptions: beta must lie in (0,2]");

  AssumptionReport rep;
  rep.alpha = alpha;
  rep.beta = beta;
  const double log_base = std::log(static_cast<double>(g.degree() - 1));
  rep.radius_checked = static_cast<int>(
      std::floor(alpha * std::log(static_cast<double>(g.size())) / log_base));

  rep.connected = g.is_connected();
  rep.simple = g.is_simple();

  int worst = 0;
  for (std::size_t v = 0; v < g.size(); ++v)
    worst = std::max(worst,
                     g.tree_excess(static_cast<std::uint32_t>(v), rep.radius_checked));
  rep.max_tree_excess_in_ball = worst;

  rep.spectral_gap = rep.connected ? spectral_gap(g) : 0.0;

  rep.passes[0] = rep.connected && rep.simple;
  rep.passes[1] = rep.max_tree_excess_in_ball <= 1;
  rep.passes[2] = rep.spectral_gap >= beta;
  return rep;
}

ScaleConstants scale_constants(int d, std::size_t n, double alpha, double beta,
                               double gap) {
  if (d < 3) throw std::invalid_argument("scale_constants: degree must be >= 3");
  if (n < static_cast<std::size_t>(d) + 1)
    throw std::invalid_argument("scale_constants: need n >= d+1");
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("scale_constants: alpha must lie in (0,1]");
  if (!(beta > 0.0 && beta <= 2.0))
    throw std::invalid_argument("scale_constants: beta must lie in (0,2]");
  if (!(gap > 0.0))
    throw std::invalid_argument("scale_constants: spectral gap must be positive");

  ScaleConstants sc;
  sc.d = d;
  sc.n = n;
  sc.alpha = alpha;
  sc.beta = beta;
  sc.spectral_gap = gap;
  sc.c0 = alpha * beta / (d - 1);
  if (!(sc.c0 > 0.0 && sc.c0 < 1.0))
    throw std::invalid_argument("scale_constants: c0 must land in (0,1)");

  const double log_base = std::log(static_cast<double>(d - 1));
  const double log_n = std::log(static_cast<double>(n)) / log_base;
  sc.s_n = std::max(1, static_cast<int>(std::floor(8.0 * std::log(log_n) / log_base)));
  sc.r_n = std::max(1, static_cast<int>(std::floor(sc.c0 / 18.0 * log_n)));
  sc.R_n = std::max(1, static_cast<int>(std::floor(sc.c0 / 6.0 * log_n)));
  const double ln_n = std::log(static_cast<double>(n));
  sc.t_n = ln_n * ln_n / gap;
  return sc;
}

double ScaleConstants::gamma(double lambda_h) const {
  if (!(lambda_h > 0.0))
    throw std::invalid_argument("ScaleConstants::gamma: growth rate must be positive");
  return c0 / 20.0 * std::log(lambda_h) / std::log(static_cast<double>(d - 1));
}

namespace {

// One chart step: child c of `cur` seen from `parent` (npos at the root).
// Children are the sorted neighbor row with the first copy of the parent
// removed.
std::uint32_t chart_child(const RegularGraph& g, std::uint32_t cur,
                          std::uint32_t parent, int c) {
  auto row = g.neighbors(cur);
  if (c < 0) throw std::out_of_range("cover_tree_image: negative child index");
  bool skipped = (parent == RegularGraph::npos);
  int idx = 0;
  for (std::uint32_t u : row) {
    if (!skipped && u == parent) {
      skipped = true;
      continue;
    }
    if (idx == c) return u;
    ++idx;
  }
  throw std::out_of_range("cover_tree_image: child index exceeds arity");
}

}  // namespace

std::uint32_t cover_tree_image(const RegularGraph& g, std::uint32_t x,
                               std::span<const int> addr) {
  if (x >= g.size()) throw std::invalid_argument("cover_tree_image: bad root");
  std::uint32_t cur = x;
  std::uint32_t parent = RegularGraph::npos;
  for (int c : addr) {
    std::uint32_t next = chart_child(g, cur, parent, c);
    parent = cur;
    cur = next;
  }
  return cur;
}

std::vector<int> min_depth_preimage_address(const RegularGraph& g,
                                            std::uint32_t x, std::uint32_t y) {
  if (x >= g.size() || y >= g.size())
    throw std::invalid_argument("min_depth_preimage_address: bad vertex");
  auto dist_x = g.distances(x);
  if (dist_x[y] < 0)
    throw std::invalid_argument("min_depth_preimage_address: y unreachable from x");
  const int depth = dist_x[y];
  auto dist_y = g.distances(y, depth);

  // Depth-limited DFS in chart order: the first address that lands on y is
  // automatically the lexicographically smallest one at minimal depth.
  std::vector<int> addr;
  auto dfs = [&](auto&& self, std::uint32_t cur, std::uint32_t parent,
                 int remaining) -> bool {
    if (remaining == 0) return cur == y;
    if (dist_y[cur] < 0 || dist_y[cur] > remaining) return false;
    auto row = g.neighbors(cur);
    bool skipped = (parent == RegularGraph::npos);
    int child = 0;
    for (std::uint32_t u : row) {
      if (!skipped && u == parent) {
        skipped = true;
        continue;
      }
      addr.push_back(child);
      if (self(self, u, cur, remaining - 1)) return true;
      addr.pop_back();
      ++child;
    }
    return false;
  };
  dfs(dfs, x, RegularGraph::npos, depth);
  return addr;
}

std::vector<std::uint32_t> forward_sphere_image(const RegularGraph& g,
                                                std::uint32_t x, int R) {
  if (x >= g.size()) throw std::invalid_argument("forward_sphere_image: bad root");
  if (R < 0) throw std::invalid_argument("forward_sphere_image: negative radius");
  std::vector<std::uint32_t> out;
  if (R == 0) return {x};

  auto walk = [&](auto&& self, std::uint32_t cur, std::uint32_t parent,
                  int remaining) -> void {
    if (remaining == 0) {
      out.push_back(cur);
      return;
    }
    auto row = g.neighbors(cur);
    bool skipped = (parent == RegularGraph::npos);
    for (std::uint32_t u : row) {
      if (!skipped && u == parent) {
        skipped = true;
        continue;
      }
      self(self, u, cur, remaining - 1);
    }
  };
  // Forward means: skip the designated backward neighbor of the root, which
  // the canonical chart pins as child 0 (smallest neighbor index).
  auto root_row = g.neighbors(x);
  for (std::size_t i = 1; i < root_row.size(); ++i)
    walk(walk, root_row[i], x, R - 1);

  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::size_t count_nonbacktracking_paths(const RegularGraph& g, std::uint32_t x,
                                        std::uint32_t y, int R, int len_lo,
                                        int len_hi) {
  if (x >= g.size() || y >= g.size())
    throw std::invalid_argument("count_nonbacktracking_paths: bad vertex");
  if (R < 0 || len_lo < 0 || len_hi < len_lo)
    throw std::invalid_argument("count_nonbacktracking_paths: bad window");
  auto dist = g.distances(x, R);
  if (dist[y] < 0)
    throw std::invalid_argument("count_nonbacktracking_paths: y outside B(x,R)");
  if (g.tree_excess(x, R) > 1)
    throw std::domain_error(
        "count_nonbacktracking_paths: more than one cycle in B(x,R)");

  // Vertex-level non-backtracking walk enumeration restricted to the ball.
  // (Audited graphs are simple, so this coincides with edge-level.)
  std::size_t count = 0;
  auto dfs = [&](auto&& self, std::uint32_t cur, std::uint32_t parent,
                 int len) -> void {
    if (cur == y && len >= len_lo && len < len_hi) ++count;
    if (len + 1 >= len_hi) return;
    for (std::uint32_t u : g.neighbors(cur)) {
      if (u == parent || dist[u] < 0) continue;
      self(self, u, cur, len + 1);
    }
  };
  dfs(dfs, x, RegularGraph::npos, 0);
  return count;
}

}  // namespace gffperc
