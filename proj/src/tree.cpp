#include "gffperc/tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include <Eigen/Sparse>

namespace gffperc {

namespace {

constexpr std::uint64_t kMaterializeLimit = 1ULL << 24;  // list allocations
constexpr std::uint64_t kFieldLimit = 1ULL << 22;        // full-ball fields
constexpr std::size_t kDirectSolveLimit = 100000;        // sparse factorization

constexpr std::uint64_t kTreeSampleTag = 0x7472656553616dULL;

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r))
    throw std::invalid_argument("TreeBall: truncation too deep to address");
  return r;
}

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_add_overflow(a, b, &r))
    throw std::invalid_argument("TreeBall: truncation too deep to address");
  return r;
}

}  // namespace

TreeBall::TreeBall(int d, int depth) : d_(d), depth_(depth) {
  if (d_ < 3) throw std::invalid_argument("TreeBall: degree must be >= 3");
  if (depth_ < 0) throw std::invalid_argument("TreeBall: negative depth");
  const std::uint64_t b = static_cast<std::uint64_t>(d_ - 1);
  pow_.resize(depth_ + 1);
  pow_[0] = 1;
  for (int k = 1; k <= depth_; ++k) pow_[k] = checked_mul(pow_[k - 1], b);
  offset_.resize(depth_ + 2);
  offset_[0] = 0;
  offset_[1] = 1;
  for (int k = 1; k <= depth_; ++k) {
    // level k holds d(d-1)^{k-1} vertices
    std::uint64_t level_size = checked_mul(static_cast<std::uint64_t>(d_), pow_[k - 1]);
    offset_[k + 1] = checked_add(offset_[k], level_size);
  }
  total_ = offset_[depth_ + 1];
}

void TreeBall::check_vertex(std::uint64_t v) const {
  if (v >= total_) throw std::invalid_argument("TreeBall: vertex id out of range");
}

int TreeBall::level(std::uint64_t v) const {
  check_vertex(v);
  // offset_ is short (depth+2 entries); linear scan beats binary search here.
  int k = 0;
  while (offset_[k + 1] <= v) ++k;
  return k;
}

std::uint64_t TreeBall::parent(std::uint64_t v) const {
  int lvl = level(v);
  if (lvl == 0) throw std::invalid_argument("TreeBall: root has no parent");
  if (lvl == 1) return 0;
  std::uint64_t p = v - offset_[lvl];
  return offset_[lvl - 1] + p / (d_ - 1);
}

int TreeBall::child_count(std::uint64_t v) const {
  int lvl = level(v);
  if (lvl == depth_) return 0;
  return v == 0 ? d_ : d_ - 1;
}

std::uint64_t TreeBall::child(std::uint64_t v, int j) const {
  int lvl = level(v);
  if (lvl == depth_)
    throw std::out_of_range("TreeBall: vertex at the truncation has no children");
  const int arity = (v == 0) ? d_ : d_ - 1;
  if (j < 0 || j >= arity) throw std::out_of_range("TreeBall: child index");
  if (v == 0) return 1 + static_cast<std::uint64_t>(j);
  std::uint64_t p = v - offset_[lvl];
  return offset_[lvl + 1] + p * (d_ - 1) + static_cast<std::uint64_t>(j);
}

std::uint64_t TreeBall::marked_neighbor() const {
  if (depth_ < 1)
    throw std::invalid_argument("TreeBall: depth-0 ball has no neighbors");
  return 1;  // child 0 of the root
}

bool TreeBall::in_forward_part(std::uint64_t v) const {
  int lvl = level(v);
  if (lvl == 0) return true;
  std::uint64_t p = v - offset_[lvl];
  return p / pow_[lvl - 1] != 0;  // root-child 0 carries the backward subtree
}

int TreeBall::dist(std::uint64_t a, std::uint64_t b) const {
  int la = level(a), lb = level(b);
  int steps = 0;
  while (la > lb) {
    a = parent(a);
    --la;
    ++steps;
  }
  while (lb > la) {
    b = parent(b);
    --lb;
    ++steps;
  }
  while (a != b) {
    a = parent(a);
    b = parent(b);
    steps += 2;
  }
  return steps;
}

std::vector<int> TreeBall::address(std::uint64_t v) const {
  std::vector<int> addr;
  int lvl = level(v);
  while (lvl > 0) {
    std::uint64_t p = v - offset_[lvl];
    addr.push_back(lvl == 1 ? static_cast<int>(p)
                            : static_cast<int>(p % (d_ - 1)));
    v = parent(v);
    --lvl;
  }
  std::reverse(addr.begin(), addr.end());
  return addr;
}

std::uint64_t TreeBall::at_address(std::span<const int> addr) const {
  std::uint64_t cur = 0;
  for (int j : addr) cur = child(cur, j);
  return cur;
}

std::uint64_t TreeBall::sphere_count(int k) const {
  if (k < 0 || k > depth_) throw std::invalid_argument("TreeBall: level out of range");
  return offset_[k + 1] - offset_[k];
}

std::uint64_t TreeBall::forward_sphere_count(int k) const {
  if (k < 0 || k > depth_) throw std::invalid_argument("TreeBall: level out of range");
  return k == 0 ? 1 : checked_mul(static_cast<std::uint64_t>(d_ - 1), pow_[k - 1]);
}

std::uint64_t TreeBall::level_offset(int k) const {
  if (k < 0 || k > depth_) throw std::invalid_argument("TreeBall: level out of range");
  return offset_[k];
}

std::vector<std::uint64_t> TreeBall::sphere(int k) const {
  std::uint64_t m = sphere_count(k);
  if (m > kMaterializeLimit) throw std::length_error("TreeBall: sphere too large");
  std::vector<std::uint64_t> out(m);
  std::iota(out.begin(), out.end(), offset_[k]);
  return out;
}

std::vector<std::uint64_t> TreeBall::forward_sphere(int k) const {
  std::uint64_t m = forward_sphere_count(k);
  if (m > kMaterializeLimit) throw std::length_error("TreeBall: sphere too large");
  if (k == 0) return {0};
  // Positions below pow_[k-1] descend from the marked neighbor; the forward
  // part is the contiguous remainder of the level.
  std::vector<std::uint64_t> out(m);
  std::iota(out.begin(), out.end(), offset_[k] + pow_[k - 1]);
  return out;
}

std::vector<std::uint64_t> TreeBall::ball_vertices(int k) const {
  if (k < 0 || k > depth_) throw std::invalid_argument("TreeBall: level out of range");
  std::uint64_t m = offset_[k + 1];
  if (m > kMaterializeLimit) throw std::length_error("TreeBall: ball too large");
  std::vector<std::uint64_t> out(m);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

std::vector<std::uint64_t> TreeBall::forward_subtree(std::uint64_t x, int rel_depth) const {
  check_vertex(x);
  if (rel_depth < 0) throw std::invalid_argument("TreeBall: negative depth");
  const int max_level = std::min(depth_, level(x) + rel_depth);
  std::vector<std::uint64_t> out = {x};
  std::size_t head = 0;
  while (head < out.size()) {
    std::uint64_t v = out[head++];
    if (level(v) >= max_level) continue;
    const int arity = child_count(v);
    // At the root "forward" skips the marked subtree; elsewhere all children
    // already point away from the root.
    const int first = (v == 0) ? 1 : 0;
    for (int j = first; j < arity; ++j) {
      out.push_back(child(v, j));
      if (out.size() > kMaterializeLimit)
        throw std::length_error("TreeBall: subtree too large");
    }
  }
  return out;
}

double tree_green(int d, int dist) {
  if (d < 3) throw std::invalid_argument("tree_green: degree must be >= 3");
  if (dist < 0) throw std::invalid_argument("tree_green: negative distance");
  return (d - 1.0) / (d - 2.0) * std::pow(1.0 / (d - 1.0), dist);
}

TreeField sample_tree_gff(const TreeBall& ball, std::optional<double> root_condition,
                          std::uint64_t seed) {
  if (ball.size() > kFieldLimit)
    throw std::length_error("sample_tree_gff: ball too large to materialize");
  TreeField field(ball);
  field.root_condition = root_condition;
  field.values.resize(ball.size());

  const int d = ball.degree();
  const double noise_sd = std::sqrt(d / (d - 1.0));
  Rng rng(task_seed(seed, kTreeSampleTag));
  field.values[0] = root_condition ? *root_condition
                                   : rng.normal(0.0, std::sqrt((d - 1.0) / (d - 2.0)));
  // BFS index order guarantees parents are filled before children.
  for (std::uint64_t v = 1; v < ball.size(); ++v)
    field.values[v] = field.values[ball.parent(v)] / (d - 1) + rng.normal(0.0, noise_sd);
  return field;
}

namespace {

// Shared scaffolding for killed-green solves: maps U to rows and builds the
// sparse symmetric system I - P restricted to U.
struct KilledSystem {
  std::unordered_map<std::uint64_t, int> row;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> factor;

  KilledSystem(const TreeBall& ball, std::span<const std::uint64_t> U) {
    if (U.size() > kDirectSolveLimit)
      throw std::length_error("killed_tree_green: set exceeds direct-solve budget");
    row.reserve(U.size() * 2);
    for (std::size_t i = 0; i < U.size(); ++i) {
      if (ball.level(U[i]) >= ball.depth())
        throw std::invalid_argument(
            "killed_tree_green: set touches the truncation boundary");
      if (!row.emplace(U[i], static_cast<int>(i)).second)
        throw std::invalid_argument("killed_tree_green: duplicate vertex in set");
    }
    const double inv_d = 1.0 / ball.degree();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(U.size() * (ball.degree() + 1));
    for (std::size_t i = 0; i < U.size(); ++i) {
      const std::uint64_t v = U[i];
      trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
      auto link = [&](std::uint64_t u) {
        auto it = row.find(u);
        if (it != row.end())
          trip.emplace_back(static_cast<int>(i), it->second, -inv_d);
      };
      if (v != TreeBall::root()) link(ball.parent(v));
      for (int j = 0; j < ball.child_count(v); ++j) link(ball.child(v, j));
    }
    Eigen::SparseMatrix<double> A(static_cast<int>(U.size()),
                                  static_cast<int>(U.size()));
    A.setFromTriplets(trip.begin(), trip.end());
    factor.compute(A);
    if (factor.info() != Eigen::Success)
      throw std::runtime_error("killed_tree_green: factorization failed");
  }
};

}  // namespace

std::vector<double> killed_tree_green_column(const TreeBall& ball,
                                             std::span<const std::uint64_t> U,
                                             std::uint64_t y) {
  std::vector<double> col(U.size(), 0.0);
  KilledSystem sys(ball, U);
  auto it = sys.row.find(y);
  if (it == sys.row.end()) return col;  // killed instantly: g^U(., y) = 0
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<int>(U.size()));
  rhs[it->second] = 1.0;
  Eigen::VectorXd sol = sys.factor.solve(rhs);
  for (std::size_t i = 0; i < U.size(); ++i) col[i] = sol[static_cast<int>(i)];
  return col;
}

double killed_tree_green(const TreeBall& ball, std::span<const std::uint64_t> U,
                         std::uint64_t x, std::uint64_t y) {
  bool x_in = std::find(U.begin(), U.end(), x) != U.end();
  bool y_in = std::find(U.begin(), U.end(), y) != U.end();
  if (!x_in || !y_in) return 0.0;
  auto col = killed_tree_green_column(ball, U, y);
  for (std::size_t i = 0; i < U.size(); ++i)
    if (U[i] == x) return col[i];
  return 0.0;  // unreachable
}

std::vector<double> hitting_distribution_sphere(const TreeBall& ball,
                                                std::uint64_t y, int R) {
  if (R < 0 || R > ball.depth())
    throw std::invalid_argument("hitting_distribution_sphere: R exceeds truncation");
  const int ly = ball.level(y);
  if (ly > R)
    throw std::invalid_argument("hitting_distribution_sphere: y outside B(o,R)");

  const std::uint64_t sphere_size = ball.sphere_count(R);
  if (sphere_size > kMaterializeLimit)
    throw std::length_error("hitting_distribution_sphere: sphere too large");
  std::vector<double> mu(sphere_size, 0.0);
  const std::uint64_t sphere_first = ball.level_offset(R);

  if (ly == R) {  // already there
    mu[y - sphere_first] = 1.0;
    return mu;
  }

  // Interior solve: (I - Q) w = e_y over B(o,R-1); the walk enters the
  // sphere only through the parent of each sphere vertex.
  auto interior = ball.ball_vertices(R - 1);
  if (interior.size() > kDirectSolveLimit)
    throw std::length_error("hitting_distribution_sphere: interior exceeds budget");
  const double inv_d = 1.0 / ball.degree();
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t i = 0; i < interior.size(); ++i) {
    const std::uint64_t v = interior[i];
    trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
    auto link = [&](std::uint64_t u) {
      if (u < interior.size())  // interior ids are exactly 0..|interior|-1
        trip.emplace_back(static_cast<int>(i), static_cast<int>(u), -inv_d);
    };
    if (v != TreeBall::root()) link(ball.parent(v));
    for (int j = 0; j < ball.child_count(v); ++j) link(ball.child(v, j));
  }
  Eigen::SparseMatrix<double> A(static_cast<int>(interior.size()),
                                static_cast<int>(interior.size()));
  A.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> factor(A);
  if (factor.info() != Eigen::Success)
    throw std::runtime_error("hitting_distribution_sphere: factorization failed");
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<int>(interior.size()));
  rhs[static_cast<int>(y)] = 1.0;
  Eigen::VectorXd w = factor.solve(rhs);

  for (std::uint64_t z = sphere_first; z < sphere_first + sphere_size; ++z)
    mu[z - sphere_first] = w[static_cast<int>(ball.parent(z))] * inv_d;
  return mu;
}

std::uint64_t ForwardCluster::total() const {
  std::uint64_t t = 0;
  for (auto c : level_counts) t += c;
  return t;
}

std::uint64_t ClusterLevelCounts::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

ForwardCluster forward_cluster(const TreeField& field, double h) {
  const TreeBall& ball = field.ball;
  ForwardCluster out;
  out.level_counts.assign(ball.depth() + 1, 0);
  if (field.values.at(0) < h) return out;

  out.vertices.push_back(0);
  out.level_counts[0] = 1;
  std::size_t head = 0;
  while (head < out.vertices.size()) {
    const std::uint64_t v = out.vertices[head++];
    const int lvl = ball.level(v);
    if (lvl == ball.depth()) {
      out.censored = true;
      continue;
    }
    const int first = (v == 0) ? 1 : 0;  // forward part: skip the marked subtree
    for (int j = first; j < ball.child_count(v); ++j) {
      const std::uint64_t c = ball.child(v, j);
      if (field.values[c] >= h) {
        out.vertices.push_back(c);
        ++out.level_counts[lvl + 1];
      }
    }
  }
  std::sort(out.vertices.begin(), out.vertices.end());
  return out;
}

ClusterLevelCounts lazy_forward_cluster_counts(int d, int depth, double h,
                                               std::optional<double> root_condition,
                                               Rng& rng) {
  if (d < 3) throw std::invalid_argument("lazy_forward_cluster_counts: degree >= 3");
  if (depth < 0) throw std::invalid_argument("lazy_forward_cluster_counts: depth >= 0");
  ClusterLevelCounts out;
  out.counts.assign(depth + 1, 0);

  const double noise_sd = std::sqrt(d / (d - 1.0));
  const double root_value =
      root_condition ? *root_condition
                     : rng.normal(0.0, std::sqrt((d - 1.0) / (d - 2.0)));
  if (root_value < h) return out;
  out.counts[0] = 1;
  if (depth == 0) {
    out.censored = true;
    return out;
  }

  // Depth-first over cluster vertices; children values are generated on
  // demand, left to right, so the replica is a deterministic function of the
  // RNG stream.  Every vertex (root included) has d-1 forward children.
  struct Frame {
    double value;
    int level;
    int next_child;
  };
  std::vector<Frame> stack;
  stack.push_back({root_value, 0, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child == d - 1) {
      stack.pop_back();
      continue;
    }
    ++f.next_child;
    const double child_value = f.value / (d - 1) + rng.normal(0.0, noise_sd);
    if (child_value < h) continue;
    const int child_level = f.level + 1;
    ++out.counts[child_level];
    if (child_level == depth)
      out.censored = true;
    else
      stack.push_back({child_value, child_level, 0});
  }
  return out;
}

}  // namespace gffperc
