#include "gffperc/exploration.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

#include "gffperc/rng.hpp"
#include "gffperc/tree.hpp"

namespace gffperc {

namespace {

constexpr std::uint64_t kExploreSeedTag = 0x6578706cULL;  // "expl"
const double kNaN = std::numeric_limits<double>::quiet_NaN();

// A Cholesky pivot this small means the revealed set determines the value
// exactly (the field has one linear constraint, so this happens only when
// every vertex has been revealed); the factor keeps a nonzero diagonal so
// later triangular solves stay finite.
constexpr double kDegeneratePivot = 1e-150;

// Solves L w = rhs in place for the growing lower-triangular factor.
std::vector<double> forward_solve(const std::vector<std::vector<double>>& rows,
                                  std::vector<double> rhs) {
  for (std::size_t i = 0; i < rhs.size(); ++i) {
    double acc = rhs[i];
    const std::vector<double>& row = rows[i];
    for (std::size_t j = 0; j < i; ++j) acc -= row[j] * rhs[j];
    rhs[i] = acc / row[i];
  }
  return rhs;
}

}  // namespace

// ---------------------------------------------------------------------------
// Locality test
// ---------------------------------------------------------------------------

int exploration_shell_radius(int d, std::size_t n) {
  if (d < 3) throw std::invalid_argument("shell radius: degree must be >= 3");
  if (n < 4) return 1;
  const double base = std::log(static_cast<double>(d - 1));
  const double outer = std::log(static_cast<double>(n)) / base;
  const double loglog = std::log(outer) / base;
  return std::max(1, static_cast<int>(std::floor(8.0 * loglog)));
}

GoodVertexVerdict good_vertex_test(const RegularGraph& g,
                                   std::span<const std::uint32_t> explored,
                                   std::uint32_t x, int s) {
  const std::size_t n = g.size();
  if (x >= n) throw std::invalid_argument("locality test: vertex out of range");
  if (s < 1) throw std::invalid_argument("locality test: radius must be >= 1");

  std::vector<std::uint8_t> in_a(n, 0);
  for (std::uint32_t v : explored) {
    if (v >= n)
      throw std::invalid_argument("locality test: explored vertex out of range");
    if (in_a[v])
      throw std::invalid_argument("locality test: explored set has duplicates");
    in_a[v] = 1;
  }
  if (in_a[x])
    throw std::invalid_argument("locality test: vertex already explored");

  // Count distinct explored neighbors (adjacency rows are sorted, so
  // parallel edges sit next to each other and are skipped).
  std::uint32_t unique_nb = RegularGraph::npos;
  int distinct = 0;
  std::uint32_t last = RegularGraph::npos;
  for (std::uint32_t w : g.neighbors(x)) {
    if (w == last) continue;
    last = w;
    if (in_a[w]) {
      ++distinct;
      unique_nb = w;
    }
  }
  if (distinct == 0)
    throw std::invalid_argument(
        "locality test: vertex has no explored neighbor");

  GoodVertexVerdict verdict;
  if (distinct == 1) verdict.explored_neighbor = unique_nb;

  // Distances from the explored set (multi-source BFS, depth s).  The
  // shell region is everything reached at distance 1..s.
  std::vector<int> dist(n, -1);
  std::vector<std::uint32_t> queue;
  queue.reserve(n);
  for (std::uint32_t v : explored) {
    dist[v] = 0;
    queue.push_back(v);
  }
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::uint32_t v = queue[head];
    if (dist[v] == s) continue;
    for (std::uint32_t w : g.neighbors(v))
      if (dist[w] < 0) {
        dist[w] = dist[v] + 1;
        queue.push_back(w);
      }
  }

  // Component of x inside the region (never stepping back into A).
  std::vector<std::uint8_t> in_f(n, 0);
  std::vector<std::uint32_t> component{x};
  in_f[x] = 1;
  for (std::size_t head = 0; head < component.size(); ++head) {
    for (std::uint32_t w : g.neighbors(component[head]))
      if (!in_f[w] && dist[w] > 0) {
        in_f[w] = 1;
        component.push_back(w);
      }
  }
  std::sort(component.begin(), component.end());

  // Induced edge count (each edge contributes two adjacency entries, a
  // self-loop likewise); the component is connected, so a surplus over
  // |F| - 1 edges is exactly a cycle.
  std::size_t entries = 0;
  bool touches_other_boundary = false;
  for (std::uint32_t v : component) {
    bool adjacent_to_a = false;
    for (std::uint32_t w : g.neighbors(v)) {
      if (in_f[w]) ++entries;
      if (in_a[w]) adjacent_to_a = true;
    }
    if (adjacent_to_a && v != x) touches_other_boundary = true;
  }
  const std::size_t edges = entries / 2;

  verdict.shell = std::move(component);
  if (distinct != 1)
    verdict.failure = GoodVertexFailure::kMultiNeighbor;
  else if (edges != verdict.shell.size() - 1)
    verdict.failure = GoodVertexFailure::kTreeExcess;
  else if (touches_other_boundary)
    verdict.failure = GoodVertexFailure::kBoundaryPath;
  else
    verdict.is_good = true;
  return verdict;
}

// ---------------------------------------------------------------------------
// Sequential conditioning
// ---------------------------------------------------------------------------

SequentialConditioner::SequentialConditioner(const GreenOperator& green)
    : green_(&green) {}

const Eigen::VectorXd& SequentialConditioner::fetch_column(
    std::uint32_t u) const {
  auto it = columns_.find(u);
  if (it == columns_.end())
    it = columns_.emplace(u, green_->column(u)).first;
  return it->second;
}

ConditionalLaw SequentialConditioner::predict(std::uint32_t u) const {
  auto pos = std::find(vertices_.begin(), vertices_.end(), u);
  if (pos != vertices_.end())
    return {values_[static_cast<std::size_t>(pos - vertices_.begin())], 0.0};

  const Eigen::VectorXd& col = fetch_column(u);
  const std::size_t k = vertices_.size();
  std::vector<double> rhs(k);
  for (std::size_t i = 0; i < k; ++i) rhs[i] = col[vertices_[i]];
  const std::vector<double> w = forward_solve(factor_, std::move(rhs));

  double mean = 0.0, wsq = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mean += w[i] * solved_[i];
    wsq += w[i] * w[i];
  }
  return {mean, std::max(col[u] - wsq, 0.0)};
}

void SequentialConditioner::push(std::uint32_t u, double value) {
  if (std::find(vertices_.begin(), vertices_.end(), u) != vertices_.end())
    throw std::invalid_argument("conditioner: value already revealed");

  const Eigen::VectorXd& col = fetch_column(u);
  const std::size_t k = vertices_.size();
  std::vector<double> rhs(k);
  for (std::size_t i = 0; i < k; ++i) rhs[i] = col[vertices_[i]];
  std::vector<double> w = forward_solve(factor_, std::move(rhs));

  double mean = 0.0, wsq = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mean += w[i] * solved_[i];
    wsq += w[i] * w[i];
  }
  const double sd = std::sqrt(std::max(col[u] - wsq, 0.0));
  const double pivot = std::max(sd, kDegeneratePivot);

  w.push_back(pivot);
  factor_.push_back(std::move(w));
  solved_.push_back(sd > kDegeneratePivot ? (value - mean) / pivot : 0.0);
  vertices_.push_back(u);
  values_.push_back(value);
}

// ---------------------------------------------------------------------------
// Two-queue exploration
// ---------------------------------------------------------------------------

const char* trace_action_name(TraceAction a) {
  switch (a) {
    case TraceAction::kPopSecondary: return "pop_secondary";
    case TraceAction::kPopPrimary: return "pop_primary";
    case TraceAction::kDefer: return "defer";
    case TraceAction::kGenerate: return "generate";
    case TraceAction::kEnqueue: return "enqueue";
    case TraceAction::kStopCap: return "stop_cap";
  }
  return "unknown";
}

ExplorationTrace explore_component(const RegularGraph& g,
                                   const GreenOperator& green, std::uint32_t x,
                                   double h, double size_cap_factor,
                                   double anomaly_factor, std::uint64_t seed) {
  const std::size_t n = g.size();
  if (x >= n) throw std::invalid_argument("exploration: start out of range");

  ExplorationTrace tr;
  tr.start = x;
  tr.level = h;
  const double logn = std::log(static_cast<double>(n));
  tr.cap = size_cap_factor * logn;
  tr.anomaly_threshold = anomaly_factor * std::sqrt(logn);
  tr.shell_radius = exploration_shell_radius(g.degree(), n);

  enum : std::uint8_t { kUnseen, kPrimary, kSecondary, kExplored };
  std::vector<std::uint8_t> status(n, kUnseen);
  std::vector<std::uint8_t> in_cluster(n, 0);
  std::deque<std::uint32_t> pq, sq;
  sq.push_back(x);
  status[x] = kSecondary;

  SequentialConditioner cond(green);
  Rng rng(task_seed(seed, kExploreSeedTag));

  auto record = [&](TraceAction a, std::uint32_t v, double val) {
    TraceEvent e;
    e.step = tr.events.size();
    e.action = a;
    e.vertex = v;
    e.value = val;
    e.pq_size = static_cast<std::uint32_t>(pq.size());
    e.sq_size = static_cast<std::uint32_t>(sq.size());
    tr.events.push_back(e);
  };

  // Full sweep of the state invariants; cheap at the component scale the
  // algorithm is designed for, and active whenever asserts are.
  auto check_state = [&]() {
#ifndef NDEBUG
    std::vector<std::uint8_t> seen(n, 0);
    for (std::uint32_t v : pq) {
      assert(status[v] == kPrimary);
      assert(!seen[v]++);
    }
    for (std::uint32_t v : sq) {
      assert(status[v] == kSecondary);
      assert(!seen[v]++);
    }
    for (std::uint32_t v : tr.explored) {
      assert(status[v] == kExplored);
      assert(!seen[v]++);
      if (v == tr.start || in_cluster[v]) continue;
      bool next_to_cluster = false;
      for (std::uint32_t w : g.neighbors(v)) next_to_cluster |= in_cluster[w] != 0;
      assert(next_to_cluster);  // explored vertices hug the cluster
    }
    assert(static_cast<double>(tr.cluster.size()) <= tr.cap + 1.0);
    std::size_t attributed = 0;
    for (const auto& t : tr.subtrees) attributed += t.size();
    assert(attributed == tr.cluster.size());
#endif
  };

  bool capped = false;

  auto generate = [&](std::uint32_t u) {
    const ConditionalLaw law = cond.predict(u);
    const double xi = rng.normal(0.0, 1.0);
    const double value = law.mean + xi * std::sqrt(law.variance);
    cond.push(u, value);
    status[u] = kExplored;
    tr.explored.push_back(u);
    tr.values.push_back(value);
    if (std::abs(value) >= tr.anomaly_threshold) tr.anomalous = true;
    record(TraceAction::kGenerate, u, value);
    return value;
  };

  // Returns true when the cluster reached the cap and the run must halt.
  auto absorb = [&](std::uint32_t u) {
    in_cluster[u] = 1;
    tr.cluster.push_back(u);
    tr.subtrees.back().push_back(u);
    if (static_cast<double>(tr.cluster.size()) >= tr.cap) {
      capped = true;
      record(TraceAction::kStopCap, u, kNaN);
      return true;
    }
    return false;
  };

  auto enqueue_neighbors = [&](std::uint32_t u) {
    for (std::uint32_t w : g.neighbors(u))  // rows sorted: ascending insertion
      if (status[w] == kUnseen) {
        status[w] = kPrimary;
        pq.push_back(w);
        record(TraceAction::kEnqueue, w, kNaN);
      }
  };

  while (!sq.empty() && !capped) {
    const std::uint32_t y = sq.front();
    sq.pop_front();
    ++tr.k_end;
    tr.subtree_roots.push_back(y);
    tr.subtrees.emplace_back();
    record(TraceAction::kPopSecondary, y, kNaN);
    const double vy = generate(y);
    check_state();
    if (vy < h) continue;
    if (absorb(y)) break;
    enqueue_neighbors(y);
    while (!pq.empty()) {
      const std::uint32_t z = pq.front();
      pq.pop_front();
      record(TraceAction::kPopPrimary, z, kNaN);
      const GoodVertexVerdict verdict =
          good_vertex_test(g, tr.explored, z, tr.shell_radius);
      if (!verdict.is_good) {
        status[z] = kSecondary;
        sq.push_back(z);
        record(TraceAction::kDefer, z, kNaN);
      } else {
        const double vz = generate(z);
        if (vz >= h) {
          if (absorb(z)) break;
          enqueue_neighbors(z);
        }
      }
      check_state();
    }
  }

  tr.terminated_by_cap = capped;
  std::sort(tr.cluster.begin(), tr.cluster.end());
  for (auto& t : tr.subtrees) std::sort(t.begin(), t.end());

#ifndef NDEBUG
  // The cluster must be exactly the disjoint union of the subtrees, and the
  // explored set stays within one step of it (plus the start vertex).
  std::vector<std::uint32_t> merged;
  for (const auto& t : tr.subtrees) merged.insert(merged.end(), t.begin(), t.end());
  std::sort(merged.begin(), merged.end());
  assert(merged == tr.cluster);
  assert(tr.k_end == tr.subtree_roots.size());
  assert(static_cast<double>(tr.explored.size()) <=
         g.degree() * (tr.cap + 1.0));
#endif
  check_state();
  return tr;
}

// ---------------------------------------------------------------------------
// Subtree domination
// ---------------------------------------------------------------------------

namespace {

struct PinnedCluster {
  std::uint64_t size = 0;
  bool censored = false;
};

// Cluster of the tree field containing the root, with the root value pinned:
// the root contributes when it clears the level, and each of its d subtrees
// is grown independently with the usual parent-to-child law.
PinnedCluster pinned_tree_cluster(int d, int depth, double h,
                                  double root_value, Rng& rng) {
  PinnedCluster out;
  if (root_value < h) return out;
  out.size = 1;
  if (depth == 0) {
    out.censored = true;
    return out;
  }
  const double noise_sd = std::sqrt(d / (d - 1.0));
  for (int j = 0; j < d; ++j) {
    const double child = root_value / (d - 1) + rng.normal(0.0, noise_sd);
    const ClusterLevelCounts sub =
        lazy_forward_cluster_counts(d, depth - 1, h, child, rng);
    out.size += sub.total();
    out.censored = out.censored || sub.censored;
  }
  return out;
}

}  // namespace

SubtreeDominationReport subtree_domination_experiment(
    const RegularGraph& g, const GreenOperator& green, std::uint32_t x,
    double h, double epsilon, int depth, std::size_t replicas,
    std::uint64_t seed) {
  if (epsilon <= 0.0)
    throw std::invalid_argument("domination: epsilon must be positive");
  if (depth < 1)
    throw std::invalid_argument("domination: depth must be >= 1");

  // Many traces share the operator; make repeated column reads O(n).
  if (green.dense_mode()) green.matrix();

  SubtreeDominationReport report;
  report.traces = replicas;
  for (std::size_t i = 0; i < replicas; ++i) {
    const ExplorationTrace tr =
        explore_component(g, green, x, h, kDefaultSizeCapFactor,
                          kDefaultAnomalyFactor, task_seed(seed, 2 * i));
    if (tr.anomalous) {
      ++report.anomalous;
      continue;
    }
    Rng tree_rng(task_seed(seed, 2 * i + 1));
    for (std::size_t r = 0; r < tr.subtree_roots.size(); ++r) {
      const std::uint32_t root = tr.subtree_roots[r];
      const auto pos = std::find(tr.explored.begin(), tr.explored.end(), root);
      const double pinned =
          tr.values[static_cast<std::size_t>(pos - tr.explored.begin())];
      const PinnedCluster partner =
          pinned_tree_cluster(g.degree(), depth, h - epsilon, pinned, tree_rng);
      ++report.comparisons;
      if (tr.subtrees[r].size() <= partner.size) ++report.dominated;
      if (partner.censored) ++report.censored;
    }
  }
  report.frequency = wilson95(report.dominated, report.comparisons);
  return report;
}

}  // namespace gffperc
