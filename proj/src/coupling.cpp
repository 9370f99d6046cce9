#include "gffperc/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gffperc/exploration.hpp"
#include "gffperc/rng.hpp"

namespace gffperc {

namespace {

constexpr std::uint64_t kCoupleSeedTag = 0x636f7570ULL;  // stream label for couplings
constexpr std::size_t kNoSlot = static_cast<std::size_t>(-1);

// Chart step and its inverse.  Children of `cur` seen from `parent` are the
// sorted neighbor row with the first copy of the parent removed; the root
// (parent == npos) exposes the whole row.  This must agree exactly with the
// canonical chart used by the address helpers in the graph module.
std::uint32_t chart_step(const RegularGraph& g, std::uint32_t cur, std::uint32_t parent,
                         int c) {
  bool skipped = (parent == RegularGraph::npos);
  int idx = 0;
  for (std::uint32_t u : g.neighbors(cur)) {
    if (!skipped && u == parent) {
      skipped = true;
      continue;
    }
    if (idx == c) return u;
    ++idx;
  }
  throw std::logic_error("chart step: child index out of range");
}

int chart_index(const RegularGraph& g, std::uint32_t cur, std::uint32_t parent,
                std::uint32_t next) {
  bool skipped = (parent == RegularGraph::npos);
  int idx = 0;
  for (std::uint32_t u : g.neighbors(cur)) {
    if (!skipped && u == parent) {
      skipped = true;
      continue;
    }
    if (u == next) return idx;
    ++idx;
  }
  throw std::logic_error("chart step: vertex is not a child of the current one");
}

// Vertex sequence visited by an address walked from `start`.
std::vector<std::uint32_t> address_path(const RegularGraph& g, std::uint32_t start,
                                        std::span<const int> addr) {
  std::vector<std::uint32_t> path{start};
  std::uint32_t parent = RegularGraph::npos;
  for (int c : addr) {
    const std::uint32_t next = chart_step(g, path.back(), parent, c);
    parent = path.back();
    path.push_back(next);
  }
  return path;
}

int address_dist(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t k = 0;
  while (k < a.size() && k < b.size() && a[k] == b[k]) ++k;
  return static_cast<int>(a.size() + b.size() - 2 * k);
}

// Everything about a coupling instance that does not depend on the seed:
// the chart, the killed region and its Green matrix, and the Cholesky
// factors of the three covariance blocks (killed part, graph sphere values,
// tree sphere values).  Building this once lets replica loops pay only for
// Gaussian draws and two small mat-vecs per sample.
struct ChartGeometry {
  const RegularGraph* g = nullptr;
  std::uint32_t x = 0;
  std::optional<std::uint32_t> x_prime;
  int r = 0;
  int R = 0;

  std::vector<std::uint32_t> domain;       // sorted union of the R-ball(s)
  std::vector<std::vector<int>> address;   // tree image of each domain vertex
  std::vector<std::uint8_t> in_killed;     // domain vertex lies in U
  std::vector<std::uint8_t> in_inner;      // domain vertex lies in an r-ball
  std::vector<std::size_t> killed_slot;    // index into U, or kNoSlot
  std::vector<std::size_t> sphere_slot;    // index into S, or kNoSlot

  std::vector<std::uint32_t> U;  // (R-1)-ball(s), sorted
  std::vector<std::uint32_t> S;  // exit spheres = boundary of U, sorted

  Eigen::MatrixXd killed_green;                  // g^U on U, order of U
  Eigen::LLT<Eigen::MatrixXd> killed_llt;        // factor of killed_green
  Eigen::LLT<Eigen::MatrixXd> graph_sphere_llt;  // factor of G restricted to S
  Eigen::LLT<Eigen::MatrixXd> tree_sphere_llt;   // factor of the tree kernel on S

  // For each U index, the S indices of its neighbors outside U; the exit
  // step lands there with probability 1/d each.
  std::vector<std::vector<std::size_t>> exit_links;
};

std::vector<std::uint32_t> sorted_union(std::vector<std::uint32_t> a,
                                        std::vector<std::uint32_t> b) {
  std::vector<std::uint32_t> out;
  out.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

ChartGeometry build_chart_geometry(const GreenOperator& green, const RegularGraph& g,
                                   std::uint32_t x, std::optional<std::uint32_t> x_prime,
                                   int r, int R) {
  const std::size_t n = g.size();
  const int d = g.degree();
  if (green.size() != n || green.graph().degree() != d)
    throw std::invalid_argument("green operator was built for a different graph");
  if (d < 3) throw std::invalid_argument("coupling requires degree at least 3");
  if (x >= n || (x_prime && *x_prime >= n))
    throw std::invalid_argument("coupling centre out of range");
  if (r < 1 || r >= R)
    throw std::invalid_argument("coupling radii must satisfy 1 <= r < R");
  if (g.tree_excess(x, 2 * R) != 0)
    throw std::domain_error("coupling chart: the 2R-ball around the first centre is not tree-like");
  if (x_prime) {
    if (g.tree_excess(*x_prime, 2 * R) != 0)
      throw std::domain_error(
          "coupling chart: the 2R-ball around the second centre is not tree-like");
    const auto reach = g.distances(x, 4 * R);
    if (reach[*x_prime] >= 0)
      throw std::domain_error("coupling chart: the 2R-balls around the two centres intersect");
  }

  ChartGeometry geo;
  geo.g = &g;
  geo.x = x;
  geo.x_prime = x_prime;
  geo.r = r;
  geo.R = R;

  std::vector<std::uint32_t> centres{x};
  if (x_prime) centres.push_back(*x_prime);

  geo.domain = g.ball(x, R);
  geo.U = g.ball(x, R - 1);
  geo.S = g.sphere(x, R);
  if (x_prime) {
    geo.domain = sorted_union(std::move(geo.domain), g.ball(*x_prime, R));
    geo.U = sorted_union(std::move(geo.U), g.ball(*x_prime, R - 1));
    geo.S = sorted_union(std::move(geo.S), g.sphere(*x_prime, R));
  }
  if (geo.U.size() + geo.S.size() >= n)
    throw std::domain_error("coupling chart: the balls do not fit strictly inside the graph");

  // Tree addresses.  The first ball maps through the minimal-depth section
  // at x.  The second ball hangs off the canonical shortest path x -> x':
  // its vertices keep that path as an address prefix, shortened by however
  // many initial steps of the in-ball path from x' run back along it.
  std::unordered_map<std::uint32_t, std::vector<int>> addr_of;
  addr_of.reserve(geo.domain.size());
  for (std::uint32_t y : g.ball(x, R)) addr_of.emplace(y, min_depth_preimage_address(g, x, y));
  if (x_prime) {
    const std::vector<int> az = min_depth_preimage_address(g, x, *x_prime);
    const std::vector<std::uint32_t> spine = address_path(g, x, az);
    const std::size_t depth = az.size();
    for (std::uint32_t y : g.ball(*x_prime, R)) {
      const std::vector<int> local = min_depth_preimage_address(g, *x_prime, y);
      const std::vector<std::uint32_t> q = address_path(g, *x_prime, local);
      std::size_t back = 0;  // steps of q that retrace the spine toward x
      while (back < local.size() && q[back + 1] == spine[depth - back - 1]) ++back;
      std::vector<int> global(az.begin(), az.begin() + static_cast<std::ptrdiff_t>(depth - back));
      for (std::size_t i = back; i < local.size(); ++i) {
        const std::uint32_t par = (i == back) ? spine[depth - back - 1] : q[i - 1];
        global.push_back(chart_index(g, q[i], par, q[i + 1]));
      }
      addr_of.emplace(y, std::move(global));
    }
  }

  const std::size_t nd = geo.domain.size();
  geo.address.resize(nd);
  geo.in_killed.assign(nd, 0);
  geo.in_inner.assign(nd, 0);
  geo.killed_slot.assign(nd, kNoSlot);
  geo.sphere_slot.assign(nd, kNoSlot);

  std::unordered_map<std::uint32_t, std::size_t> domain_pos;
  domain_pos.reserve(nd);
  for (std::size_t k = 0; k < nd; ++k) {
    domain_pos.emplace(geo.domain[k], k);
    geo.address[k] = std::move(addr_of.at(geo.domain[k]));
  }
  for (std::uint32_t c : centres) {
    const auto dist = g.distances(c, R);
    for (std::uint32_t v : g.ball(c, R)) {
      const std::size_t k = domain_pos.at(v);
      if (dist[v] <= R - 1) geo.in_killed[k] = 1;
      if (dist[v] <= r) geo.in_inner[k] = 1;
    }
  }
  for (std::size_t i = 0; i < geo.U.size(); ++i) geo.killed_slot[domain_pos.at(geo.U[i])] = i;
  for (std::size_t j = 0; j < geo.S.size(); ++j) geo.sphere_slot[domain_pos.at(geo.S[j])] = j;

  // Exit structure: every neighbor of U outside U must be an exit-sphere
  // vertex, or the chart geometry is inconsistent.
  geo.exit_links.resize(geo.U.size());
  for (std::size_t i = 0; i < geo.U.size(); ++i) {
    for (std::uint32_t w : g.neighbors(geo.U[i])) {
      const auto it = domain_pos.find(w);
      if (it == domain_pos.end())
        throw std::logic_error("coupling chart: killed region leaks outside the domain");
      const std::size_t k = it->second;
      if (geo.in_killed[k]) continue;
      if (geo.sphere_slot[k] == kNoSlot)
        throw std::logic_error("coupling chart: exit boundary is not the R-sphere");
      geo.exit_links[i].push_back(geo.sphere_slot[k]);
    }
  }

  geo.killed_green = killed_graph_green_matrix(g, geo.U);
  geo.killed_llt.compute(geo.killed_green);
  if (geo.killed_llt.info() != Eigen::Success)
    throw std::runtime_error("coupling: killed covariance is not positive definite");

  const std::size_t ns = geo.S.size();
  if (green.dense_mode()) green.matrix();  // amortize entry() across the sphere block
  Eigen::MatrixXd sig_g(ns, ns);
  Eigen::MatrixXd sig_t(ns, ns);
  for (std::size_t i = 0; i < ns; ++i) {
    const std::size_t ki = domain_pos.at(geo.S[i]);
    for (std::size_t j = i; j < ns; ++j) {
      const std::size_t kj = domain_pos.at(geo.S[j]);
      const double gg = green.entry(geo.S[i], geo.S[j]);
      const double gt = tree_green(d, address_dist(geo.address[ki], geo.address[kj]));
      sig_g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = gg;
      sig_g(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = gg;
      sig_t(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = gt;
      sig_t(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = gt;
    }
  }
  geo.graph_sphere_llt.compute(sig_g);
  if (geo.graph_sphere_llt.info() != Eigen::Success)
    throw std::runtime_error("coupling: graph sphere covariance is not positive definite");
  geo.tree_sphere_llt.compute(sig_t);
  if (geo.tree_sphere_llt.info() != Eigen::Success)
    throw std::runtime_error("coupling: tree sphere covariance is not positive definite");
  return geo;
}

// One draw on a prepared chart.  Three independent standard-normal blocks in
// a fixed order -- killed part over U, graph sphere values, tree sphere
// values -- keep the output a pure function of the seed.
CoupledPair sample_coupling(const ChartGeometry& geo, std::uint64_t seed) {
  Rng rng(task_seed(seed, kCoupleSeedTag));
  const std::size_t nu = geo.U.size();
  const std::size_t ns = geo.S.size();
  const int d = geo.g->degree();

  Eigen::VectorXd noise(static_cast<Eigen::Index>(nu));
  for (std::size_t i = 0; i < nu; ++i) noise[static_cast<Eigen::Index>(i)] = rng.normal();
  const Eigen::VectorXd chi = geo.killed_llt.matrixL() * noise;

  Eigen::VectorXd gnoise(static_cast<Eigen::Index>(ns));
  for (std::size_t j = 0; j < ns; ++j) gnoise[static_cast<Eigen::Index>(j)] = rng.normal();
  const Eigen::VectorXd psi = geo.graph_sphere_llt.matrixL() * gnoise;

  Eigen::VectorXd tnoise(static_cast<Eigen::Index>(ns));
  for (std::size_t j = 0; j < ns; ++j) tnoise[static_cast<Eigen::Index>(j)] = rng.normal();
  const Eigen::VectorXd phi = geo.tree_sphere_llt.matrixL() * tnoise;

  // Harmonic parts: expected sphere value at the exit of U.  The exit law
  // from u factors through the killed Green row at u times the one-step
  // kernel into the sphere, so both extensions are a single mat-vec.
  Eigen::VectorXd bg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nu));
  Eigen::VectorXd bt = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nu));
  for (std::size_t i = 0; i < nu; ++i) {
    for (std::size_t j : geo.exit_links[i]) {
      bg[static_cast<Eigen::Index>(i)] += psi[static_cast<Eigen::Index>(j)];
      bt[static_cast<Eigen::Index>(i)] += phi[static_cast<Eigen::Index>(j)];
    }
  }
  bg /= static_cast<double>(d);
  bt /= static_cast<double>(d);
  const Eigen::VectorXd hg = geo.killed_green * bg;
  const Eigen::VectorXd ht = geo.killed_green * bt;

  CoupledPair out;
  out.x = geo.x;
  out.x_prime = geo.x_prime;
  out.inner_radius = geo.r;
  out.outer_radius = geo.R;
  out.domain = geo.domain;
  out.tree_address = geo.address;
  out.killed_region.assign(geo.in_killed.begin(), geo.in_killed.end());

  const std::size_t nd = geo.domain.size();
  out.killed_part.resize(nd);
  out.graph_harmonic.resize(nd);
  out.tree_harmonic.resize(nd);
  out.graph_field.resize(nd);
  out.tree_field.resize(nd);
  double sup = 0.0;
  for (std::size_t k = 0; k < nd; ++k) {
    double kp = 0.0, gh = 0.0, th = 0.0;
    if (geo.in_killed[k]) {
      const auto i = static_cast<Eigen::Index>(geo.killed_slot[k]);
      kp = chi[i];
      gh = hg[i];
      th = ht[i];
    } else {
      const auto j = static_cast<Eigen::Index>(geo.sphere_slot[k]);
      gh = psi[j];
      th = phi[j];
    }
    out.killed_part[k] = kp;
    out.graph_harmonic[k] = gh;
    out.tree_harmonic[k] = th;
    out.graph_field[k] = kp + gh;
    out.tree_field[k] = kp + th;
    if (geo.in_inner[k]) sup = std::max(sup, std::abs(out.graph_field[k] - out.tree_field[k]));
  }
  out.sup_deviation = sup;
  return out;
}

}  // namespace

std::size_t CoupledPair::index_of(std::uint32_t v) const {
  const auto it = std::lower_bound(domain.begin(), domain.end(), v);
  if (it == domain.end() || *it != v)
    throw std::invalid_argument("vertex is not in the chart domain");
  return static_cast<std::size_t>(it - domain.begin());
}

CoupledPair couple_local(const GreenOperator& green, const RegularGraph& g, std::uint32_t x,
                         std::optional<std::uint32_t> x_prime, int r, int R,
                         std::uint64_t seed) {
  const ChartGeometry geo = build_chart_geometry(green, g, x, x_prime, r, R);
  return sample_coupling(geo, seed);
}

DeviationTail deviation_tail(const GreenOperator& green, const RegularGraph& g, std::uint32_t x,
                             std::optional<std::uint32_t> x_prime, int r, int R,
                             std::size_t replicas, std::uint64_t seed,
                             std::span<const double> epsilons) {
  if (replicas == 0) throw std::invalid_argument("replica count must be positive");
  if (epsilons.empty()) throw std::invalid_argument("epsilon grid must be nonempty");
  const ChartGeometry geo = build_chart_geometry(green, g, x, x_prime, r, R);

  DeviationTail tail;
  tail.inner_radius = r;
  tail.outer_radius = R;
  tail.replicas = replicas;
  tail.epsilons.assign(epsilons.begin(), epsilons.end());
  tail.exceed.assign(epsilons.size(), 0);
  double acc = 0.0;
  for (std::size_t i = 0; i < replicas; ++i) {
    const CoupledPair cp = sample_coupling(geo, task_seed(seed, i));
    acc += cp.sup_deviation;
    tail.max_deviation = std::max(tail.max_deviation, cp.sup_deviation);
    for (std::size_t k = 0; k < tail.epsilons.size(); ++k)
      if (cp.sup_deviation > tail.epsilons[k]) ++tail.exceed[k];
  }
  tail.mean_deviation = acc / static_cast<double>(replicas);
  return tail;
}

std::vector<BoundaryVariance> boundary_variance_check(const GreenOperator& green,
                                                      const RegularGraph& g, std::uint32_t x,
                                                      int R) {
  const std::size_t n = g.size();
  const int d = g.degree();
  if (green.size() != n || green.graph().degree() != d)
    throw std::invalid_argument("green operator was built for a different graph");
  if (d < 3) throw std::invalid_argument("boundary variance requires degree at least 3");
  if (x >= n) throw std::invalid_argument("centre out of range");
  if (R < 1) throw std::invalid_argument("sphere radius must be positive");
  if (g.tree_excess(x, 2 * R) != 0)
    throw std::domain_error("boundary variance: the 2R-ball around the centre is not tree-like");

  const std::vector<std::uint32_t> sphere = g.sphere(x, R);
  const std::size_t ns = sphere.size();
  if (green.dense_mode()) green.matrix();
  Eigen::MatrixXd sig(ns, ns);
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = i; j < ns; ++j) {
      const double v = green.entry(sphere[i], sphere[j]);
      sig(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      sig(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }

  HarmonicSystem sys(g, sphere);
  const auto dist = g.distances(x, R);
  const double prefactor =
      3.0 * d * d / static_cast<double>((d - 1) * (d - 2));
  const double decay = 1.0 / static_cast<double>(d - 1);

  std::vector<BoundaryVariance> out;
  for (std::uint32_t y : g.ball(x, R)) {
    const std::vector<double> mu = sys.hit_distribution(y);
    const Eigen::Map<const Eigen::VectorXd> m(mu.data(), static_cast<Eigen::Index>(ns));
    BoundaryVariance row;
    row.vertex = y;
    row.distance = dist[y];
    row.exact = m.dot(sig * m);
    row.bound = prefactor * std::pow(decay, R - 2 * dist[y]);
    out.push_back(row);
  }
  return out;
}

std::vector<BoundaryVariance> boundary_variance_check(const TreeBall& ball, int R) {
  const int d = ball.degree();
  if (R < 1 || R > ball.depth())
    throw std::invalid_argument("sphere radius must lie in [1, truncation depth]");

  const std::vector<std::uint64_t> sphere = ball.sphere(R);
  const std::size_t ns = sphere.size();
  Eigen::MatrixXd sig(ns, ns);
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = i; j < ns; ++j) {
      const double v = tree_green(d, ball.dist(sphere[i], sphere[j]));
      sig(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      sig(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }

  const double prefactor = d * d / static_cast<double>((d - 1) * (d - 2));
  const double decay = 1.0 / static_cast<double>(d - 1);

  std::vector<BoundaryVariance> out;
  for (std::uint64_t y : ball.ball_vertices(R)) {
    const std::vector<double> mu = hitting_distribution_sphere(ball, y, R);
    const Eigen::Map<const Eigen::VectorXd> m(mu.data(), static_cast<Eigen::Index>(ns));
    BoundaryVariance row;
    row.vertex = y;
    row.distance = ball.level(y);
    row.exact = m.dot(sig * m);
    row.bound = prefactor * std::pow(decay, R - 2 * ball.level(y));
    out.push_back(row);
  }
  return out;
}

ProximityGap conditional_proximity_check(const GreenOperator& green, const RegularGraph& g,
                                         std::span<const std::uint32_t> conditioning,
                                         std::span<const double> observed, std::uint32_t x,
                                         int shell_radius, double size_factor,
                                         double value_factor) {
  const std::size_t n = g.size();
  const int d = g.degree();
  if (green.size() != n || green.graph().degree() != d)
    throw std::invalid_argument("green operator was built for a different graph");
  if (conditioning.size() != observed.size())
    throw std::invalid_argument("observed size mismatch");
  if (conditioning.empty()) throw std::invalid_argument("conditioning set must be nonempty");

  const double logn = std::log(static_cast<double>(n));
  if (static_cast<double>(conditioning.size()) > size_factor * logn)
    throw std::domain_error("proximity check: conditioning set breaks |A| <= size_factor * ln N");
  double sup = 0.0;
  for (double v : observed) sup = std::max(sup, std::abs(v));
  if (sup > value_factor * std::sqrt(logn))
    throw std::domain_error(
        "proximity check: observed values break sup|values| <= value_factor * sqrt(ln N)");

  const GoodVertexVerdict verdict = good_vertex_test(g, conditioning, x, shell_radius);
  if (!verdict.is_good) {
    switch (verdict.failure) {
      case GoodVertexFailure::kMultiNeighbor:
        throw std::domain_error(
            "proximity check: vertex fails the locality test (several explored neighbors)");
      case GoodVertexFailure::kTreeExcess:
        throw std::domain_error(
            "proximity check: vertex fails the locality test (cycle inside the shell)");
      default:
        throw std::domain_error(
            "proximity check: vertex fails the locality test (another boundary vertex in the "
            "shell)");
    }
  }

  const ConditionalLaw law = conditional_law(green, conditioning, observed, x);
  const std::uint32_t xbar = *verdict.explored_neighbor;
  double observed_at_xbar = 0.0;
  for (std::size_t i = 0; i < conditioning.size(); ++i)
    if (conditioning[i] == xbar) {
      observed_at_xbar = observed[i];
      break;
    }

  ProximityGap gap;
  gap.explored_neighbor = xbar;
  gap.law = law;
  gap.mean_gap = std::abs(law.mean - observed_at_xbar / static_cast<double>(d - 1));
  gap.var_gap = std::abs(law.variance - static_cast<double>(d) / static_cast<double>(d - 1));
  return gap;
}

}  // namespace gffperc
