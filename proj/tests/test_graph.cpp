#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "gffperc/graph.hpp"

using namespace gffperc;

namespace {

// 3-regular graph whose ball B(c0, 2) contains exactly one cycle (the
// pentagon c0..c4).  Pentagon vertices 0..4 each carry a stem t_i = 5+i with
// two leaves u_i = 10+i and v_i = 15+i; the ten leaves are closed into a
// 10-cycle u0-u1-..-u4-v0-v1-..-v4-u0 far away from the pentagon.
RegularGraph unique_cycle_gadget() {
  std::vector<std::vector<std::uint32_t>> rows(20);
  auto edge = [&](std::uint32_t a, std::uint32_t b) {
    rows[a].push_back(b);
    rows[b].push_back(a);
  };
  for (std::uint32_t i = 0; i < 5; ++i) edge(i, (i + 1) % 5);
  for (std::uint32_t i = 0; i < 5; ++i) edge(i, 5 + i);
  for (std::uint32_t i = 0; i < 5; ++i) {
    edge(5 + i, 10 + i);
    edge(5 + i, 15 + i);
  }
  std::vector<std::uint32_t> leaf_cycle = {10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
  for (std::size_t i = 0; i < leaf_cycle.size(); ++i)
    edge(leaf_cycle[i], leaf_cycle[(i + 1) % leaf_cycle.size()]);

  std::vector<std::uint32_t> flat;
  for (auto& r : rows) {
    REQUIRE(r.size() == 3);
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return RegularGraph(3, 20, std::move(flat));
}

// Independent oracle for non-backtracking path counts: transfer matrix over
// the directed edges of the subgraph induced by B(x,R).
std::size_t nb_count_oracle(const RegularGraph& g, std::uint32_t x,
                            std::uint32_t y, int R, int length) {
  auto dist = g.distances(x, R);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::size_t v = 0; v < g.size(); ++v) {
    if (dist[v] < 0) continue;
    for (std::uint32_t u : g.neighbors(static_cast<std::uint32_t>(v)))
      if (dist[u] >= 0) edges.push_back({static_cast<std::uint32_t>(v), u});
  }
  if (length == 0) return x == y ? 1 : 0;
  const auto m = static_cast<Eigen::Index>(edges.size());
  Eigen::VectorXd state = Eigen::VectorXd::Zero(m);
  for (Eigen::Index e = 0; e < m; ++e)
    if (edges[e].first == x) state[e] = 1.0;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index e = 0; e < m; ++e)
    for (Eigen::Index f = 0; f < m; ++f)
      if (edges[e].second == edges[f].first && edges[f].second != edges[e].first)
        M(f, e) = 1.0;
  for (int step = 1; step < length; ++step) state = M * state;
  double total = 0.0;
  for (Eigen::Index e = 0; e < m; ++e)
    if (edges[e].second == y) total += state[e];
  return static_cast<std::size_t>(std::llround(total));
}

}  // namespace

TEST_CASE("complete graph and Petersen constructions are valid") {
  auto k4 = RegularGraph::complete(4);
  CHECK(k4.degree() == 3);
  CHECK(k4.size() == 4);
  CHECK(k4.is_simple());
  CHECK(k4.is_connected());

  auto pet = RegularGraph::petersen();
  CHECK(pet.degree() == 3);
  CHECK(pet.size() == 10);
  CHECK(pet.is_simple());
  CHECK(pet.is_connected());
  // Girth 5: no radius-1 ball sees a cycle, every radius-2 ball sees many.
  for (std::uint32_t v = 0; v < 10; ++v) CHECK(pet.tree_excess(v, 1) == 0);
  CHECK(pet.tree_excess(0, 2) == 6);
}

TEST_CASE("pairing model: parity rejection and the forced K4") {
  CHECK_THROWS_AS(generate_random_regular(3, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_random_regular(3, 3, 1), std::invalid_argument);

  // K4 is the only simple 3-regular graph on four vertices, so every seed
  // must produce it.
  auto k4 = RegularGraph::complete(4);
  for (std::uint64_t seed : {1ULL, 7ULL, 123456789ULL})
    CHECK(generate_random_regular(3, 4, seed).to_text() == k4.to_text());
  // Same story for K5 among 4-regular graphs on five vertices.
  auto k5 = RegularGraph::complete(5);
  CHECK(generate_random_regular(4, 5, 99).to_text() == k5.to_text());
}

TEST_CASE("audit: K4 tree excess and spectral gap") {
  auto k4 = RegularGraph::complete(4);
  auto rep = audit_assumptions(k4, 0.5, 0.5);
  CHECK(rep.radius_checked == 1);  // floor(0.5 * log_2 4)
  CHECK(rep.max_tree_excess_in_ball == 3);  // 6 edges - 4 vertices + 1
  CHECK(rep.passes[0]);
  CHECK_FALSE(rep.passes[1]);
  // P has eigenvalues {1, -1/3, -1/3, -1/3}.
  CHECK(rep.spectral_gap == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  CHECK(rep.passes[2]);
  CHECK_FALSE(rep.all());
}

TEST_CASE("audit: Petersen graph passes everything at radius 1") {
  auto pet = RegularGraph::petersen();
  auto rep = audit_assumptions(pet, 0.31, 0.5);
  CHECK(rep.radius_checked == 1);
  CHECK(rep.max_tree_excess_in_ball == 0);
  // Adjacency spectrum {3, 1, -2} => gap of I - P is 1 - 1/3 = 2/3.
  CHECK(rep.spectral_gap == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(rep.all());
}

TEST_CASE("audit: disconnected graph fails (0) with zero gap") {
  // Two disjoint copies of K4.
  std::vector<std::uint32_t> flat;
  for (std::uint32_t v = 0; v < 8; ++v)
    for (std::uint32_t u = (v / 4) * 4; u < (v / 4) * 4 + 4; ++u)
      if (u != v) flat.push_back(u);
  RegularGraph g(3, 8, std::move(flat));
  CHECK_FALSE(g.is_connected());
  auto rep = audit_assumptions(g, 0.5, 0.5);
  CHECK_FALSE(rep.connected);
  CHECK_FALSE(rep.passes[0]);
  CHECK(rep.spectral_gap == 0.0);
  CHECK_FALSE(rep.passes[2]);
}

TEST_CASE("audit: multigraphs load but are rejected") {
  // Double edge between 0 and 1; still 3-regular and connected.
  std::vector<std::uint32_t> flat = {
      1, 1, 2,   // 0
      0, 0, 3,   // 1
      0, 3, 3,   // 2
      1, 2, 2};  // 3
  RegularGraph g(3, 4, std::move(flat));
  CHECK_FALSE(g.is_simple());
  CHECK(g.is_connected());
  auto rep = audit_assumptions(g, 0.5, 0.5);
  CHECK_FALSE(rep.passes[0]);

  // A half self-loop (odd diagonal count) is malformed and must not load.
  std::vector<std::uint32_t> dangling = {
      0, 1, 2,   // 0 has a single self-loop endpoint
      0, 2, 3,
      0, 1, 3,
      1, 2, 2};
  CHECK_THROWS_AS(RegularGraph(3, 4, std::move(dangling)), std::invalid_argument);
}

TEST_CASE("spectral gap: relabeling invariance and generated-graph range") {
  auto pet = RegularGraph::petersen();
  std::vector<std::uint32_t> perm(10);
  for (std::uint32_t v = 0; v < 10; ++v) perm[v] = (3 * v + 7) % 10;
  auto shuffled = pet.relabeled(perm);
  CHECK(spectral_gap(shuffled) == doctest::Approx(spectral_gap(pet)).epsilon(1e-12));

  for (std::uint64_t seed : {2ULL, 3ULL, 5ULL}) {
    auto g = generate_random_regular(3, 64, seed);
    double gap = spectral_gap(g);
    CHECK(gap > 0.0);
    CHECK(gap <= 2.0);
  }
}

TEST_CASE("spectral gap: iterative path agrees with dense path") {
  auto g = generate_random_regular(3, 500, 77);
  double dense = spectral_gap(g, SpectralMethod::kDense);
  double lanczos = spectral_gap(g, SpectralMethod::kIterative);
  CHECK(lanczos == doctest::Approx(dense).epsilon(1e-7));

  auto pet = RegularGraph::petersen();
  CHECK(spectral_gap(pet, SpectralMethod::kIterative) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-8));
}

TEST_CASE("generated 3-regular graphs at n=1000 are usually locally tree-like") {
  // Radius floor(0.3 * log_2 1000) = 2.  Frozen threshold: at least 90 of
  // 100 seeds give max tree excess <= 1 in every radius-2 ball.
  const int radius = 2;
  int passes = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    auto g = generate_random_regular(3, 1000, seed);
    int worst = 0;
    for (std::uint32_t v = 0; v < g.size() && worst <= 1; ++v)
      worst = std::max(worst, g.tree_excess(v, radius));
    if (worst <= 1) ++passes;
  }
  CHECK(passes >= 90);
}

TEST_CASE("scale constants: frozen values at d=3, n=1000") {
  auto sc = scale_constants(3, 1000, 0.3, 0.5, 0.5);
  CHECK(sc.c0 == doctest::Approx(0.075).epsilon(1e-14));
  CHECK(sc.s_n == 26);  // floor(8 * log_2(log_2 1000)) = floor(26.535...)
  CHECK(sc.r_n == 1);   // floored to zero, clamped up
  CHECK(sc.R_n == 1);
  CHECK(sc.t_n == doctest::Approx(95.4341659).epsilon(1e-6));
  CHECK(sc.gamma(2.0) == doctest::Approx(0.00375).epsilon(1e-12));
  CHECK(sc.gamma(1.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(sc.gamma(0.0), std::invalid_argument);

  // c0 must land strictly inside (0,1): alpha=1, beta=2, d=3 is degenerate.
  CHECK_THROWS_AS(scale_constants(3, 1000, 1.0, 2.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(scale_constants(3, 1000, 0.3, 0.5, 0.0), std::invalid_argument);
}

TEST_CASE("chart: identity at the root and the K4 depth-2 multiset") {
  auto k4 = RegularGraph::complete(4);
  CHECK(cover_tree_image(k4, 0, {}) == 0);

  // The six depth-2 addresses from root 0 cover {1,2,3} twice each.
  std::map<std::uint32_t, int> hits;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 2; ++b) {
      std::vector<int> addr = {a, b};
      ++hits[cover_tree_image(k4, 0, addr)];
    }
  REQUIRE(hits.size() == 3);
  for (auto [v, c] : hits) {
    CHECK(v != 0);
    CHECK(c == 2);
  }
}

TEST_CASE("chart: ball isomorphism and sphere sizes on a tree-like ball") {
  auto g = generate_random_regular(3, 1000, 4242);
  // Find a vertex whose radius-3 ball is cycle-free.
  std::uint32_t x = RegularGraph::npos;
  for (std::uint32_t v = 0; v < g.size(); ++v)
    if (g.tree_excess(v, 3) == 0) {
      x = v;
      break;
    }
  REQUIRE(x != RegularGraph::npos);

  // |B(x,r)| = (d(d-1)^r - 2)/(d-2) = 3*2^r - 2 for d=3.
  for (int r = 0; r <= 3; ++r)
    CHECK(g.ball(x, r).size() == 3u * (1u << r) - 2u);

  // Enumerate all addresses of depth <= 3; images must be pairwise distinct
  // and exhaust the ball.
  std::set<std::uint32_t> images;
  std::size_t address_count = 0;
  auto enumerate = [&](auto&& self, std::vector<int>& addr, int depth) -> void {
    ++address_count;
    images.insert(cover_tree_image(g, x, addr));
    if (depth == 3) return;
    int arity = addr.empty() ? 3 : 2;
    for (int c = 0; c < arity; ++c) {
      addr.push_back(c);
      self(self, addr, depth + 1);
      addr.pop_back();
    }
  };
  std::vector<int> addr;
  enumerate(enumerate, addr, 0);
  CHECK(address_count == 22);  // 1 + 3 + 6 + 12
  CHECK(images.size() == 22);
  auto ball3 = g.ball(x, 3);
  CHECK(images == std::set<std::uint32_t>(ball3.begin(), ball3.end()));

  // Forward sphere avoids one root direction: (d-1)^R images.
  CHECK(forward_sphere_image(g, x, 3).size() == 8);
  CHECK(forward_sphere_image(g, x, 0) == std::vector<std::uint32_t>{x});
  CHECK(g.sphere(x, 3).size() == 12);
}

TEST_CASE("chart: canonical preimage addresses") {
  auto k4 = RegularGraph::complete(4);
  CHECK(min_depth_preimage_address(k4, 0, 2) == std::vector<int>{1});
  CHECK(min_depth_preimage_address(k4, 0, 0).empty());

  auto pet = RegularGraph::petersen();
  auto addr = min_depth_preimage_address(pet, 0, 7);
  CHECK(addr == std::vector<int>{2, 0});
  CHECK(cover_tree_image(pet, 0, addr) == 7);
}

TEST_CASE("hitting the sphere from the centre of a tree-like ball is uniform") {
  auto g = generate_random_regular(3, 1000, 4242);
  std::uint32_t x = RegularGraph::npos;
  for (std::uint32_t v = 0; v < g.size(); ++v)
    if (g.tree_excess(v, 3) == 0) {
      x = v;
      break;
    }
  REQUIRE(x != RegularGraph::npos);

  // Exact linear solve for the harmonic exit law of B(x,3): interior
  // vertices are dist <= 2, absorbing sphere at dist 3.
  auto dist = g.distances(x, 3);
  std::vector<std::uint32_t> interior, sph;
  for (std::uint32_t v = 0; v < g.size(); ++v) {
    if (dist[v] >= 0 && dist[v] <= 2) interior.push_back(v);
    if (dist[v] == 3) sph.push_back(v);
  }
  REQUIRE(interior.size() == 10);
  REQUIRE(sph.size() == 12);
  std::map<std::uint32_t, int> iidx, sidx;
  for (std::size_t i = 0; i < interior.size(); ++i) iidx[interior[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < sph.size(); ++i) sidx[sph[i]] = static_cast<int>(i);

  const int ni = static_cast<int>(interior.size());
  const int ns = static_cast<int>(sph.size());
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(ni, ni);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(ni, ns);
  for (int i = 0; i < ni; ++i)
    for (std::uint32_t u : g.neighbors(interior[i])) {
      if (iidx.count(u)) Q(i, iidx[u]) += 1.0 / 3.0;
      else B(i, sidx[u]) += 1.0 / 3.0;
    }
  Eigen::MatrixXd H =
      (Eigen::MatrixXd::Identity(ni, ni) - Q).partialPivLu().solve(B);
  // Through the chart the ball is the tree ball, whose exit law from the
  // root is uniform on the d(d-1)^{R-1} = 12 sphere points.
  for (int j = 0; j < ns; ++j)
    CHECK(std::abs(H(iidx[x], j) - 1.0 / 12.0) <= 1e-10);
}

TEST_CASE("non-backtracking counts: windows on the unique-cycle gadget") {
  auto g = unique_cycle_gadget();
  CHECK(g.is_simple());
  CHECK(g.is_connected());
  REQUIRE(g.tree_excess(0, 2) == 1);

  // x = 0 and y = 2 both sit on the pentagon; inside B(0,2) the only paths
  // are the two arcs (lengths 2 and 3) and their cycle-extended versions
  // (lengths 7, 8, 12, ...).
  CHECK(count_nonbacktracking_paths(g, 0, 2, 2, 0, 2) == 0);  // below distance
  CHECK(count_nonbacktracking_paths(g, 0, 2, 2, 2, 3) == 1);
  CHECK(count_nonbacktracking_paths(g, 0, 2, 2, 3, 4) == 1);
  CHECK(count_nonbacktracking_paths(g, 0, 2, 2, 4, 7) == 0);
  CHECK(count_nonbacktracking_paths(g, 0, 2, 2, 7, 8) == 1);

  // Every window of width 5 (the cycle length) holds at most two paths.
  for (int k = 0; k <= 10; ++k)
    CHECK(count_nonbacktracking_paths(g, 0, 2, 2, k, k + 5) <= 2);

  // Tree-like source: unique geodesic, nothing else in any window.
  REQUIRE(g.tree_excess(10, 2) == 0);
  auto d10 = g.distances(10);
  for (std::uint32_t y : g.ball(10, 2)) {
    CHECK(count_nonbacktracking_paths(g, 10, y, 2, 0, d10[y]) == 0);
    CHECK(count_nonbacktracking_paths(g, 10, y, 2, d10[y], d10[y] + 1) == 1);
  }

  // Too much structure is refused.
  auto pet = RegularGraph::petersen();
  CHECK_THROWS_AS(count_nonbacktracking_paths(pet, 0, 1, 2, 0, 5), std::domain_error);
  auto k4 = RegularGraph::complete(4);
  CHECK_THROWS_AS(count_nonbacktracking_paths(k4, 0, 1, 1, 0, 3), std::domain_error);
}

TEST_CASE("non-backtracking counts match the transfer-matrix oracle") {
  auto g = unique_cycle_gadget();
  for (std::uint32_t y : {2u, 3u, 5u, 6u, 0u})
    for (int len = 0; len <= 12; ++len)
      CHECK(count_nonbacktracking_paths(g, 0, y, 2, len, len + 1) ==
            nb_count_oracle(g, 0, y, 2, len));

  // Small random graphs: any vertex whose ball is clean enough qualifies.
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto h = generate_random_regular(3, 12, seed);
    for (std::uint32_t x = 0; x < h.size(); ++x)
      for (int R = 1; R <= 2; ++R) {
        if (h.tree_excess(x, R) > 1) continue;
        auto dist = h.distances(x, R);
        for (std::uint32_t y = 0; y < h.size(); ++y) {
          if (dist[y] < 0) continue;
          for (int len = 0; len <= 6; ++len)
            CHECK(count_nonbacktracking_paths(h, x, y, R, len, len + 1) ==
                  nb_count_oracle(h, x, y, R, len));
        }
      }
  }
}

TEST_CASE("text round trip and loader validation") {
  auto pet = RegularGraph::petersen();
  auto text = pet.to_text();
  auto back = RegularGraph::from_text(text);
  CHECK(back.to_text() == text);

  CHECK_THROWS_AS(RegularGraph::from_text("3\n"), std::runtime_error);
  CHECK_THROWS_AS(RegularGraph::from_text("3 10\n0: 1 2\n"), std::runtime_error);
  // Unsorted neighbor list is rejected even when structurally fine.
  auto k4 = RegularGraph::complete(4);
  std::string twisted = k4.to_text();
  auto pos = twisted.find("0: 1 2 3");
  REQUIRE(pos != std::string::npos);
  twisted.replace(pos, 8, "0: 2 1 3");
  CHECK_THROWS_AS(RegularGraph::from_text(twisted), std::runtime_error);
  // Trailing garbage is rejected.
  CHECK_THROWS_AS(RegularGraph::from_text(k4.to_text() + "surprise\n"),
                  std::runtime_error);

  // Asymmetric adjacency cannot be constructed.
  std::vector<std::uint32_t> bad = {1, 2, 3, 0, 2, 3, 0, 1, 3, 0, 1, 1};
  CHECK_THROWS_AS(RegularGraph(3, 4, std::move(bad)), std::invalid_argument);
}
