#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gffperc/estimators.hpp"

using namespace gffperc;

TEST_CASE("survival fraction tracks the depth-limited forward cluster") {
  // An absurdly high level kills the root immediately.
  EstimateReport dead = estimate_eta_plus(3, 1e6, 10, 500, 7);
  CHECK(dead.estimate == 0.0);
  CHECK(dead.std_error == 0.0);
  CHECK(dead.censored == 0);
  CHECK(dead.replicas == 500);
  CHECK(dead.quantity == "eta_plus");
  CHECK(dead.d == 3);
  CHECK(dead.depth == 10);
  CHECK(dead.h_grid == std::vector<double>{1e6});

  // Deeper truncations are stricter replica by replica under a shared
  // master seed, so the estimates are non-increasing without any Monte
  // Carlo allowance.
  EstimateReport e8 = estimate_eta_plus(3, 0.3, 8, 1500, 42);
  EstimateReport e14 = estimate_eta_plus(3, 0.3, 14, 1500, 42);
  EstimateReport e20 = estimate_eta_plus(3, 0.3, 20, 1500, 42);
  CHECK(e20.estimate <= e14.estimate);
  CHECK(e14.estimate <= e8.estimate);
  CHECK(e8.estimate > 0.20);
  CHECK(e8.estimate < 0.35);
  CHECK(e20.estimate > 0.20);
  CHECK(e8.censored == static_cast<std::size_t>(std::lround(e8.estimate * 1500)));
  CHECK(e8.censored <= e8.replicas);

  // Raising the level can only shrink the level set: non-increasing over a
  // grid, with a two-standard-error allowance for independent noise.
  std::vector<EstimateReport> curve;
  for (double h : {-0.5, 0.25, 1.0, 1.75}) curve.push_back(estimate_eta_plus(3, h, 12, 2500, 99));
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    const double slack = 2.0 * std::sqrt(curve[i].std_error * curve[i].std_error +
                                         curve[i + 1].std_error * curve[i + 1].std_error);
    CHECK(curve[i + 1].estimate <= curve[i].estimate + slack);
  }
  CHECK(curve.front().estimate > 0.50);
  CHECK(curve.front().estimate < 0.62);
  CHECK(curve.back().estimate <= 0.01);

  // Above the critical level the survival fraction decays with depth.
  EstimateReport s6 = estimate_eta_plus(3, 1.5, 6, 3000, 808);
  EstimateReport s12 = estimate_eta_plus(3, 1.5, 12, 3000, 808);
  EstimateReport s18 = estimate_eta_plus(3, 1.5, 18, 3000, 808);
  CHECK(s12.estimate < s6.estimate);
  CHECK(s18.estimate < s12.estimate);
  CHECK(s18.estimate <= 0.5 * s6.estimate);
  CHECK(s18.estimate <= 0.005);

  // Determinism and input validation.
  EstimateReport again = estimate_eta_plus(3, 0.3, 14, 1500, 42);
  CHECK(again.estimate == e14.estimate);
  CHECK(again.censored == e14.censored);
  CHECK_THROWS_AS(estimate_eta_plus(2, 0.0, 10, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(estimate_eta_plus(3, 0.0, 0, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(estimate_eta_plus(3, 0.0, 10, 0, 1), std::invalid_argument);
}

TEST_CASE("growth-rate fit recovers the branching number at very low levels") {
  // With the level far below the field's bulk, every forward child
  // survives and the sphere counts grow exactly like (d-1)^k.
  EstimateReport l3 = estimate_lambda(3, -6.0, 16, 4, 5);
  CHECK(l3.estimate == doctest::Approx(2.0).epsilon(0.005));
  CHECK(l3.detail("fit_rms") <= 1e-3);
  CHECK(l3.detail("floored_levels") == 0.0);
  CHECK(l3.detail("fit_points") == 9.0);  // window 8..16
  CHECK(l3.censored == 4);
  EstimateReport l4 = estimate_lambda(4, -6.0, 12, 4, 5);
  CHECK(l4.estimate == doctest::Approx(3.0).epsilon(0.005));

  // The growth rate falls as the level rises; the curve passes 1 between
  // h = 1.0 and h = 1.5 at this depth.
  std::vector<EstimateReport> curve;
  for (double h : {-1.0, 0.0, 0.5, 1.0, 1.5}) curve.push_back(estimate_lambda(3, h, 15, 3000, 77));
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    const double slack = 2.0 * std::sqrt(curve[i].std_error * curve[i].std_error +
                                         curve[i + 1].std_error * curve[i + 1].std_error);
    CHECK(curve[i + 1].estimate <= curve[i].estimate + slack);
  }
  CHECK(curve[0].estimate > 1.64);
  CHECK(curve[0].estimate < 1.75);
  CHECK(curve[3].estimate > 0.95);
  CHECK(curve[3].estimate < 1.06);
  CHECK(curve[4].estimate > 0.82);
  CHECK(curve[4].estimate < 0.93);
  CHECK(curve[0].detail("batches") == 8.0);

  // All clusters dead before the window: flagged zero estimate.
  EstimateReport empty = estimate_lambda(3, 1e6, 10, 200, 11);
  CHECK(empty.estimate == 0.0);
  CHECK(empty.std_error == 0.0);
  CHECK(empty.has_detail("no_growth"));
  CHECK(empty.detail("no_growth") == 1.0);
  CHECK_FALSE(l3.has_detail("no_growth"));

  // Determinism and validation.
  EstimateReport again = estimate_lambda(3, -6.0, 16, 4, 5);
  CHECK(again.estimate == l3.estimate);
  CHECK(again.details == l3.details);
  CHECK_THROWS_AS(estimate_lambda(3, 0.0, 4, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(l3.detail("nonexistent"), std::out_of_range);
}

TEST_CASE("critical-level search brackets, bisects, and bootstraps") {
  const std::vector<double> grid{0.0, 1.2};
  EstimateReport hs = estimate_h_star(3, grid, 14, 1500, 2024);

  CHECK(hs.quantity == "h_star");
  CHECK(hs.estimate > 0.0);
  CHECK(std::isfinite(hs.estimate));
  CHECK(hs.estimate > 0.90);
  CHECK(hs.estimate < 1.05);
  CHECK(hs.h_grid == grid);

  // Bootstrap interval: contains the point estimate, reasonably tight, and
  // strictly inside the grid.
  CHECK(hs.detail("ci_lo") <= hs.estimate);
  CHECK(hs.detail("ci_hi") >= hs.estimate);
  CHECK(hs.detail("ci_width") > 0.0);
  CHECK(hs.detail("ci_width") <= 0.2);
  CHECK(hs.detail("ci_lo") > grid.front());
  CHECK(hs.detail("ci_hi") < grid.back());
  CHECK(hs.detail("bootstrap_clamped") == 0.0);
  CHECK(hs.std_error > 0.0);
  CHECK(hs.std_error < 0.1);

  // Bisection contract: the final bracket is narrow and its growth rates
  // straddle 1.
  CHECK(hs.detail("bracket_hi") - hs.detail("bracket_lo") <= 1.0 / 64.0 + 1e-12);
  CHECK(hs.detail("lambda_at_bracket_lo") > 1.0);
  CHECK(hs.detail("lambda_at_bracket_hi") < 1.0);
  CHECK(hs.detail("lambda_at_grid_min") > 1.0);
  CHECK(hs.detail("lambda_at_grid_max") < 1.0);
  CHECK(hs.detail("evaluations") >= 4.0);
  CHECK(hs.estimate >= hs.detail("bracket_lo"));
  CHECK(hs.estimate <= hs.detail("bracket_hi"));

  // Crossing seen from outside: under the same seed (common random
  // numbers), the growth rate at the interval endpoints straddles 1.
  EstimateReport at_lo = estimate_lambda(3, hs.detail("ci_lo"), 14, 1500, 2024);
  EstimateReport at_hi = estimate_lambda(3, hs.detail("ci_hi"), 14, 1500, 2024);
  CHECK(at_lo.estimate > 1.0);
  CHECK(at_hi.estimate < 1.0);

  // Identical seed, identical answer -- details included.
  EstimateReport again = estimate_h_star(3, grid, 14, 1500, 2024);
  CHECK(again.estimate == hs.estimate);
  CHECK(again.std_error == hs.std_error);
  CHECK(again.details == hs.details);
  CHECK(again.censored == hs.censored);

  // Bracket violations name the direction to extend.
  const std::vector<double> too_high{1.5, 2.0};
  try {
    estimate_h_star(3, too_high, 10, 400, 3);
    FAIL("expected a bracket error at the grid minimum");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("lower levels") != std::string::npos);
  }
  const std::vector<double> too_low{-2.0, -1.0};
  try {
    estimate_h_star(3, too_low, 10, 400, 3);
    FAIL("expected a bracket error at the grid maximum");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("higher levels") != std::string::npos);
  }
  CHECK_THROWS_AS(estimate_h_star(3, std::vector<double>{0.5}, 10, 100, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(estimate_h_star(3, std::vector<double>{0.5, 0.5}, 10, 100, 1),
                  std::invalid_argument);
}

TEST_CASE("sphere-count threshold probabilities stabilize at the survival fraction") {
  // Below the critical level, P[count at level k beats lambda^k / k^2]
  // barely moves across the fit window and matches the depth-limited
  // survival fraction computed from the same replicas.
  EstimateReport lam = estimate_lambda(3, 0.0, 18, 4000, 1234);
  REQUIRE(lam.estimate > 1.0);
  SphereGrowthCheck sg = check_sphere_growth(3, 0.0, lam.estimate, 18, 4000, 1234);

  EstimateReport eta = estimate_eta_plus(3, 0.0, 18, 4000, 1234);
  CHECK(sg.eta_depth_limited == eta.estimate);  // shared replica sub-seeds
  CHECK(sg.replicas == 4000);
  REQUIRE(sg.rows.size() == 10);  // levels 9..18
  CHECK(sg.rows.front().level == 9);
  CHECK(sg.rows.back().level == 18);

  double lo = 1.0, hi = 0.0;
  for (const SphereGrowthRow& row : sg.rows) {
    lo = std::min(lo, row.probability);
    hi = std::max(hi, row.probability);
    CHECK(std::abs(row.probability - sg.eta_depth_limited) <=
          3.0 * (row.std_error + sg.eta_std_error));
  }
  CHECK(hi - lo <= 0.01);

  CHECK_THROWS_AS(check_sphere_growth(3, 0.0, 0.0, 18, 100, 1), std::invalid_argument);
  CHECK_THROWS_AS(check_sphere_growth(3, 0.0, 1.3, 4, 100, 1), std::invalid_argument);
}

TEST_CASE("tilted cluster mass satisfies the one-step recursion while it stays finite") {
  const std::vector<double> deltas{0.0, 0.02, 0.05, 0.1, 0.2};
  ExpMomentReport gh = check_exp_moment_fixed_point(3, 1.5, deltas, 22, 1500, 555);

  CHECK(gh.a_grid == std::vector<double>{1.5, 2.0, 2.5, 3.5});
  CHECK(gh.delta_grid == deltas);
  REQUIRE(gh.cells.size() == 20);
  for (std::size_t di = 0; di < deltas.size(); ++di)
    for (std::size_t ai = 0; ai < 4; ++ai) {
      const FixedPointCell& cell = gh.cells[di * 4 + ai];
      CHECK(cell.delta == deltas[di]);
      CHECK(cell.a == gh.a_grid[ai]);
      CHECK(cell.censored <= gh.replicas);
    }

  // Zero tilt is exact: both sides of the recursion are identically 1.
  for (std::size_t ai = 0; ai < 4; ++ai) {
    const FixedPointCell& cell = gh.cells[ai];
    CHECK(cell.g_estimate == 1.0);
    CHECK(cell.g_std_error == 0.0);
    CHECK(cell.recursion_value == 1.0);
    CHECK(cell.residual == 0.0);
    CHECK(cell.residual_std_error == 0.0);
    CHECK_FALSE(cell.diverged);
  }

  // A root pinned exactly at the level always joins the cluster, so the
  // tilted mass is at least 1 + delta replica by replica.
  for (std::size_t di = 0; di < deltas.size(); ++di) {
    const FixedPointCell& at_h = gh.cells[di * 4];
    if (at_h.diverged) continue;
    CHECK(at_h.g_estimate >= 1.0 + deltas[di]);
  }

  // The surviving tilts keep the Monte Carlo in control and the residual
  // within five bootstrap standard errors at every pin.
  CHECK(gh.any_qualified);
  CHECK(gh.best_delta == 0.05);
  for (std::size_t di = 0; di < 3; ++di)
    for (std::size_t ai = 0; ai < 4; ++ai) {
      const FixedPointCell& cell = gh.cells[di * 4 + ai];
      CHECK_FALSE(cell.diverged);
      CHECK(cell.g_std_error <= 0.25 * cell.g_estimate);
      CHECK(cell.residual <= 5.0 * cell.residual_std_error + 1e-12);
    }
  // The next tilt up lost Monte Carlo control at some pin.
  bool unstable = false;
  for (std::size_t ai = 0; ai < 4; ++ai) {
    const FixedPointCell& cell = gh.cells[3 * 4 + ai];
    if (cell.diverged || cell.g_std_error > 0.25 * cell.g_estimate) unstable = true;
  }
  CHECK(unstable);

  // Supercritical misuse trips the overflow guard instead of looping.
  const std::vector<double> big{1.0};
  ExpMomentReport div = check_exp_moment_fixed_point(3, -6.0, big, 12, 40, 9);
  REQUIRE(div.cells.size() == 4);
  CHECK(div.cells[0].diverged);
  CHECK(std::isnan(div.cells[0].g_estimate));
  CHECK(std::isnan(div.cells[0].residual));
  CHECK_FALSE(div.any_qualified);
  CHECK(div.best_delta == 0.0);

  // Determinism.
  ExpMomentReport again = check_exp_moment_fixed_point(3, 1.5, deltas, 22, 1500, 555);
  CHECK(again.best_delta == gh.best_delta);
  for (std::size_t c = 0; c < gh.cells.size(); ++c) {
    CHECK(again.cells[c].g_estimate == gh.cells[c].g_estimate);
    CHECK(again.cells[c].residual == gh.cells[c].residual);
    CHECK(again.cells[c].residual_std_error == gh.cells[c].residual_std_error);
  }

  // Validation.
  CHECK_THROWS_AS(check_exp_moment_fixed_point(3, 1.5, std::vector<double>{-0.1}, 10, 10, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(check_exp_moment_fixed_point(3, 1.5, std::vector<double>{}, 10, 10, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(check_exp_moment_fixed_point(3, 1.5, std::vector<double>{0.1}, 10, 1, 1),
                  std::invalid_argument);
}
