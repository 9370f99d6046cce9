#include "gffperc/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gffperc/rng.hpp"
#include "gffperc/stats.hpp"
#include "gffperc/tree.hpp"

namespace gffperc {

namespace {

constexpr double kOverflowLog = 700.0;  // exp() saturates just above this
constexpr std::size_t kLambdaBatches = 8;
constexpr std::size_t kBootstrapResamples = 200;
constexpr std::size_t kInnerYDraws = 64;

void check_common(int d, int depth, std::size_t replicas, int min_depth) {
  if (d < 3) throw std::invalid_argument("estimator requires degree at least 3");
  if (depth < min_depth)
    throw std::invalid_argument("truncation depth is too shallow for this estimator");
  if (replicas == 0) throw std::invalid_argument("replica count must be positive");
}

// Growth-rate fit shared by estimate_lambda and the critical-level search:
// log mean sphere counts against the level, over [depth/2, depth], zero
// means excluded.  Returns 0 when fewer than two levels carry mass.
struct GrowthFit {
  double lambda = 0.0;
  double fit_rms = 0.0;
  std::size_t points = 0;
  std::size_t floored = 0;
};

GrowthFit fit_growth(std::span<const double> mean_counts, int depth) {
  const int k0 = depth / 2;
  std::vector<double> xs, ys;
  GrowthFit out;
  for (int k = k0; k <= depth; ++k) {
    const double m = mean_counts[static_cast<std::size_t>(k)];
    if (m <= 0.0) {
      ++out.floored;
      continue;
    }
    xs.push_back(static_cast<double>(k));
    ys.push_back(std::log(m));
  }
  if (xs.size() < 2) return out;
  const LineFit fit = fit_line(xs, ys);
  out.lambda = std::exp(fit.slope);
  out.fit_rms = fit.residual_rms;
  out.points = xs.size();
  return out;
}

// One growth-rate evaluation at level h with stored per-replica window
// counts (for bootstrap resampling).  Replica i always draws under the i-th
// sub-seed of `seed`, so evaluations at different levels share random
// numbers replica by replica.
struct LambdaEval {
  double h = 0.0;
  double lambda = 0.0;
  std::size_t censored = 0;
  std::vector<std::uint64_t> window_counts;  // replicas x window, flattened
};

LambdaEval eval_lambda_curve(int d, double h, int depth, std::size_t replicas,
                             std::uint64_t seed) {
  const int k0 = depth / 2;
  const std::size_t window = static_cast<std::size_t>(depth - k0 + 1);
  LambdaEval eval;
  eval.h = h;
  eval.window_counts.assign(replicas * window, 0);
  std::vector<double> mean(static_cast<std::size_t>(depth) + 1, 0.0);
  for (std::size_t i = 0; i < replicas; ++i) {
    Rng rng(task_seed(seed, i));
    const ClusterLevelCounts counts = lazy_forward_cluster_counts(d, depth, h, std::nullopt, rng);
    eval.censored += counts.censored ? 1 : 0;
    for (int k = 0; k <= depth; ++k) mean[static_cast<std::size_t>(k)] += counts.counts[k];
    for (int k = k0; k <= depth; ++k)
      eval.window_counts[i * window + static_cast<std::size_t>(k - k0)] = counts.counts[k];
  }
  for (double& m : mean) m /= static_cast<double>(replicas);
  eval.lambda = fit_growth(mean, depth).lambda;
  return eval;
}

double growth_from_window(std::span<const std::uint64_t> sums, std::size_t n, int depth) {
  const int k0 = depth / 2;
  std::vector<double> mean(static_cast<std::size_t>(depth) + 1, 0.0);
  for (std::size_t w = 0; w < sums.size(); ++w)
    mean[static_cast<std::size_t>(k0) + w] = static_cast<double>(sums[w]) / static_cast<double>(n);
  return fit_growth(mean, depth).lambda;
}

}  // namespace

double EstimateReport::detail(std::string_view key) const {
  for (const auto& [k, v] : details)
    if (k == key) return v;
  throw std::out_of_range("estimate report has no detail named '" + std::string(key) + "'");
}

bool EstimateReport::has_detail(std::string_view key) const {
  for (const auto& [k, v] : details)
    if (k == key) return true;
  return false;
}

EstimateReport estimate_eta_plus(int d, double h, int depth, std::size_t replicas,
                                 std::uint64_t seed) {
  check_common(d, depth, replicas, 1);
  std::size_t survived = 0;
  for (std::size_t i = 0; i < replicas; ++i) {
    Rng rng(task_seed(seed, i));
    const ClusterLevelCounts counts = lazy_forward_cluster_counts(d, depth, h, std::nullopt, rng);
    if (counts.counts[static_cast<std::size_t>(depth)] > 0) ++survived;
  }
  EstimateReport report;
  report.quantity = "eta_plus";
  report.replicas = replicas;
  report.censored = survived;  // reaching the truncation depth is the censoring event
  report.seed = seed;
  report.d = d;
  report.depth = depth;
  report.h_grid = {h};
  const double m = static_cast<double>(replicas);
  const double p = static_cast<double>(survived) / m;
  report.estimate = p;
  report.std_error = std::sqrt(p * (1.0 - p) / m);
  return report;
}

EstimateReport estimate_lambda(int d, double h, int depth, std::size_t replicas,
                               std::uint64_t seed) {
  check_common(d, depth, replicas, 5);
  std::vector<double> mean(static_cast<std::size_t>(depth) + 1, 0.0);
  std::vector<std::vector<double>> batch_mean(
      kLambdaBatches, std::vector<double>(static_cast<std::size_t>(depth) + 1, 0.0));
  std::vector<std::size_t> batch_size(kLambdaBatches, 0);
  std::size_t censored = 0;
  for (std::size_t i = 0; i < replicas; ++i) {
    Rng rng(task_seed(seed, i));
    const ClusterLevelCounts counts = lazy_forward_cluster_counts(d, depth, h, std::nullopt, rng);
    censored += counts.censored ? 1 : 0;
    const std::size_t b = i % kLambdaBatches;
    ++batch_size[b];
    for (int k = 0; k <= depth; ++k) {
      mean[static_cast<std::size_t>(k)] += counts.counts[k];
      batch_mean[b][static_cast<std::size_t>(k)] += counts.counts[k];
    }
  }
  for (double& v : mean) v /= static_cast<double>(replicas);
  const GrowthFit fit = fit_growth(mean, depth);

  EstimateReport report;
  report.quantity = "lambda";
  report.replicas = replicas;
  report.censored = censored;
  report.seed = seed;
  report.d = d;
  report.depth = depth;
  report.h_grid = {h};
  report.estimate = fit.lambda;
  report.details.emplace_back("fit_rms", fit.fit_rms);
  report.details.emplace_back("fit_points", static_cast<double>(fit.points));
  report.details.emplace_back("floored_levels", static_cast<double>(fit.floored));
  if (fit.points < 2) {
    report.details.emplace_back("no_growth", 1.0);
    return report;
  }

  RunningMoments batch_lambdas;
  for (std::size_t b = 0; b < kLambdaBatches; ++b) {
    if (batch_size[b] == 0) continue;
    for (double& v : batch_mean[b]) v /= static_cast<double>(batch_size[b]);
    const GrowthFit bf = fit_growth(batch_mean[b], depth);
    if (bf.points >= 2) batch_lambdas.add(bf.lambda);
  }
  report.std_error = batch_lambdas.stderror();
  report.details.emplace_back("batches", static_cast<double>(batch_lambdas.n));
  return report;
}

EstimateReport estimate_h_star(int d, std::span<const double> h_grid, int depth,
                               std::size_t replicas, std::uint64_t seed) {
  check_common(d, depth, replicas, 5);
  if (h_grid.size() < 2)
    throw std::invalid_argument("critical-level search needs a grid of at least two levels");
  std::vector<double> grid(h_grid.begin(), h_grid.end());
  std::sort(grid.begin(), grid.end());
  if (std::adjacent_find(grid.begin(), grid.end()) != grid.end())
    throw std::invalid_argument("critical-level grid has duplicate levels");

  std::vector<LambdaEval> evals;
  auto evaluate = [&](double h) -> const LambdaEval& {
    for (const LambdaEval& e : evals)
      if (e.h == h) return e;
    evals.push_back(eval_lambda_curve(d, h, depth, replicas, seed));
    return evals.back();
  };

  for (double h : grid) evaluate(h);
  const double lambda_at_min = evaluate(grid.front()).lambda;
  const double lambda_at_max = evaluate(grid.back()).lambda;
  if (lambda_at_min <= 1.0)
    throw std::domain_error(
        "critical-level grid does not bracket the crossing: growth rate at the grid minimum "
        "is not above 1; extend the grid to lower levels");
  if (lambda_at_max >= 1.0)
    throw std::domain_error(
        "critical-level grid does not bracket the crossing: growth rate at the grid maximum "
        "is not below 1; extend the grid to higher levels");

  // Straddling grid pair, then bisection with the same common random
  // numbers until the bracket is narrow.
  double lo = grid.front(), hi = grid.back();
  double lambda_lo = lambda_at_min, lambda_hi = lambda_at_max;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double la = evaluate(grid[i]).lambda;
    const double lb = evaluate(grid[i + 1]).lambda;
    if (la > 1.0 && lb <= 1.0) {
      lo = grid[i];
      hi = grid[i + 1];
      lambda_lo = la;
      lambda_hi = lb;
      break;
    }
  }
  constexpr double kWidthTol = 1.0 / 64.0;
  for (int iter = 0; iter < 20 && hi - lo > kWidthTol; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double lm = evaluate(mid).lambda;
    if (lm > 1.0) {
      lo = mid;
      lambda_lo = lm;
    } else {
      hi = mid;
      lambda_hi = lm;
    }
  }
  double estimate;
  if (lambda_lo - lambda_hi > 1e-12)
    estimate = lo + (lambda_lo - 1.0) * (hi - lo) / (lambda_lo - lambda_hi);
  else
    estimate = 0.5 * (lo + hi);

  // Percentile bootstrap: each resample rebuilds the growth-rate curve at
  // every evaluated level from the same resampled replica set, then reads
  // off the crossing of its piecewise-linear interpolant.
  std::sort(evals.begin(), evals.end(),
            [](const LambdaEval& a, const LambdaEval& b) { return a.h < b.h; });
  const int k0 = depth / 2;
  const std::size_t window = static_cast<std::size_t>(depth - k0 + 1);
  Rng boot(task_seed(task_seed(seed, 0xb00757a9ULL), 1));
  std::vector<double> crossings;
  std::size_t clamped = 0;
  std::vector<std::size_t> idx(replicas);
  std::vector<std::uint64_t> sums(window);
  std::vector<double> curve(evals.size());
  for (std::size_t b = 0; b < kBootstrapResamples; ++b) {
    for (std::size_t i = 0; i < replicas; ++i) idx[i] = boot.below(replicas);
    for (std::size_t e = 0; e < evals.size(); ++e) {
      std::fill(sums.begin(), sums.end(), 0);
      const auto& wc = evals[e].window_counts;
      for (std::size_t i = 0; i < replicas; ++i) {
        const std::size_t base = idx[i] * window;
        for (std::size_t w = 0; w < window; ++w) sums[w] += wc[base + w];
      }
      curve[e] = growth_from_window(sums, replicas, depth);
    }
    double hb = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t e = 0; e + 1 < evals.size(); ++e) {
      if (curve[e] > 1.0 && curve[e + 1] <= 1.0) {
        hb = evals[e].h +
             (curve[e] - 1.0) * (evals[e + 1].h - evals[e].h) / (curve[e] - curve[e + 1]);
        break;
      }
    }
    if (std::isnan(hb)) {
      ++clamped;
      hb = curve.front() <= 1.0 ? evals.front().h : evals.back().h;
    }
    crossings.push_back(hb);
  }
  RunningMoments boot_moments;
  for (double c : crossings) boot_moments.add(c);
  const double ci_lo = percentile(crossings, 0.025);
  const double ci_hi = percentile(crossings, 0.975);

  EstimateReport report;
  report.quantity = "h_star";
  report.replicas = replicas;
  report.seed = seed;
  report.d = d;
  report.depth = depth;
  report.h_grid = grid;
  report.estimate = estimate;
  report.std_error = std::sqrt(boot_moments.variance());
  std::size_t nearest = 0;
  for (std::size_t e = 1; e < evals.size(); ++e)
    if (std::abs(evals[e].h - estimate) < std::abs(evals[nearest].h - estimate)) nearest = e;
  report.censored = evals[nearest].censored;
  report.details.emplace_back("ci_lo", ci_lo);
  report.details.emplace_back("ci_hi", ci_hi);
  report.details.emplace_back("ci_width", ci_hi - ci_lo);
  report.details.emplace_back("bracket_lo", lo);
  report.details.emplace_back("bracket_hi", hi);
  report.details.emplace_back("lambda_at_bracket_lo", lambda_lo);
  report.details.emplace_back("lambda_at_bracket_hi", lambda_hi);
  report.details.emplace_back("lambda_at_grid_min", lambda_at_min);
  report.details.emplace_back("lambda_at_grid_max", lambda_at_max);
  report.details.emplace_back("evaluations", static_cast<double>(evals.size()));
  report.details.emplace_back("bootstrap_clamped", static_cast<double>(clamped));

  if (!(report.estimate > 0.0) || !std::isfinite(report.estimate))
    throw std::runtime_error(
        "estimated critical level fell outside (0, infinity); widen the grid or add replicas");
  return report;
}

SphereGrowthCheck check_sphere_growth(int d, double h, double lambda_hat, int depth,
                                      std::size_t replicas, std::uint64_t seed) {
  check_common(d, depth, replicas, 5);
  if (!(lambda_hat > 0.0))
    throw std::invalid_argument("sphere-growth check needs a positive growth rate");
  const int k0 = depth / 2;
  std::vector<std::size_t> hits(static_cast<std::size_t>(depth - k0 + 1), 0);
  std::size_t survived = 0;
  for (std::size_t i = 0; i < replicas; ++i) {
    Rng rng(task_seed(seed, i));
    const ClusterLevelCounts counts = lazy_forward_cluster_counts(d, depth, h, std::nullopt, rng);
    if (counts.counts[static_cast<std::size_t>(depth)] > 0) ++survived;
    for (int k = k0; k <= depth; ++k) {
      const double threshold =
          std::pow(lambda_hat, k) / (static_cast<double>(k) * static_cast<double>(k));
      if (static_cast<double>(counts.counts[static_cast<std::size_t>(k)]) >= threshold)
        ++hits[static_cast<std::size_t>(k - k0)];
    }
  }
  const double m = static_cast<double>(replicas);
  SphereGrowthCheck check;
  check.replicas = replicas;
  check.eta_depth_limited = static_cast<double>(survived) / m;
  check.eta_std_error =
      std::sqrt(check.eta_depth_limited * (1.0 - check.eta_depth_limited) / m);
  for (int k = k0; k <= depth; ++k) {
    const double p = static_cast<double>(hits[static_cast<std::size_t>(k - k0)]) / m;
    check.rows.push_back({k, p, std::sqrt(p * (1.0 - p) / m)});
  }
  return check;
}

ExpMomentReport check_exp_moment_fixed_point(int d, double h,
                                             std::span<const double> delta_grid, int depth,
                                             std::size_t replicas, std::uint64_t seed) {
  check_common(d, depth, replicas, 1);
  if (replicas < 2) throw std::invalid_argument("exponential-moment check needs >= 2 replicas");
  if (delta_grid.empty()) throw std::invalid_argument("tilt grid must be nonempty");
  for (double delta : delta_grid)
    if (delta < 0.0) throw std::invalid_argument("tilts must be nonnegative");

  ExpMomentReport report;
  report.d = d;
  report.h = h;
  report.depth = depth;
  report.replicas = replicas;
  report.seed = seed;
  report.a_grid = {h, h + 0.5, h + 1.0, h + 2.0};
  report.delta_grid.assign(delta_grid.begin(), delta_grid.end());

  const double noise_sd = std::sqrt(static_cast<double>(d) / (d - 1.0));
  for (std::size_t di = 0; di < delta_grid.size(); ++di) {
    const double delta = delta_grid[di];
    const double log_tilt = std::log1p(delta);
    bool delta_ok = true;
    for (std::size_t ai = 0; ai < report.a_grid.size(); ++ai) {
      const double a = report.a_grid[ai];
      const std::uint64_t base = task_seed(task_seed(seed, di), ai);
      const std::uint64_t outer_base = task_seed(base, 1);
      const std::uint64_t y_base = task_seed(base, 2);
      const std::uint64_t inner_base = task_seed(base, 3);
      const std::uint64_t boot_base = task_seed(base, 4);

      FixedPointCell cell;
      cell.delta = delta;
      cell.a = a;

      // Outer stage: tilted mass of the cluster grown from a root pinned
      // at a, in log space with the overflow guard.
      std::vector<double> outer_vals;
      outer_vals.reserve(replicas);
      RunningMoments outer_moments;
      for (std::size_t i = 0; i < replicas && !cell.diverged; ++i) {
        Rng rng(task_seed(outer_base, i));
        const ClusterLevelCounts counts =
            lazy_forward_cluster_counts(d, depth, h, a, rng);
        cell.censored += counts.censored ? 1 : 0;
        const double log_mass = static_cast<double>(counts.total()) * log_tilt;
        if (log_mass > kOverflowLog) {
          cell.diverged = true;
          break;
        }
        const double v = std::exp(log_mass);
        outer_vals.push_back(v);
        outer_moments.add(v);
      }

      // Inner stage: fresh estimates of the tilted mass at the child pins
      // a/(d-1) + Y, one per Y draw, each from its own sub-seeded replicas.
      std::vector<double> inner_means;
      if (!cell.diverged) {
        Rng yrng(y_base);
        inner_means.reserve(kInnerYDraws);
        for (std::size_t j = 0; j < kInnerYDraws && !cell.diverged; ++j) {
          const double pin = a / (d - 1) + yrng.normal(0.0, noise_sd);
          RunningMoments inner;
          for (std::size_t i = 0; i < replicas; ++i) {
            Rng rng(task_seed(task_seed(inner_base, j), i));
            const ClusterLevelCounts counts =
                lazy_forward_cluster_counts(d, depth, h, pin, rng);
            const double log_mass = static_cast<double>(counts.total()) * log_tilt;
            if (log_mass > kOverflowLog) {
              cell.diverged = true;
              break;
            }
            inner.add(std::exp(log_mass));
          }
          if (!cell.diverged) inner_means.push_back(inner.mean);
        }
      }

      if (cell.diverged) {
        cell.g_estimate = std::numeric_limits<double>::quiet_NaN();
        cell.g_std_error = std::numeric_limits<double>::quiet_NaN();
        cell.recursion_value = std::numeric_limits<double>::quiet_NaN();
        cell.residual = std::numeric_limits<double>::quiet_NaN();
        cell.residual_std_error = std::numeric_limits<double>::quiet_NaN();
        delta_ok = false;
        report.cells.push_back(cell);
        continue;
      }

      cell.g_estimate = outer_moments.mean;
      cell.g_std_error = outer_moments.stderror();
      RunningMoments y_moments;
      for (double mj : inner_means) y_moments.add(mj);
      cell.recursion_value = (1.0 + delta) * std::pow(y_moments.mean, d - 1);
      cell.residual = std::abs(cell.g_estimate - cell.recursion_value);

      // Residual dispersion via a joint bootstrap over the outer replicas
      // and the per-Y inner means (the latter absorbs both the Y sampling
      // and the inner Monte Carlo noise).
      Rng boot(boot_base);
      RunningMoments boot_moments;
      for (std::size_t b = 0; b < kBootstrapResamples; ++b) {
        double outer_sum = 0.0;
        for (std::size_t i = 0; i < outer_vals.size(); ++i)
          outer_sum += outer_vals[boot.below(outer_vals.size())];
        double inner_sum = 0.0;
        for (std::size_t j = 0; j < inner_means.size(); ++j)
          inner_sum += inner_means[boot.below(inner_means.size())];
        const double g_b = outer_sum / static_cast<double>(outer_vals.size());
        const double rhs_b =
            (1.0 + delta) *
            std::pow(inner_sum / static_cast<double>(inner_means.size()), d - 1);
        boot_moments.add(g_b - rhs_b);
      }
      cell.residual_std_error = std::sqrt(boot_moments.variance());

      // A tilt only qualifies while the outer Monte Carlo stays in control:
      // near the critical level the tilted mass has no finite mean and the
      // sample mean wanders with huge dispersion, which would make the
      // residual-vs-SE comparison vacuous.
      if (cell.g_std_error > 0.25 * cell.g_estimate) delta_ok = false;
      if (cell.residual > 5.0 * cell.residual_std_error + 1e-12) delta_ok = false;
      report.cells.push_back(cell);
    }
    if (delta_ok && delta >= report.best_delta) {
      report.best_delta = delta;
      report.any_qualified = true;
    }
  }
  return report;
}

}  // namespace gffperc
