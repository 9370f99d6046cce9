#include "gffperc/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gffperc/estimators.hpp"
#include "gffperc/percolation.hpp"
#include "gffperc/rng.hpp"
#include "gffperc/taskpool.hpp"
#include "gffperc/zagff.hpp"

namespace gffperc {
namespace {

// Sub-seed tags keeping the graph stream, the field stream, and the
// tree-side reference estimates on disjoint branches of the master seed.
constexpr std::uint64_t kGraphTag = 0x67726170;   // graph generation
constexpr std::uint64_t kFieldTag = 0x6669656c;   // field replicas
constexpr std::uint64_t kEtaTag = 0x657461;       // survival estimate
constexpr std::uint64_t kLambdaTag = 0x6c616d62;  // growth-rate estimate

void check_ladder_config(int d, std::size_t replicas, const std::vector<std::size_t>& ladder,
                         int threads) {
  if (d < 3) throw std::invalid_argument("ladder experiment: degree must be >= 3");
  if (replicas < 2) throw std::invalid_argument("ladder experiment: need at least 2 replicas");
  if (ladder.empty()) throw std::invalid_argument("ladder experiment: empty ladder");
  if (!std::is_sorted(ladder.begin(), ladder.end()) ||
      std::adjacent_find(ladder.begin(), ladder.end()) != ladder.end())
    throw std::invalid_argument("ladder experiment: ladder sizes must be strictly increasing");
  if (ladder.front() <= static_cast<std::size_t>(d))
    throw std::invalid_argument("ladder experiment: sizes must exceed the degree");
  if (threads < 1) throw std::invalid_argument("ladder experiment: threads must be >= 1");
}

struct AuditedGraph {
  RegularGraph graph;
  AssumptionReport report;
  std::uint64_t graph_seed = 0;
  int attempts = 1;
};

// Generates graphs on deterministic sub-seeds until one passes the audit;
// rejected graphs are skipped, never used.
AuditedGraph audited_ladder_graph(int d, std::size_t n, double alpha, double beta,
                                  std::uint64_t rung_seed) {
  for (int attempt = 0; attempt < kLadderAuditAttempts; ++attempt) {
    const std::uint64_t gseed = task_seed(rung_seed, static_cast<std::uint64_t>(attempt));
    RegularGraph g = generate_random_regular(d, n, gseed);
    AssumptionReport rep = audit_assumptions(g, alpha, beta);
    if (rep.all()) return AuditedGraph{std::move(g), rep, gseed, attempt + 1};
  }
  throw std::runtime_error("ladder experiment: no graph of size " + std::to_string(n) +
                           " passed the structural audit in " +
                           std::to_string(kLadderAuditAttempts) + " attempts");
}

}  // namespace

SubcriticalReport run_subcritical_experiment(const SubcriticalConfig& cfg) {
  check_ladder_config(cfg.d, cfg.replicas, cfg.ladder, cfg.threads);
  if (!(cfg.size_factor > 0.0))
    throw std::invalid_argument("subcritical experiment: size_factor must be positive");
  if (!std::isfinite(cfg.h)) throw std::invalid_argument("subcritical experiment: level must be finite");

  SubcriticalReport report;
  report.d = cfg.d;
  report.h = cfg.h;
  report.size_factor = cfg.size_factor;
  report.replicas = cfg.replicas;
  report.seed = cfg.seed;
  report.alpha = cfg.alpha;
  report.beta = cfg.beta;

  std::vector<double> xs, ys;
  for (std::size_t rung_index = 0; rung_index < cfg.ladder.size(); ++rung_index) {
    const std::size_t n = cfg.ladder[rung_index];
    AuditedGraph ag = audited_ladder_graph(
        cfg.d, n, cfg.alpha, cfg.beta, task_seed(task_seed(cfg.seed, kGraphTag), rung_index));
    const GreenOperator green(ag.graph, GreenMode::kIterative);

    SubcriticalRung rung;
    rung.n = n;
    rung.graph_seed = ag.graph_seed;
    rung.audit_attempts = ag.attempts;
    rung.spectral_gap = ag.report.spectral_gap;
    rung.ln_n = std::log(static_cast<double>(n));
    rung.max_sizes.assign(cfg.replicas, 0);

    const std::uint64_t field_seed = task_seed(task_seed(cfg.seed, kFieldTag), rung_index);
    run_indexed_tasks(cfg.replicas, cfg.threads, [&](std::size_t i) {
      GraphField f = green.sample(task_seed(field_seed, i));
      rung.max_sizes[i] = level_components(ag.graph, f, cfg.h).max_size;
    });

    RunningMoments mm;
    const double cap = cfg.size_factor * rung.ln_n;
    std::size_t exceed = 0;
    for (std::uint32_t m : rung.max_sizes) {
      mm.add(static_cast<double>(m));
      rung.max_observed = std::max(rung.max_observed, m);
      if (static_cast<double>(m) >= cap) ++exceed;
    }
    rung.mean_max = mm.mean;
    rung.se_max = mm.stderror();
    rung.ratio = rung.mean_max / rung.ln_n;
    rung.exceed_fraction = static_cast<double>(exceed) / static_cast<double>(cfg.replicas);

    xs.push_back(rung.ln_n);
    ys.push_back(rung.mean_max);
    report.rungs.push_back(std::move(rung));
  }

  if (xs.size() >= 2) report.fit = fit_line(xs, ys);
  report.exceed_non_increasing = true;
  for (std::size_t i = 1; i < report.rungs.size(); ++i)
    if (report.rungs[i].exceed_fraction > report.rungs[i - 1].exceed_fraction)
      report.exceed_non_increasing = false;
  return report;
}

SupercriticalReport run_supercritical_experiment(const SupercriticalConfig& cfg) {
  check_ladder_config(cfg.d, cfg.replicas, cfg.ladder, cfg.threads);
  if (!std::isfinite(cfg.h)) throw std::invalid_argument("supercritical experiment: level must be finite");
  if (!(cfg.delta > 0.0))
    throw std::invalid_argument("supercritical experiment: delta must be positive");

  SupercriticalReport report;
  report.d = cfg.d;
  report.h = cfg.h;
  report.delta = cfg.delta;
  report.replicas = cfg.replicas;
  report.seed = cfg.seed;
  report.alpha = cfg.alpha;
  report.beta = cfg.beta;

  // Tree-side references: survival probability at h, growth rate at h+delta.
  const EstimateReport eta = estimate_eta_plus(cfg.d, cfg.h, cfg.eta_depth, cfg.eta_replicas,
                                               task_seed(cfg.seed, kEtaTag));
  const EstimateReport lam = estimate_lambda(cfg.d, cfg.h + cfg.delta, cfg.lambda_depth,
                                             cfg.lambda_replicas, task_seed(cfg.seed, kLambdaTag));
  report.eta_hat = eta.estimate;
  report.eta_se = eta.std_error;
  report.lambda_hat = lam.estimate;
  report.lambda_se = lam.std_error;
  if (!(report.lambda_hat > 1.0))
    throw std::domain_error(
        "supercritical experiment: measured growth rate at h + delta is <= 1; "
        "the level does not sit below the critical one");

  const double eta_half = report.eta_hat / 2.0;
  for (std::size_t rung_index = 0; rung_index < cfg.ladder.size(); ++rung_index) {
    const std::size_t n = cfg.ladder[rung_index];
    AuditedGraph ag = audited_ladder_graph(
        cfg.d, n, cfg.alpha, cfg.beta, task_seed(task_seed(cfg.seed, kGraphTag), rung_index));
    const GreenOperator green(ag.graph, GreenMode::kIterative);
    const ScaleConstants constants =
        scale_constants(cfg.d, n, cfg.alpha, cfg.beta, ag.report.spectral_gap);

    SupercriticalRung rung;
    rung.n = n;
    rung.graph_seed = ag.graph_seed;
    rung.audit_attempts = ag.attempts;
    rung.spectral_gap = ag.report.spectral_gap;
    rung.ln_n = std::log(static_cast<double>(n));
    rung.gamma = constants.gamma(report.lambda_hat);
    rung.threshold = std::pow(static_cast<double>(n), rung.gamma);
    rung.fractions.assign(cfg.replicas, 0.0);

    std::vector<double> sphere_fractions(cfg.replicas, 0.0);
    std::vector<double> tree_like(cfg.replicas, 0.0);
    const std::uint64_t field_seed = task_seed(task_seed(cfg.seed, kFieldTag), rung_index);
    run_indexed_tasks(cfg.replicas, cfg.threads, [&](std::size_t i) {
      GraphField f = green.sample(task_seed(field_seed, i));
      MesoscopicCensus census = mesoscopic_census(ag.graph, f, cfg.h, constants, rung.gamma);
      rung.fractions[i] = static_cast<double>(census.cluster_count) / static_cast<double>(n);
      sphere_fractions[i] =
          static_cast<double>(census.sphere_restricted_count) / static_cast<double>(n);
      tree_like[i] = census.tree_like_fraction;
    });

    RunningMoments frac, sphere, tl;
    std::size_t meets = 0;
    for (std::size_t i = 0; i < cfg.replicas; ++i) {
      frac.add(rung.fractions[i]);
      sphere.add(sphere_fractions[i]);
      tl.add(tree_like[i]);
      if (rung.fractions[i] >= eta_half) ++meets;
    }
    rung.mean_fraction = frac.mean;
    rung.se_fraction = frac.stderror();
    rung.variance_over_n2 = frac.variance();  // Var(count)/N^2 == Var(count/N)
    rung.meets_half_eta = static_cast<double>(meets) / static_cast<double>(cfg.replicas);
    rung.mean_sphere_fraction = sphere.mean;
    rung.mean_tree_like_fraction = tl.mean;
    report.rungs.push_back(std::move(rung));
  }

  report.frequency_non_decreasing = true;
  report.variance_decreasing = true;
  for (std::size_t i = 1; i < report.rungs.size(); ++i) {
    if (report.rungs[i].meets_half_eta < report.rungs[i - 1].meets_half_eta)
      report.frequency_non_decreasing = false;
    if (!(report.rungs[i].variance_over_n2 < report.rungs[i - 1].variance_over_n2))
      report.variance_decreasing = false;
  }
  const SupercriticalRung& top = report.rungs.back();
  report.top_mean_above_half_eta = top.mean_fraction >= eta_half;
  report.top_mean_near_eta = top.mean_fraction >= report.eta_hat - 2.0 * report.eta_se;
  return report;
}

}  // namespace gffperc
