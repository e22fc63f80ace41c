#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "varcomp/chibar.hpp"
#include "varcomp/core.hpp"
#include "varcomp/estimation.hpp"
#include "varcomp/lrt.hpp"
#include "varcomp/model.hpp"
#include "varcomp/parallel.hpp"
#include "varcomp/rng.hpp"

namespace varcomp::simlab {

enum class ScenarioModel { linear_m1, logistic_m2 };

// Replication experiment: K datasets generated under theta*, each fitted
// under both hypotheses, the statistics scored against the quantiles of the
// limiting distribution evaluated at theta*.
struct ScenarioSpec {
  ScenarioModel model_kind = ScenarioModel::linear_m1;
  int p = 2;
  CovStructure structure = CovStructure::diagonal();
  Theta theta_star;
  HypothesisSpec h;
  int n_individuals = 500;
  int replications = 1000;
  std::vector<double> alphas = {0.01, 0.05, 0.10};
  std::uint64_t seed = 1;
  McConfig mc_fit{500, 1, std::nullopt};    // fitting draws per individual (nonlinear)
  McConfig mc_eval{2000, 1, std::nullopt};  // draws for the final paired statistic
  FitOptions fit_options;

  ModelSpec model() const {
    return model_kind == ScenarioModel::linear_m1 ? make_linear_polynomial(p, structure)
                                                  : make_logistic(p, structure, 150.0);
  }
};

// observation grids: x_j = j for the linear model, the growth-curve grid of
// 20 points in [50, 1000] plus 5 points in [1100, 1500] otherwise
inline Eigen::VectorXd scenario_grid(ScenarioModel kind) {
  if (kind == ScenarioModel::linear_m1) {
    Eigen::VectorXd x(6);
    for (int j = 0; j < 6; ++j) x[j] = j + 1;
    return x;
  }
  Eigen::VectorXd x(25);
  for (int k = 0; k < 20; ++k) x[k] = 50.0 + k * 50.0;
  for (int k = 0; k < 5; ++k) x[20 + k] = 1100.0 + k * 100.0;
  return x;
}

namespace defaults {

// Linear model: intercept, slope and (p = 3) quadratic effects with
// standard deviations 1.3 and 1.0, covariance 1.04 (correlation 0.8),
// residual sd 1.5. The trailing effect is the tested one.
inline ScenarioSpec m1(int p, CovStructure structure, int tested_count = 1) {
  ScenarioSpec spec;
  spec.model_kind = ScenarioModel::linear_m1;
  spec.p = p;
  spec.structure = structure;
  spec.theta_star.beta = Eigen::VectorXd(p);
  if (p == 2)
    spec.theta_star.beta << 0.0, 7.0;
  else
    spec.theta_star.beta << 0.0, 7.0, 2.0;
  spec.theta_star.gamma = Eigen::MatrixXd::Zero(p, p);
  spec.theta_star.gamma(0, 0) = 1.69;
  if (p == 3 || tested_count == 0) spec.theta_star.gamma(1, 1) = 1.0;
  if ((p == 3 || tested_count == 0) && structure.kind == CovStructure::Kind::full) {
    spec.theta_star.gamma(0, 1) = spec.theta_star.gamma(1, 0) = 1.04;
  }
  spec.theta_star.sigma2 = 2.25;
  for (int t = p - tested_count; t < p; ++t) spec.h.tested.push_back(t);
  return spec;
}

// Table-4 style experiment: three independent effects, the first two
// variances tested. The surviving quadratic effect keeps sd 1.3.
inline ScenarioSpec m1_leading_pair() {
  ScenarioSpec spec;
  spec.model_kind = ScenarioModel::linear_m1;
  spec.p = 3;
  spec.structure = CovStructure::diagonal();
  spec.theta_star.beta = Eigen::Vector3d(0.0, 7.0, 2.0);
  spec.theta_star.gamma = Eigen::MatrixXd::Zero(3, 3);
  spec.theta_star.gamma(2, 2) = 1.69;
  spec.theta_star.sigma2 = 2.25;
  spec.h.tested = {0, 1};
  return spec;
}

// Logistic growth model: asymptote, half-life and scale 150 (fixed and not
// estimated when p = 2); sd 50 for the half-life, sd 15 for the scale,
// covariance 375 (correlation 0.5), residual sd 10. The asymptote variance
// is the tested one.
inline ScenarioSpec m2(int p, CovStructure structure, double tested_sd = 0.0) {
  ScenarioSpec spec;
  spec.model_kind = ScenarioModel::logistic_m2;
  spec.p = p;
  spec.structure = structure;
  spec.theta_star.beta = Eigen::VectorXd(p);
  if (p == 2)
    spec.theta_star.beta << 200.0, 500.0;
  else
    spec.theta_star.beta << 200.0, 500.0, 150.0;
  spec.theta_star.gamma = Eigen::MatrixXd::Zero(p, p);
  spec.theta_star.gamma(0, 0) = tested_sd * tested_sd;
  spec.theta_star.gamma(1, 1) = 2500.0;
  if (p == 3) {
    spec.theta_star.gamma(2, 2) = 225.0;
    if (structure.kind == CovStructure::Kind::full)
      spec.theta_star.gamma(1, 2) = spec.theta_star.gamma(2, 1) = 375.0;
  }
  spec.theta_star.sigma2 = 100.0;
  spec.h.tested = {0};
  spec.replications = 200;
  spec.mc_fit.M = 250;
  spec.fit_options.optimizer.nm_max_evals = 250;
  spec.fit_options.optimizer.max_evals = 800;
  return spec;
}

}  // namespace defaults

// deterministic per (seed, replication, individual)
inline Dataset generate(const ScenarioSpec& spec, int replication) {
  const ModelSpec model = spec.model();
  const Eigen::VectorXd x = scenario_grid(spec.model_kind);
  const Eigen::MatrixXd root = matrix_sqrt_psd(spec.theta_star.gamma);
  const double sigma = std::sqrt(spec.theta_star.sigma2);
  Dataset data;
  data.individuals.reserve(static_cast<std::size_t>(spec.n_individuals));
  Eigen::VectorXd mean;
  for (int i = 0; i < spec.n_individuals; ++i) {
    rng::Stream phi_stream(spec.seed, rng::StreamKind::sim_phi,
                           static_cast<std::uint64_t>(replication),
                           static_cast<std::uint64_t>(i));
    rng::Stream eps_stream(spec.seed, rng::StreamKind::sim_eps,
                           static_cast<std::uint64_t>(replication),
                           static_cast<std::uint64_t>(i));
    Individual ind;
    ind.id = "r" + std::to_string(replication) + "i" + std::to_string(i);
    ind.x = x;
    const Eigen::VectorXd phi = spec.theta_star.beta + root * phi_stream.normal_vector(spec.p);
    model.conditional_mean(phi, x, mean);
    ind.y = mean + sigma * eps_stream.normal_vector(x.size());
    data.individuals.push_back(std::move(ind));
  }
  return data;
}

// Limiting mixture of the scenario's test at theta*. Structural shapes are
// used where the correlation does not enter; otherwise the analytic or
// numerical information at theta* feeds the closed-form weights.
inline ChiBarSq scenario_limit(const ScenarioSpec& spec) {
  ScenarioSpec null_spec = spec;
  for (int t : spec.h.tested) {
    null_spec.theta_star.gamma.row(t).setZero();
    null_spec.theta_star.gamma.col(t).setZero();
  }
  const int r = spec.h.r();
  const auto perm = tested_last_permutation(spec.p, spec.h, spec.structure);
  const Cone cone = build_cone(spec.p, r, perm.permuted_structure);
  if (detail::uses_closed_half_pair(cone)) return weights_half_pair(detail::free_dims(cone));

  const Dataset data = generate(null_spec, 0);
  TestOptions options;
  options.jobs = 2;
  const std::optional<McConfig> mc =
      null_spec.model().is_linear() ? std::nullopt : std::make_optional(null_spec.mc_eval);
  const TestReport report = evaluate_at_theta(null_spec.theta_star, null_spec.model(), data,
                                              null_spec.structure, null_spec.h,
                                              null_spec.alphas.empty() ? 0.05
                                                                       : null_spec.alphas.front(),
                                              mc, options);
  return report.weights;
}

struct ReplicationOutcome {
  double lrt = 0.0;
  bool ok = false;
};

// One replication: generate, fit both hypotheses with the shared seed,
// return the paired statistic (null fit embedded, so never negative).
inline ReplicationOutcome run_replication(const ScenarioSpec& spec, int replication) {
  const ModelSpec model = spec.model();
  const Dataset data = generate(spec, replication);
  ReplicationOutcome out;
  try {
    if (model.is_linear()) {
      const FitResult fit0 = fit(model, data, spec.structure, spec.h, std::nullopt, std::nullopt,
                                 spec.fit_options);
      const FitResult fit1 =
          fit(model, data, spec.structure, std::nullopt, std::nullopt, std::nullopt,
              spec.fit_options);
      out.lrt = std::max(-2.0 * (fit0.loglik - std::max(fit1.loglik, fit0.loglik)), 0.0);
      out.ok = fit0.converged && fit1.converged;
    } else {
      McConfig mc_fit = spec.mc_fit;
      mc_fit.seed = spec.seed ^ (0x9E3779B97F4A7C15ULL * (replication + 1));
      McConfig mc_eval = spec.mc_eval;
      mc_eval.seed = mc_fit.seed;
      const FitResult fit0 =
          fit(model, data, spec.structure, spec.h, mc_fit, std::nullopt, spec.fit_options);
      const FitResult fit1 = fit(model, data, spec.structure, std::nullopt, mc_fit,
                                 fit0.theta_hat, spec.fit_options);
      const McEstimate paired =
          lrt_statistic_mc(fit0.theta_hat, fit1.theta_hat, model, data, mc_eval);
      out.lrt = std::max(paired.value, 0.0);
      out.ok = fit0.converged && fit1.converged;
    }
  } catch (const Error&) {
    out.ok = false;
  }
  return out;
}

inline std::vector<ReplicationOutcome> run_replications(const ScenarioSpec& spec, int jobs) {
  std::vector<ReplicationOutcome> outcomes(static_cast<std::size_t>(spec.replications));
  parallel_for(
      outcomes.size(), [&](std::size_t k) { outcomes[k] = run_replication(spec, static_cast<int>(k)); },
      jobs);
  return outcomes;
}

struct LevelRow {
  double alpha = 0.0;
  double threshold = 0.0;
  double alpha_hat = 0.0;
  double se = 0.0;
  int k_effective = 0;
};

struct LevelTable {
  std::vector<LevelRow> rows;
  int n_dropped = 0;
  int n_total = 0;
};

inline LevelTable score_outcomes(const std::vector<ReplicationOutcome>& outcomes,
                                 const ChiBarSq& mixture, const std::vector<double>& alphas) {
  LevelTable table;
  table.n_total = static_cast<int>(outcomes.size());
  std::vector<double> stats;
  for (const auto& o : outcomes)
    if (o.ok) stats.push_back(o.lrt);
  table.n_dropped = table.n_total - static_cast<int>(stats.size());
  if (table.n_dropped * 50 > table.n_total)
    throw Error("empirical_level: more than 2% of replications failed to fit");
  for (double alpha : alphas) {
    LevelRow row;
    row.alpha = alpha;
    row.threshold = chibar_quantile(mixture, alpha);
    long count = 0;
    for (double s : stats)
      if (s > row.threshold) ++count;
    row.k_effective = static_cast<int>(stats.size());
    row.alpha_hat = static_cast<double>(count) / static_cast<double>(stats.size());
    row.se = std::sqrt(row.alpha_hat * (1.0 - row.alpha_hat) /
                       static_cast<double>(stats.size()));
    table.rows.push_back(row);
  }
  return table;
}

inline LevelTable empirical_level(const ScenarioSpec& spec, int jobs = 0) {
  const ChiBarSq mixture = scenario_limit(spec);
  return score_outcomes(run_replications(spec, jobs), mixture, spec.alphas);
}

// same replications, thresholds from a deliberately wrong mixture
inline LevelTable misspecified_level(const ScenarioSpec& spec, const ChiBarSq& wrong_mixture,
                                     int jobs = 0) {
  return score_outcomes(run_replications(spec, jobs), wrong_mixture, spec.alphas);
}

struct PowerPoint {
  double tested_sd = 0.0;
  double power = 0.0;
  double se = 0.0;
  int k_effective = 0;
};

// rejection fraction under an alternative, thresholds from the null mixture
inline PowerPoint empirical_power(const ScenarioSpec& spec, double alpha, int jobs = 0) {
  const ChiBarSq mixture = scenario_limit(spec);
  const double threshold = chibar_quantile(mixture, alpha);
  const auto outcomes = run_replications(spec, jobs);
  PowerPoint point;
  point.tested_sd = std::sqrt(spec.theta_star.gamma(spec.h.tested.front(), spec.h.tested.front()));
  long count = 0, ok = 0;
  for (const auto& o : outcomes)
    if (o.ok) {
      ++ok;
      if (o.lrt > threshold) ++count;
    }
  if ((static_cast<int>(outcomes.size()) - ok) * 50 > static_cast<long>(outcomes.size()))
    throw Error("empirical_power: more than 2% of replications failed to fit");
  point.k_effective = static_cast<int>(ok);
  point.power = static_cast<double>(count) / static_cast<double>(ok);
  point.se = std::sqrt(point.power * (1.0 - point.power) / static_cast<double>(ok));
  return point;
}

}  // namespace varcomp::simlab
