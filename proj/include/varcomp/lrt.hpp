#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "varcomp/chibar.hpp"
#include "varcomp/cone.hpp"
#include "varcomp/core.hpp"
#include "varcomp/estimation.hpp"
#include "varcomp/fisher.hpp"
#include "varcomp/likelihood.hpp"
#include "varcomp/model.hpp"

namespace varcomp {

// optimizer slack below which a negative likelihood-ratio gap is treated as zero
inline constexpr double eps_opt = 1e-6;

enum class WeightsMode { automatic, closed, mc, tail };

struct TestOptions {
  WeightsMode weights_mode = WeightsMode::automatic;
  bool fim_at_alt = false;    // evaluate the information at the alternative fit
  long weight_draws = 100000;
  long tail_draws = 200000;
  std::optional<int> fim_mc_samples;  // defaults to the fit sample size
  FitOptions fit_options{};
  int jobs = 1;
};

struct TestReport {
  double lrt = 0.0;
  double lrt_se = 0.0;
  ChiBarSq weights;
  double quantile_at_alpha = 0.0;
  double pvalue = 1.0;
  bool reject = false;
  double alpha = 0.05;
  FitResult fit_h0, fit_h1;  // in user effect order
  FisherInfo fisher;         // tested-last flat ordering
  Cone cone;
  EffectPermutation perm;
  Eigen::MatrixXd tested_corr;  // correlation of the tested-variance block, if computed
  std::string pvalue_source;    // "closed_form", "mc_weights" or "tail_mc"
  std::vector<std::string> warnings;
  bool has_fits = true;
};

namespace detail {

// theta0 embedded into the alternative space is always an admissible
// candidate; taking the better of the two keeps the statistic nonnegative.
inline double lrt_gap_linear(const Theta& theta0, Theta& theta1, double& loglik1,
                             const ModelSpec& model, const Dataset& data, double loglik0) {
  if (loglik0 > loglik1) {
    theta1 = theta0;
    loglik1 = loglik0;
  }
  (void)model;
  (void)data;
  return -2.0 * (loglik0 - loglik1);
}

inline bool uses_closed_half_pair(const Cone& cone) {
  // zeros x free(k) x single one-dimensional boundary factor x zeros
  int boundary_dims = 0;
  for (const auto& f : cone.factors) {
    if (f.kind == ConeFactor::Kind::orthant || f.kind == ConeFactor::Kind::psd)
      boundary_dims += f.dim();
  }
  return boundary_dims == 1;
}

inline int free_dims(const Cone& cone) {
  int d = 0;
  for (const auto& f : cone.factors)
    if (f.kind == ConeFactor::Kind::free) d += f.dim();
  return d;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Limiting chi-bar-square distribution of the test at a given information
// matrix (tested-last flat ordering).
// ---------------------------------------------------------------------------

struct LimitDistribution {
  ChiBarSq weights;
  Cone cone;
  Eigen::MatrixXd tested_corr;
  std::string source;
};

inline LimitDistribution limit_distribution(const FisherInfo& info, int p, int r,
                                            const CovStructure& s, WeightsMode mode,
                                            long weight_draws, std::uint64_t seed, int jobs) {
  LimitDistribution out;
  out.cone = build_cone(p, r, s);
  const bool diagonal = s.kind == CovStructure::Kind::diagonal;

  if (mode == WeightsMode::closed || mode == WeightsMode::automatic) {
    if (detail::uses_closed_half_pair(out.cone)) {
      // single boundary coordinate: half/half on adjacent degrees whatever V
      out.weights = weights_half_pair(detail::free_dims(out.cone));
      out.source = "closed_form";
      return out;
    }
    if (diagonal && r <= 3) {
      const Eigen::MatrixXd r_mat = selection_matrix(p, r, s);
      const auto [v, c] = extract_correlation(info, r_mat);
      out.tested_corr = c;
      out.weights = weights_closed_form(c);
      out.source = "closed_form";
      return out;
    }
    if (mode == WeightsMode::closed)
      throw Error("limit_distribution: no closed-form weights for this structure");
  }

  Eigen::LLT<Eigen::MatrixXd> chol(info.matrix);
  if (chol.info() != Eigen::Success)
    throw Error("limit_distribution: information matrix is singular");
  const Eigen::MatrixXd v_flat =
      chol.solve(Eigen::MatrixXd::Identity(info.matrix.rows(), info.matrix.cols()));
  const ConeLayout layout = cone_layout(p, r, s);
  const Eigen::MatrixXd v_cone = layout.transform_cov(0.5 * (v_flat + v_flat.transpose()));
  out.weights = weights_mc(out.cone, v_cone, weight_draws, seed, jobs);
  out.source = "mc_weights";
  return out;
}

// ---------------------------------------------------------------------------
// Full testing pipeline: permute tested effects last, fit both hypotheses
// with a shared seed, compute the statistic, the limiting distribution at
// the null fit, and the decision.
// ---------------------------------------------------------------------------

inline TestReport run_test(const ModelSpec& model, const Dataset& data, const CovStructure& s,
                           const HypothesisSpec& h, double alpha, const McConfig& mc,
                           const TestOptions& options = {}) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("run_test: need 0 < alpha < 1");
  validate_model(model);
  validate_dataset(data);
  validate_hypothesis(h, model.p, s);

  TestReport report;
  report.alpha = alpha;
  report.perm = tested_last_permutation(model.p, h, s);
  const ModelSpec model_p = permuted_model(model, report.perm);
  const CovStructure& s_p = report.perm.permuted_structure;
  const HypothesisSpec& h_p = report.perm.permuted_h;
  const int p = model.p;
  const int r = h.r();
  const bool linear = model.is_linear();
  const std::optional<McConfig> mc_opt = linear ? std::nullopt : std::make_optional(mc);

  // fits in the permuted frame; reported back in user order
  FitOptions fit_options = options.fit_options;
  fit_options.jobs = options.jobs;
  FitResult fit0 = fit(model_p, data, s_p, h_p, mc_opt, std::nullopt, fit_options);
  FitResult fit1 = fit(model_p, data, s_p, std::nullopt, mc_opt, std::nullopt, fit_options);

  // likelihood-ratio statistic with the null fit embedded as a candidate
  double lrt = 0.0, lrt_se = 0.0;
  if (linear) {
    if (fit0.loglik > fit1.loglik) {
      fit1.theta_hat = fit0.theta_hat;
      fit1.loglik = fit0.loglik;
    }
    lrt = -2.0 * (fit0.loglik - fit1.loglik);
  } else {
    McEstimate paired =
        lrt_statistic_mc(fit0.theta_hat, fit1.theta_hat, model_p, data, mc, options.jobs);
    if (paired.value < -eps_opt) {
      // multi-start refit of the alternative before giving up
      for (int restart = 1; restart <= fit_options.restarts && paired.value < -eps_opt;
           ++restart) {
        const Theta jitter_init = detail::jittered_theta(fit1.theta_hat, mc.seed, restart);
        FitResult retry = fit(model_p, data, s_p, std::nullopt, mc_opt, jitter_init, fit_options);
        if (retry.loglik > fit1.loglik) fit1 = retry;
        paired = lrt_statistic_mc(fit0.theta_hat, fit1.theta_hat, model_p, data, mc, options.jobs);
      }
    }
    if (paired.value < 0.0) {
      const McEstimate embedded =
          lrt_statistic_mc(fit0.theta_hat, fit0.theta_hat, model_p, data, mc, options.jobs);
      if (paired.value < -eps_opt) {
        // the null point dominates: use it for the alternative as well
        fit1.theta_hat = fit0.theta_hat;
        fit1.loglik = fit0.loglik;
        paired = embedded;
        report.warnings.push_back("alternative fit fell back to the null optimum");
      }
    }
    lrt = paired.value;
    lrt_se = paired.se;
  }
  if (lrt < 0.0) lrt = 0.0;  // within eps_opt of zero by construction

  // information at the null fit (or the alternative fit on request); for a
  // nonlinear model whose limiting law does not involve V, a noisy indefinite
  // estimate degrades to a warning instead of failing the test
  const Theta eval_user = options.fim_at_alt ? fit1.theta_hat : fit0.theta_hat;
  const Theta eval_p = permute_to_tested_last(eval_user, h, s).first;
  const bool info_required =
      !detail::uses_closed_half_pair(build_cone(p, r, s_p)) ||
      options.weights_mode == WeightsMode::mc || options.weights_mode == WeightsMode::tail;
  if (linear) {
    report.fisher = fim_linear(eval_p, model_p, data);
  } else {
    McConfig fim_mc = mc;
    if (options.fim_mc_samples) fim_mc.M = *options.fim_mc_samples;
    try {
      report.fisher =
          fim_numerical(eval_p, model_p, data, fim_mc, FimSource::numerical_hessian, options.jobs);
      if (report.fisher.psd_clipped)
        report.warnings.push_back("information matrix required a PSD clip");
    } catch (const Error& e) {
      if (info_required) throw;
      report.fisher.matrix.resize(0, 0);
      report.warnings.push_back(std::string("information matrix unavailable: ") + e.what());
    }
  }

  // a vanishing untested variance violates the positive-definiteness condition
  for (int k = 0; k < p - r; ++k) {
    const double scale = std::max(eval_p.gamma.diagonal().maxCoeff(), 1.0);
    if (eval_p.gamma(k, k) < 1e-6 * scale) {
      report.warnings.push_back("untested variance near zero: limiting theory may not apply");
      break;
    }
  }

  LimitDistribution limit =
      limit_distribution(report.fisher, p, r, s_p, options.weights_mode, options.weight_draws,
                         mc.seed, options.jobs);
  report.cone = limit.cone;
  report.tested_corr = limit.tested_corr;
  report.weights = limit.weights;
  report.pvalue_source = limit.source;

  const bool tail_path =
      options.weights_mode == WeightsMode::tail ||
      (options.weights_mode == WeightsMode::automatic && limit.source == "mc_weights");
  if (tail_path) {
    // decision from direct tail sampling, bypassing rank classification
    Eigen::LLT<Eigen::MatrixXd> chol(report.fisher.matrix);
    const Eigen::MatrixXd v_flat = chol.solve(
        Eigen::MatrixXd::Identity(report.fisher.matrix.rows(), report.fisher.matrix.cols()));
    const ConeLayout layout = cone_layout(p, r, s_p);
    const Eigen::MatrixXd v_cone = layout.transform_cov(0.5 * (v_flat + v_flat.transpose()));
    std::vector<double> stats =
        chibar_sample_stats(report.cone, v_cone, options.tail_draws, mc.seed, options.jobs);
    std::sort(stats.begin(), stats.end());
    const auto n_stats = static_cast<long>(stats.size());
    long n_ge = 0;
    for (auto it = stats.rbegin(); it != stats.rend() && *it >= lrt; ++it) ++n_ge;
    report.pvalue = static_cast<double>(n_ge) / static_cast<double>(n_stats);
    const long idx = std::min<long>(
        n_stats - 1, static_cast<long>(std::ceil((1.0 - alpha) * static_cast<double>(n_stats))) - 1);
    report.quantile_at_alpha = stats[static_cast<std::size_t>(std::max<long>(idx, 0))];
    report.pvalue_source = "tail_mc";
  } else {
    report.pvalue = chibar_pvalue(report.weights, lrt);
    report.quantile_at_alpha = chibar_quantile(report.weights, alpha);
  }
  report.lrt = lrt;
  report.lrt_se = lrt_se;
  report.reject = lrt >= report.quantile_at_alpha && report.pvalue <= alpha;
  if (report.quantile_at_alpha == 0.0 && lrt == 0.0) report.reject = report.pvalue <= alpha;

  // report fits in the user's effect order
  report.fit_h0 = fit0;
  report.fit_h0.theta_hat = permute_back(fit0.theta_hat, report.perm);
  report.fit_h1 = fit1;
  report.fit_h1.theta_hat = permute_back(fit1.theta_hat, report.perm);
  return report;
}

// ---------------------------------------------------------------------------
// Limiting distribution at a known parameter point (simulation mode): no
// fits, information evaluated at theta*.
// ---------------------------------------------------------------------------

inline TestReport evaluate_at_theta(const Theta& theta_star, const ModelSpec& model,
                                    const Dataset& data, const CovStructure& s,
                                    const HypothesisSpec& h, double alpha,
                                    const std::optional<McConfig>& mc = std::nullopt,
                                    const TestOptions& options = {}) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("evaluate_at_theta: need 0 < alpha < 1");
  validate_theta(theta_star, s);
  validate_hypothesis(h, model.p, s);
  const int p = model.p;
  const int r = h.r();
  for (int t : h.tested)
    if (theta_star.gamma(t, t) != 0.0)
      throw Error("evaluate_at_theta: theta* must satisfy the null hypothesis");

  TestReport report;
  report.alpha = alpha;
  report.has_fits = false;
  report.perm = tested_last_permutation(p, h, s);
  const ModelSpec model_p = permuted_model(model, report.perm);
  const Theta theta_p = permute_to_tested_last(theta_star, h, s).first;

  // Condition for the limiting theory: untested block positive definite
  if (p - r > 0) {
    const Eigen::MatrixXd untested = theta_p.gamma.topLeftCorner(p - r, p - r);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(untested, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw Error("evaluate_at_theta: untested covariance block must be positive definite");
  }

  const bool info_required =
      !detail::uses_closed_half_pair(build_cone(p, r, report.perm.permuted_structure)) ||
      options.weights_mode == WeightsMode::mc || options.weights_mode == WeightsMode::tail;
  if (model.is_linear()) {
    report.fisher = fim_linear(theta_p, model_p, data);
  } else {
    if (!mc) throw Error("evaluate_at_theta: nonlinear models require a Monte-Carlo config");
    try {
      report.fisher =
          fim_numerical(theta_p, model_p, data, *mc, FimSource::numerical_hessian, options.jobs);
    } catch (const Error& e) {
      if (info_required) throw;
      report.fisher.matrix.resize(0, 0);
      report.warnings.push_back(std::string("information matrix unavailable: ") + e.what());
    }
  }

  LimitDistribution limit =
      limit_distribution(report.fisher, p, r, report.perm.permuted_structure,
                         options.weights_mode, options.weight_draws, mc ? mc->seed : 0,
                         options.jobs);
  report.cone = limit.cone;
  report.tested_corr = limit.tested_corr;
  report.weights = limit.weights;
  report.pvalue_source = limit.source;
  report.quantile_at_alpha = chibar_quantile(report.weights, alpha);
  report.pvalue = 1.0;
  report.reject = false;
  return report;
}

}  // namespace varcomp
