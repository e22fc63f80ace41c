#pragma once

#include <cmath>
#include <optional>

#include <Eigen/Dense>

#include "varcomp/core.hpp"
#include "varcomp/linalg.hpp"
#include "varcomp/model.hpp"
#include "varcomp/parallel.hpp"
#include "varcomp/rng.hpp"

namespace varcomp {

// Monte-Carlo configuration for marginal-likelihood estimation. Draws are
// keyed by (seed, individual, draw index), so enlarging M extends a sample
// instead of replacing it and results do not depend on scheduling.
struct McConfig {
  int M = 10000;
  std::uint64_t seed = 0;
  std::optional<double> target_se;  // escalate M until the LRT se drops below this
};

struct McEstimate {
  double value = 0.0;
  double se = 0.0;
};

namespace detail {

inline double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf stays -inf
  return m + std::log((v.array() - m).exp().sum());
}

// Standard-normal draw matrix (p x M) for one individual.
inline Eigen::MatrixXd mc_draws(std::uint64_t seed, int individual, int p, int m_samples) {
  Eigen::MatrixXd z(p, m_samples);
  for (int m = 0; m < m_samples; ++m) {
    rng::Stream stream(seed, rng::StreamKind::mc_draw, static_cast<std::uint64_t>(individual),
                       static_cast<std::uint64_t>(m));
    for (int k = 0; k < p; ++k) z(k, m) = stream.next_normal();
  }
  return z;
}

// reusable buffers for the draw-batched likelihood evaluation
struct McScratch {
  Eigen::MatrixXd phi;
  Eigen::MatrixXd mean;
};

// log of (1/M) sum_m f(y | phi_m) for one individual, phi_m = beta + G^{1/2} z_m.
// All sums run in the log domain. logf receives the per-draw log densities.
inline double mc_individual_logmean(const ModelSpec& model, const Individual& ind,
                                    const Eigen::VectorXd& beta,
                                    const Eigen::MatrixXd& sqrt_gamma, double sigma2,
                                    const Eigen::MatrixXd& z_draws, Eigen::VectorXd& logf,
                                    McScratch& scratch) {
  const int m_samples = static_cast<int>(z_draws.cols());
  const Eigen::Index n_obs = ind.y.size();
  const double c0 = -0.5 * static_cast<double>(n_obs) * std::log(2.0 * M_PI * sigma2);
  scratch.phi.resize(beta.size(), m_samples);
  scratch.phi.noalias() = sqrt_gamma * z_draws;
  scratch.phi.colwise() += beta;
  model.conditional_mean_batch(scratch.phi, ind.x, scratch.mean);
  scratch.mean.colwise() -= ind.y;
  logf = (c0 - (0.5 / sigma2) * scratch.mean.colwise().squaredNorm().array()).transpose();
  const double lse = log_sum_exp(logf);
  if (!std::isfinite(lse))
    throw Error("likelihood underflow for individual '" + ind.id +
                "' even in the log domain; check data scale and sigma2");
  return lse - std::log(static_cast<double>(m_samples));
}

inline double mc_individual_logmean(const ModelSpec& model, const Individual& ind,
                                    const Eigen::VectorXd& beta,
                                    const Eigen::MatrixXd& sqrt_gamma, double sigma2,
                                    const Eigen::MatrixXd& z_draws, Eigen::VectorXd& logf) {
  McScratch scratch;
  return mc_individual_logmean(model, ind, beta, sqrt_gamma, sigma2, z_draws, logf, scratch);
}

// Variance of log((1/M) sum exp(logf)) by the delta method, computed from
// the normalized weights so it stays finite under heavy underflow.
inline double mc_logmean_variance(const Eigen::VectorXd& logf) {
  const int m_samples = static_cast<int>(logf.size());
  if (m_samples < 2) return 0.0;
  const double lse = log_sum_exp(logf);
  double acc = 0.0;
  for (int m = 0; m < m_samples; ++m) {
    const double ratio = static_cast<double>(m_samples) * std::exp(logf[m] - lse);
    acc += (ratio - 1.0) * (ratio - 1.0);
  }
  return acc / (static_cast<double>(m_samples) * (m_samples - 1.0));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Exact marginal log-likelihood for linear mixed models:
//   y_i ~ N(X_i beta, Z_i Gamma Z_i' + sigma2 I)
// ---------------------------------------------------------------------------

inline double loglik_linear(const Theta& theta, const ModelSpec& model, const Dataset& data) {
  if (!model.is_linear()) throw Error("loglik_linear: model mean is not linear");
  const auto& lm = model.linear();
  const bool shared = data.shared_design();

  Eigen::MatrixXd x_design, z_design;
  Eigen::LLT<Eigen::MatrixXd> chol;
  double log_det = 0.0;

  auto factor_for = [&](const Eigen::VectorXd& x) {
    x_design = lm.build_X(x);
    z_design = lm.build_Z(x);
    Eigen::MatrixXd omega = z_design * theta.gamma * z_design.transpose();
    omega.diagonal().array() += theta.sigma2;
    chol.compute(omega);
    if (chol.info() != Eigen::Success)
      throw Error("loglik_linear: marginal covariance numerically singular (sigma2 = " +
                  std::to_string(theta.sigma2) + ", |Omega| ~ " +
                  std::to_string(omega.norm()) + ")");
    log_det = 2.0 * chol.matrixLLT().diagonal().array().log().sum();
  };

  if (shared) factor_for(data.individuals.front().x);

  double total = 0.0;
  for (const auto& ind : data.individuals) {
    if (!shared) factor_for(ind.x);
    const Eigen::Index n_obs = ind.y.size();
    const Eigen::VectorXd resid = ind.y - x_design * theta.beta;
    const double quad = resid.dot(chol.solve(resid));
    total += -0.5 * (static_cast<double>(n_obs) * std::log(2.0 * M_PI) + log_det + quad);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Monte-Carlo marginal log-likelihood, sum over individuals of
//   log (1/M) sum_m f(y_i | beta + Gamma^{1/2} Z_i^m)
// ---------------------------------------------------------------------------

inline McEstimate loglik_mc(const Theta& theta, const ModelSpec& model, const Dataset& data,
                            const McConfig& mc, int jobs = 1) {
  if (mc.M < 1) throw Error("loglik_mc: M must be at least 1");
  const int n = data.n();
  const Eigen::MatrixXd sqrt_gamma = matrix_sqrt_psd(theta.gamma);
  Eigen::VectorXd terms(n), variances(n);
  parallel_for(
      static_cast<std::size_t>(n),
      [&](std::size_t i) {
        const Eigen::MatrixXd z = detail::mc_draws(mc.seed, static_cast<int>(i), theta.p(), mc.M);
        Eigen::VectorXd logf;
        terms[static_cast<Eigen::Index>(i)] = detail::mc_individual_logmean(
            model, data.individuals[i], theta.beta, sqrt_gamma, theta.sigma2, z, logf);
        variances[static_cast<Eigen::Index>(i)] = detail::mc_logmean_variance(logf);
      },
      jobs);
  return {terms.sum(), std::sqrt(variances.sum())};
}

// ---------------------------------------------------------------------------
// Paired Monte-Carlo estimate of the likelihood ratio statistic. The same
// standard-normal draws Z_i^m feed both hypotheses (common random numbers):
//   -2 sum_i log( sum_m f(y_i | beta0 + G0^{1/2} Z_i^m) /
//                 sum_m f(y_i | beta1 + G1^{1/2} Z_i^m) )
// ---------------------------------------------------------------------------

inline McEstimate lrt_statistic_mc(const Theta& theta0, const Theta& theta1,
                                   const ModelSpec& model, const Dataset& data,
                                   const McConfig& mc, int jobs = 1) {
  if (mc.M < 1) throw Error("lrt_statistic_mc: M must be at least 1");
  if (theta0.p() != theta1.p()) throw Error("lrt_statistic_mc: dimension mismatch");
  // identical parameters make every ratio term exactly one
  if (theta0.beta == theta1.beta && theta0.gamma == theta1.gamma &&
      theta0.sigma2 == theta1.sigma2)
    return {0.0, 0.0};
  const int n = data.n();
  const Eigen::MatrixXd sqrt_gamma0 = matrix_sqrt_psd(theta0.gamma);
  const Eigen::MatrixXd sqrt_gamma1 = matrix_sqrt_psd(theta1.gamma);

  int m_samples = mc.M;
  const int max_escalations = 12;
  for (int attempt = 0;; ++attempt) {
    McConfig cur = mc;
    cur.M = m_samples;
    Eigen::VectorXd diffs(n), variances(n);
    parallel_for(
        static_cast<std::size_t>(n),
        [&](std::size_t i) {
          const Eigen::MatrixXd z =
              detail::mc_draws(cur.seed, static_cast<int>(i), theta0.p(), cur.M);
          const Individual& ind = data.individuals[i];
          Eigen::VectorXd logf0, logf1;
          const double lm0 = detail::mc_individual_logmean(model, ind, theta0.beta, sqrt_gamma0,
                                                           theta0.sigma2, z, logf0) +
                             std::log(static_cast<double>(cur.M));
          const double lm1 = detail::mc_individual_logmean(model, ind, theta1.beta, sqrt_gamma1,
                                                           theta1.sigma2, z, logf1) +
                             std::log(static_cast<double>(cur.M));
          diffs[static_cast<Eigen::Index>(i)] = lm0 - lm1;
          // shared-draw delta method on the log ratio
          double acc = 0.0;
          for (int m = 0; m < cur.M; ++m) {
            const double r0 = cur.M * std::exp(logf0[m] - lm0);
            const double r1 = cur.M * std::exp(logf1[m] - lm1);
            acc += (r0 - r1) * (r0 - r1);
          }
          variances[static_cast<Eigen::Index>(i)] =
              cur.M < 2 ? 0.0 : acc / (static_cast<double>(cur.M) * (cur.M - 1.0));
        },
        jobs);
    const double lrt = -2.0 * diffs.sum();
    const double se = 2.0 * std::sqrt(variances.sum());
    if (!mc.target_se || se <= *mc.target_se || attempt >= max_escalations) return {lrt, se};
    m_samples *= 2;
  }
}

}  // namespace varcomp
