#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "varcomp/cone.hpp"
#include "varcomp/core.hpp"
#include "varcomp/parallel.hpp"
#include "varcomp/rng.hpp"
#include "varcomp/special.hpp"

namespace varcomp {

enum class WeightSource { closed_form, monte_carlo };

// Mixture representation of the chi-bar-square distribution:
//   P(X <= t) = sum_i weights[i] * P(chi2_i <= t),  chi2_0 == 0.
struct ChiBarSq {
  std::vector<double> weights;  // indexed by degrees of freedom
  std::vector<double> se;      // per-weight binomial standard errors (Monte-Carlo source)
  WeightSource source = WeightSource::closed_form;
  long n_samples = 0;

  int max_df() const { return static_cast<int>(weights.size()) - 1; }
  std::vector<int> support(double threshold = 0.0) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(weights.size()); ++i)
      if (weights[i] > threshold) out.push_back(i);
    return out;
  }
};

inline void validate_weights(const ChiBarSq& d, double sum_tol = 1e-9) {
  if (d.weights.empty()) throw Error("chibar: empty weight vector");
  double sum = 0.0;
  for (double w : d.weights) {
    if (w < 0.0) throw Error("chibar: negative weight");
    sum += w;
  }
  double tol = sum_tol;
  if (d.source == WeightSource::monte_carlo) {
    double se2 = 0.0;
    for (double s : d.se) se2 += s * s;
    tol = std::max(tol, 3.0 * std::sqrt(se2));
  }
  if (std::abs(sum - 1.0) > tol) throw Error("chibar: weights do not sum to one");
}

// ---------------------------------------------------------------------------
// Closed-form weights for the orthant cone R_+^r, r <= 3, driven by the
// correlation matrix of the selected coordinates of V = R I^{-1} R'.
// ---------------------------------------------------------------------------

inline ChiBarSq weights_closed_form(const Eigen::MatrixXd& corr) {
  const int r = static_cast<int>(corr.rows());
  if (corr.cols() != r || r < 1 || r > 3)
    throw Error("weights_closed_form: need a correlation matrix with 1 <= r <= 3");
  for (int i = 0; i < r; ++i) {
    if (std::abs(corr(i, i) - 1.0) > 1e-8)
      throw Error("weights_closed_form: diagonal must be one");
    for (int j = 0; j < i; ++j)
      if (std::abs(corr(i, j)) >= 1.0 - 1e-12)
        throw Error("weights_closed_form: |rho| = 1 is degenerate");
  }
  ChiBarSq d;
  d.source = WeightSource::closed_form;
  if (r == 1) {
    d.weights = {0.5, 0.5};
  } else if (r == 2) {
    const double w0 = std::acos(corr(0, 1)) / (2.0 * M_PI);
    d.weights = {w0, 0.5, 0.5 - w0};
  } else {
    auto partial = [&](int i, int j, int k) {
      const double num = corr(i, j) - corr(i, k) * corr(j, k);
      const double den =
          std::sqrt((1.0 - corr(i, k) * corr(i, k)) * (1.0 - corr(j, k) * corr(j, k)));
      if (den <= 1e-12) throw Error("weights_closed_form: degenerate partial correlation");
      return num / den;
    };
    const double w3 = (2.0 * M_PI - std::acos(corr(0, 1)) - std::acos(corr(0, 2)) -
                       std::acos(corr(1, 2))) /
                      (4.0 * M_PI);
    const double w2 = (3.0 * M_PI - std::acos(partial(0, 1, 2)) - std::acos(partial(0, 2, 1)) -
                       std::acos(partial(1, 2, 0))) /
                      (4.0 * M_PI);
    d.weights = {0.5 - w2, 0.5 - w3, w2, w3};
  }
  validate_weights(d, 1e-12);
  return d;
}

inline ChiBarSq weights_closed_form(double rho) {
  Eigen::MatrixXd c(2, 2);
  c << 1.0, rho, rho, 1.0;
  return weights_closed_form(c);
}

// Half/half weights on degrees {df_low, df_low + 1}. This is the exact
// mixture for cones of the form zeros x free(df_low) x psd(1) x zeros
// whatever the covariance V: the single boundary coordinate of the
// projection is active on an event of probability one half.
inline ChiBarSq weights_half_pair(int df_low) {
  ChiBarSq d;
  d.weights.assign(static_cast<std::size_t>(df_low) + 2, 0.0);
  d.weights[static_cast<std::size_t>(df_low)] = 0.5;
  d.weights[static_cast<std::size_t>(df_low) + 1] = 0.5;
  d.source = WeightSource::closed_form;
  return d;
}

// Selection matrix picking the tested-variance coordinates of the flat
// (tested-last) layout; closed-form weight path, diagonal structure only.
inline Eigen::MatrixXd selection_matrix(int p, int r, const CovStructure& s) {
  if (s.kind != CovStructure::Kind::diagonal)
    throw Error("selection_matrix: closed-form weights need a diagonal structure");
  if (r < 1 || r > p) throw Error("selection_matrix: need 1 <= r <= p");
  const int q = flat_dim(s, p);
  Eigen::MatrixXd r_mat = Eigen::MatrixXd::Zero(r, q);
  for (int k = 0; k < r; ++k) r_mat(k, p + (p - r) + k) = 1.0;
  return r_mat;
}

// ---------------------------------------------------------------------------
// Monte-Carlo weights: project Z ~ N(0, V) onto the cone in the V^{-1}
// metric and tally the effective dimension of the projection.
// ---------------------------------------------------------------------------

inline ChiBarSq weights_mc(const Cone& cone, const Eigen::MatrixXd& v, long n_draws,
                           std::uint64_t seed, int jobs = 1) {
  if (n_draws < 1) throw Error("weights_mc: need at least one draw");
  const int d = cone.total_dim();
  const ConeProjector projector(cone, v);
  const Eigen::MatrixXd root = Eigen::LLT<Eigen::MatrixXd>(v).matrixL();
  const int max_df = cone.max_df();

  const int n_chunks = std::max(1, jobs * 8);
  const long chunk_size = (n_draws + n_chunks - 1) / n_chunks;
  std::vector<std::vector<long>> counts(static_cast<std::size_t>(n_chunks),
                                        std::vector<long>(static_cast<std::size_t>(max_df) + 1, 0));
  std::vector<long> failures(static_cast<std::size_t>(n_chunks), 0);

  parallel_for(
      static_cast<std::size_t>(n_chunks),
      [&](std::size_t chunk) {
        const long begin = static_cast<long>(chunk) * chunk_size;
        const long end = std::min(n_draws, begin + chunk_size);
        for (long t = begin; t < end; ++t) {
          rng::Stream stream(seed, rng::StreamKind::weight_draw, static_cast<std::uint64_t>(t));
          const Eigen::VectorXd z = root * stream.normal_vector(d);
          try {
            const Projection pr = projector.project(z);
            const int df = effective_dimension(pr.proj, cone);
            ++counts[chunk][static_cast<std::size_t>(df)];
          } catch (const Error&) {
            ++failures[chunk];
          }
        }
      },
      jobs);

  long n_fail = 0;
  for (long f : failures) n_fail += f;
  if (n_fail * 1000 > n_draws)
    throw Error("weights_mc: projection failed on more than 0.1% of draws");
  const long n_ok = n_draws - n_fail;

  ChiBarSq out;
  out.source = WeightSource::monte_carlo;
  out.n_samples = n_ok;
  out.weights.assign(static_cast<std::size_t>(max_df) + 1, 0.0);
  out.se.assign(static_cast<std::size_t>(max_df) + 1, 0.0);
  for (int i = 0; i <= max_df; ++i) {
    long c = 0;
    for (const auto& chunk : counts) c += chunk[static_cast<std::size_t>(i)];
    const double w = static_cast<double>(c) / static_cast<double>(n_ok);
    out.weights[static_cast<std::size_t>(i)] = w;
    out.se[static_cast<std::size_t>(i)] = std::sqrt(w * (1.0 - w) / static_cast<double>(n_ok));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CDF, p-value and quantiles of the mixture.
// ---------------------------------------------------------------------------

inline double chibar_cdf(const ChiBarSq& d, double t) {
  validate_weights(d, 1e-6);
  if (t < 0.0) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < static_cast<int>(d.weights.size()); ++i)
    acc += d.weights[static_cast<std::size_t>(i)] * special::chi2_cdf(i, t);
  return acc;
}

inline double chibar_pvalue(const ChiBarSq& d, double t) { return 1.0 - chibar_cdf(d, t); }

// Infimum q with CDF(q) >= 1 - alpha; equals 0 exactly when w_0 >= 1 - alpha.
inline double chibar_quantile(const ChiBarSq& d, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("chibar_quantile: need 0 < alpha < 1");
  validate_weights(d, 1e-6);
  const double target = 1.0 - alpha;
  if (chibar_cdf(d, 0.0) >= target) return 0.0;
  double lo = 0.0, hi = 1000.0;
  if (chibar_cdf(d, hi) < target) throw Error("chibar_quantile: quantile beyond search bracket");
  while (hi - lo > 1e-9) {
    const double mid = 0.5 * (lo + hi);
    if (chibar_cdf(d, mid) >= target)
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Direct sampling of the chi-bar-square statistic
//   Z' V^{-1} Z - min_{theta in C} (Z - theta)' V^{-1} (Z - theta),
// for tail probabilities without weight classification.
// ---------------------------------------------------------------------------

inline double chibar_sample_stat(const Cone& cone, const Eigen::MatrixXd& v, std::uint64_t seed,
                                 std::uint64_t draw_index = 0) {
  const ConeProjector projector(cone, v);
  const Eigen::MatrixXd root = Eigen::LLT<Eigen::MatrixXd>(v).matrixL();
  rng::Stream stream(seed, rng::StreamKind::tail_draw, draw_index);
  const Eigen::VectorXd z = root * stream.normal_vector(cone.total_dim());
  const Projection pr = projector.project(z);
  return std::max(projector.metric_norm2(z) - pr.dist2, 0.0);
}

inline std::vector<double> chibar_sample_stats(const Cone& cone, const Eigen::MatrixXd& v,
                                               long n_draws, std::uint64_t seed, int jobs = 1) {
  const ConeProjector projector(cone, v);
  const Eigen::MatrixXd root = Eigen::LLT<Eigen::MatrixXd>(v).matrixL();
  std::vector<double> stats(static_cast<std::size_t>(n_draws));
  parallel_for(
      static_cast<std::size_t>(n_draws),
      [&](std::size_t t) {
        rng::Stream stream(seed, rng::StreamKind::tail_draw, static_cast<std::uint64_t>(t));
        const Eigen::VectorXd z = root * stream.normal_vector(cone.total_dim());
        const Projection pr = projector.project(z);
        stats[t] = std::max(projector.metric_norm2(z) - pr.dist2, 0.0);
      },
      jobs);
  return stats;
}

}  // namespace varcomp
