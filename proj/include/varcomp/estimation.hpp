#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "varcomp/core.hpp"
#include "varcomp/likelihood.hpp"
#include "varcomp/model.hpp"
#include "varcomp/optimize.hpp"
#include "varcomp/parallel.hpp"
#include "varcomp/rng.hpp"

namespace varcomp {

struct FitOptions {
  opt::Options optimizer{};
  int restarts = 3;  // jittered re-runs when convergence fails
  int jobs = 1;      // worker threads for per-individual likelihood terms
  bool record_trace = false;
};

struct FitResult {
  Theta theta_hat;
  double loglik = 0.0;
  double loglik_se = 0.0;  // 0 on the exact linear path
  bool converged = false;
  int n_iter = 0;
  std::vector<double> trace;  // objective values per accepted evaluation
};

namespace detail {

// Lower-triangular factor of a PSD matrix with LL' = A; zero pivots are
// tolerated (the corresponding column is zeroed), so boundary values of
// Gamma round-trip exactly.
inline Eigen::MatrixXd psd_cholesky(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  const double scale = std::max(a.diagonal().maxCoeff(), 0.0);
  const double tol = 1e-12 * std::max(scale, 1.0);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (d > tol) {
      l(j, j) = std::sqrt(d);
      for (int i = j + 1; i < n; ++i) {
        double v = a(i, j);
        for (int k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
        l(i, j) = v / l(j, j);
      }
    }
  }
  return l;
}

// Free coordinates of the optimization: beta, the lower-triangular factor
// entries of the non-frozen blocks of Gamma (Gamma = LL', so the boundary
// Gamma = 0 is attainable), and log sigma2. Under a null hypothesis the
// tested effects must be the trailing ones; their factor rows are dropped.
class ParamLayout {
 public:
  ParamLayout(int p, const CovStructure& structure, int n_tested_trailing)
      : p_(p), structure_(structure), r_(n_tested_trailing) {
    const auto blocks = structure.blocks_for(p);
    int offset = 0;
    for (int b : blocks) {
      const bool frozen = offset >= p - r_;
      const bool cut = !frozen && offset + b > p - r_;
      if (cut && structure.kind == CovStructure::Kind::block_diagonal)
        throw Error("fit: tested effects must align with covariance blocks");
      if (!frozen)
        for (int j = 0; j < b; ++j)
          for (int i = j; i < b; ++i)
            if (offset + i < p - r_) entries_.emplace_back(offset + i, offset + j);
      offset += b;
    }
  }

  int size() const { return p_ + static_cast<int>(entries_.size()) + 1; }

  Eigen::VectorXd pack(const Theta& theta) const {
    const Eigen::MatrixXd l = psd_cholesky(theta.gamma);
    Eigen::VectorXd x(size());
    x.head(p_) = theta.beta;
    for (std::size_t k = 0; k < entries_.size(); ++k)
      x[p_ + static_cast<int>(k)] = l(entries_[k].first, entries_[k].second);
    x[size() - 1] = std::log(theta.sigma2);
    return x;
  }

  Theta unpack(const Eigen::VectorXd& x) const {
    Theta theta;
    theta.beta = x.head(p_);
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(p_, p_);
    for (std::size_t k = 0; k < entries_.size(); ++k)
      l(entries_[k].first, entries_[k].second) = x[p_ + static_cast<int>(k)];
    theta.gamma = l * l.transpose();
    theta.sigma2 = std::exp(x[size() - 1]);
    return theta;
  }

 private:
  int p_;
  CovStructure structure_;
  int r_;
  std::vector<std::pair<int, int>> entries_;
};

// Exact linear objective. With a shared design the per-individual sum
// collapses onto the sufficient statistics (ybar, S), making an evaluation
// O(J^3) regardless of N.
class LinearObjective {
 public:
  LinearObjective(const ModelSpec& model, const Dataset& data, const ParamLayout& layout)
      : model_(model), data_(data), layout_(layout) {
    shared_ = data.shared_design();
    if (shared_) {
      const auto& x = data.individuals.front().x;
      x_design_ = model.linear().build_X(x);
      z_design_ = model.linear().build_Z(x);
      const Eigen::Index n_obs = x.size();
      ybar_ = Eigen::VectorXd::Zero(n_obs);
      for (const auto& ind : data.individuals) ybar_ += ind.y;
      ybar_ /= data.n();
      scatter_ = Eigen::MatrixXd::Zero(n_obs, n_obs);
      for (const auto& ind : data.individuals) {
        const Eigen::VectorXd d = ind.y - ybar_;
        scatter_.noalias() += d * d.transpose();
      }
      scatter_ /= data.n();
    }
  }

  double operator()(const Eigen::VectorXd& x) const {
    const Theta theta = layout_.unpack(x);
    if (!shared_) return -loglik_linear(theta, model_, data_);
    Eigen::MatrixXd omega = z_design_ * theta.gamma * z_design_.transpose();
    omega.diagonal().array() += theta.sigma2;
    Eigen::LLT<Eigen::MatrixXd> chol(omega);
    if (chol.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const double log_det = 2.0 * chol.matrixLLT().diagonal().array().log().sum();
    const Eigen::VectorXd resid = ybar_ - x_design_ * theta.beta;
    const double quad = resid.dot(chol.solve(resid));
    const double trace = chol.solve(scatter_).trace();
    const double n_obs = static_cast<double>(ybar_.size());
    return 0.5 * data_.n() * (n_obs * std::log(2.0 * M_PI) + log_det + trace + quad);
  }

 private:
  const ModelSpec& model_;
  const Dataset& data_;
  const ParamLayout& layout_;
  bool shared_ = false;
  Eigen::MatrixXd x_design_, z_design_, scatter_;
  Eigen::VectorXd ybar_;
};

// Fixed-seed Monte-Carlo objective; the standard-normal draws are generated
// once, so the function is deterministic and smooth in theta.
class McObjective {
 public:
  // `order` (optional) rewires draw components to permuted effect positions,
  // keeping the objective identical to the user-order one.
  McObjective(const ModelSpec& model, const Dataset& data, const McConfig& mc,
              const ParamLayout& layout, int jobs, const std::vector<int>& order = {})
      : model_(model), data_(data), layout_(layout), jobs_(jobs) {
    draws_.reserve(static_cast<std::size_t>(data.n()));
    for (int i = 0; i < data.n(); ++i) {
      Eigen::MatrixXd z = detail::mc_draws(mc.seed, i, model.p, mc.M);
      if (!order.empty()) {
        Eigen::MatrixXd zp(z.rows(), z.cols());
        for (int k = 0; k < model.p; ++k) zp.row(k) = z.row(order[static_cast<std::size_t>(k)]);
        z = std::move(zp);
      }
      draws_.push_back(std::move(z));
    }
  }

  double operator()(const Eigen::VectorXd& x) const {
    const Theta theta = layout_.unpack(x);
    Eigen::MatrixXd sqrt_gamma;
    try {
      sqrt_gamma = matrix_sqrt_psd(theta.gamma);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
    const int n = data_.n();
    Eigen::VectorXd terms(n);
    try {
      if (jobs_ <= 1) {
        for (int i = 0; i < n; ++i)
          terms[i] = detail::mc_individual_logmean(model_, data_.individuals[static_cast<std::size_t>(i)],
                                                   theta.beta, sqrt_gamma, theta.sigma2,
                                                   draws_[static_cast<std::size_t>(i)], logf_,
                                                   scratch_);
      } else {
        parallel_for(
            static_cast<std::size_t>(n),
            [&](std::size_t i) {
              Eigen::VectorXd logf;
              terms[static_cast<Eigen::Index>(i)] = detail::mc_individual_logmean(
                  model_, data_.individuals[i], theta.beta, sqrt_gamma, theta.sigma2, draws_[i],
                  logf);
            },
            jobs_);
      }
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
    return -terms.sum();
  }

 private:
  const ModelSpec& model_;
  const Dataset& data_;
  const ParamLayout& layout_;
  int jobs_;
  std::vector<Eigen::MatrixXd> draws_;
  mutable detail::McScratch scratch_;
  mutable Eigen::VectorXd logf_;
};

inline Eigen::VectorXd jittered(const Eigen::VectorXd& x, std::uint64_t seed, int restart) {
  rng::Stream stream(seed, rng::StreamKind::jitter, static_cast<std::uint64_t>(restart));
  Eigen::VectorXd out = x;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double u = 2.0 * stream.next_unit() - 1.0;
    out[i] = x[i] * (1.0 + 0.2 * u) + (x[i] == 0.0 ? 0.05 * u : 0.0);
  }
  return out;
}

inline Theta jittered_theta(const Theta& theta, std::uint64_t seed, int restart) {
  rng::Stream stream(seed, rng::StreamKind::jitter, 1000 + static_cast<std::uint64_t>(restart));
  Theta out = theta;
  for (Eigen::Index i = 0; i < out.beta.size(); ++i) {
    const double u = 2.0 * stream.next_unit() - 1.0;
    out.beta[i] = theta.beta[i] * (1.0 + 0.2 * u) + (theta.beta[i] == 0.0 ? 0.05 * u : 0.0);
  }
  Eigen::MatrixXd l = psd_cholesky(theta.gamma);
  for (Eigen::Index j = 0; j < l.cols(); ++j)
    for (Eigen::Index i = j; i < l.rows(); ++i)
      l(i, j) *= 1.0 + 0.2 * (2.0 * stream.next_unit() - 1.0);
  out.gamma = l * l.transpose();
  out.sigma2 = theta.sigma2 * (1.0 + 0.2 * (2.0 * stream.next_unit() - 1.0));
  return out;
}

}  // namespace detail

// Pooled/per-individual summary initialization. Returns the starting point
// for fit(); `degenerate` reports the unit-variance fallback.
inline Theta default_init(const ModelSpec& model, const Dataset& data, const CovStructure& s,
                          const std::optional<HypothesisSpec>& h = std::nullopt,
                          bool* degenerate = nullptr) {
  validate_dataset(data);
  const int p = model.p;
  if (degenerate) *degenerate = false;

  double y_var = 0.0;
  {
    double sum = 0.0, sum2 = 0.0;
    int count = 0;
    for (const auto& ind : data.individuals) {
      sum += ind.y.sum();
      sum2 += ind.y.squaredNorm();
      count += static_cast<int>(ind.y.size());
    }
    const double mean = sum / count;
    y_var = std::max(sum2 / count - mean * mean, 0.0);
  }

  Theta theta;
  theta.beta = Eigen::VectorXd::Zero(p);
  theta.gamma = Eigen::MatrixXd::Zero(p, p);
  theta.sigma2 = 1.0;

  const bool constant_y = y_var < 1e-12;
  std::vector<Eigen::VectorXd> per_ind;
  double resid_ss = 0.0;
  int resid_n = 0;

  const bool curve_init = !model.is_linear() && model.nonlinear().name == "logistic";
  if (constant_y) {
    if (degenerate) *degenerate = true;
  } else if (curve_init) {
    for (const auto& ind : data.individuals) {
      Eigen::VectorXd est(p);
      const double top = ind.y.maxCoeff();
      est[0] = top;
      double half_x = ind.x[ind.x.size() - 1];
      for (Eigen::Index j = 0; j < ind.y.size(); ++j)
        if (ind.y[j] >= 0.5 * top) {
          half_x = ind.x[j];
          break;
        }
      est[1] = half_x;
      if (p >= 3) est[2] = (ind.x.maxCoeff() - ind.x.minCoeff()) / 5.0;
      per_ind.push_back(est);
    }
  } else {
    // pooled and per-individual least squares on the (possibly polynomial) design
    auto design = [&](const Eigen::VectorXd& x) {
      if (model.is_linear()) return model.linear().build_X(x);
      Eigen::MatrixXd m(x.size(), p);
      m.col(0).setOnes();
      for (int k = 1; k < p; ++k) m.col(k) = m.col(k - 1).cwiseProduct(x);
      return m;
    };
    for (const auto& ind : data.individuals) {
      const Eigen::MatrixXd x_design = design(ind.x);
      if (ind.y.size() >= p) {
        per_ind.push_back(x_design.colPivHouseholderQr().solve(ind.y));
      }
    }
  }

  if (!constant_y && !per_ind.empty()) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
    for (const auto& est : per_ind) mean += est;
    mean /= static_cast<double>(per_ind.size());
    theta.beta = mean;
    Eigen::VectorXd var = Eigen::VectorXd::Zero(p);
    for (const auto& est : per_ind) var += (est - mean).cwiseAbs2();
    var /= std::max<double>(1.0, static_cast<double>(per_ind.size()) - 1.0);
    for (int k = 0; k < p; ++k) theta.gamma(k, k) = 0.5 * var[k];
    // residual variance around the per-individual curves
    std::size_t idx = 0;
    Eigen::VectorXd fitted;
    for (const auto& ind : data.individuals) {
      if (idx >= per_ind.size()) break;
      if (model.is_linear()) {
        fitted = model.linear().build_X(ind.x) * per_ind[idx];
      } else if (curve_init) {
        model.conditional_mean(per_ind[idx], ind.x, fitted);
      } else {
        model.conditional_mean(per_ind[idx], ind.x, fitted);
      }
      resid_ss += (ind.y - fitted).squaredNorm();
      resid_n += static_cast<int>(ind.y.size());
      ++idx;
    }
    theta.sigma2 = resid_n > 0 ? std::max(resid_ss / resid_n, 1e-4 * y_var + 1e-12) : y_var;
  } else {
    if (degenerate) *degenerate = true;
    theta.gamma = Eigen::MatrixXd::Identity(p, p);
    theta.sigma2 = 1.0;
    if (!per_ind.empty()) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
      for (const auto& est : per_ind) mean += est;
      theta.beta = mean / static_cast<double>(per_ind.size());
    } else if (constant_y && data.total_obs() > 0) {
      theta.beta[0] = data.individuals.front().y[0];
    }
  }

  if (h) {
    for (int t : h->tested) {
      theta.gamma.row(t).setZero();
      theta.gamma.col(t).setZero();
    }
  }
  // conform to the declared structure
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(p, p);
  int offset = 0;
  for (int b : s.blocks_for(p)) {
    mask.block(offset, offset, b, b).setOnes();
    offset += b;
  }
  theta.gamma = theta.gamma.cwiseProduct(mask);
  return theta;
}

// Maximum likelihood over Theta (h absent) or over the null space with the
// tested variances and covariances frozen at zero (h present). Nonlinear
// means require a Monte-Carlo configuration; the resulting objective is
// deterministic in the seed.
inline FitResult fit(const ModelSpec& model, const Dataset& data, const CovStructure& s,
                     const std::optional<HypothesisSpec>& h = std::nullopt,
                     const std::optional<McConfig>& mc = std::nullopt,
                     const std::optional<Theta>& init = std::nullopt,
                     const FitOptions& options = {}) {
  validate_model(model);
  validate_dataset(data);
  if (!model.is_linear() && !mc) throw Error("fit: nonlinear models require a Monte-Carlo config");

  // work internally with the tested effects last
  EffectPermutation perm;
  bool permuted = false;
  if (h) {
    perm = tested_last_permutation(model.p, *h, s);
    permuted = !perm.is_identity();
  }
  const ModelSpec internal_model = permuted ? permuted_model(model, perm) : model;
  const CovStructure& internal_s = h ? perm.permuted_structure : s;
  const int r = h ? h->r() : 0;

  const detail::ParamLayout layout(model.p, internal_s, r);

  Theta start = init ? *init : default_init(model, data, s, h);
  validate_theta(start, s);
  if (h)
    for (int t : h->tested)
      if (start.gamma(t, t) != 0.0) throw Error("fit: init violates the null constraint");
  Theta internal_start = start;
  if (permuted) internal_start = permute_to_tested_last(start, *h, s).first;

  std::optional<detail::LinearObjective> linear_obj;
  std::optional<detail::McObjective> mc_obj;
  opt::Objective objective;
  if (model.is_linear()) {
    linear_obj.emplace(internal_model, data, layout);
    objective = [&](const Eigen::VectorXd& x) { return (*linear_obj)(x); };
  } else {
    mc_obj.emplace(internal_model, data, *mc, layout, options.jobs,
                   permuted ? perm.order : std::vector<int>{});
    objective = [&](const Eigen::VectorXd& x) { return (*mc_obj)(x); };
  }

  std::vector<double> trace;
  opt::Objective traced = objective;
  if (options.record_trace) {
    traced = [&](const Eigen::VectorXd& x) {
      const double v = objective(x);
      trace.push_back(v);
      return v;
    };
  }

  Eigen::VectorXd x0 = layout.pack(internal_start);
  if (!std::isfinite(objective(x0))) {
    bool ok = false;
    for (int restart = 1; restart <= options.restarts && !ok; ++restart) {
      const Eigen::VectorXd xj = detail::jittered(x0, mc ? mc->seed : 0, restart);
      if (std::isfinite(objective(xj))) {
        x0 = xj;
        ok = true;
      }
    }
    if (!ok) throw Error("fit: objective not finite at the initial point");
  }

  opt::Result best = opt::minimize(traced, x0, options.optimizer);
  int total_evals = best.n_evals;
  for (int restart = 1; restart <= options.restarts && !best.converged; ++restart) {
    const Eigen::VectorXd xj = detail::jittered(x0, mc ? mc->seed : 0, restart);
    opt::Result alt = opt::minimize(traced, xj, options.optimizer);
    total_evals += alt.n_evals;
    if (alt.f < best.f || (alt.converged && !best.converged)) best = alt;
  }

  Theta internal_hat = layout.unpack(best.x);
  Theta theta_hat = permuted ? permute_back(internal_hat, perm) : internal_hat;

  FitResult result;
  result.theta_hat = theta_hat;
  result.converged = best.converged;
  result.n_iter = total_evals;
  result.trace = std::move(trace);
  if (model.is_linear()) {
    result.loglik = loglik_linear(theta_hat, model, data);
    result.loglik_se = 0.0;
  } else {
    const McEstimate est = loglik_mc(theta_hat, model, data, *mc, options.jobs);
    result.loglik = est.value;
    result.loglik_se = est.se;
  }
  return result;
}

}  // namespace varcomp
