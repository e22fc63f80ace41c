#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "varcomp/core.hpp"
#include "varcomp/likelihood.hpp"
#include "varcomp/linalg.hpp"
#include "varcomp/model.hpp"
#include "varcomp/parallel.hpp"

namespace varcomp {

enum class FimSource { analytic, numerical_hessian, score_outer_product };

// Per-individual Fisher information in the canonical flat ordering of Theta,
// so that the information based on N individuals is N * matrix.
struct FisherInfo {
  Eigen::MatrixXd matrix;
  FimSource source = FimSource::analytic;
  bool psd_clipped = false;
};

// ---------------------------------------------------------------------------
// Analytic information for the linear mixed model, averaged over individuals:
//   I_ab = (dXb/da)' O^{-1} (dXb/db) + 1/2 tr(O^{-1} dO/da O^{-1} dO/db)
// with O = Z Gamma Z' + sigma2 I.
// ---------------------------------------------------------------------------

inline FisherInfo fim_linear(const Theta& theta, const ModelSpec& model, const Dataset& data) {
  if (!model.is_linear()) throw Error("fim_linear: model mean is not linear");
  validate_dataset(data);
  if (!data.balanced()) throw Error("fim_linear: ragged panel");
  const int p = theta.p();
  const auto& s = model.structure;
  const auto pairs = gamma_index_pairs(s, p);
  const int q = p + static_cast<int>(pairs.size()) + 1;
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(q, q);

  const bool shared = data.shared_design();
  Eigen::MatrixXd x_design, z_design, omega_inv;
  std::vector<Eigen::MatrixXd> a_mats;  // O^{-1} dO/dtheta_a for variance params

  auto prepare = [&](const Eigen::VectorXd& x) {
    x_design = model.linear().build_X(x);
    z_design = model.linear().build_Z(x);
    const Eigen::Index n_obs = x.size();
    Eigen::MatrixXd omega = z_design * theta.gamma * z_design.transpose();
    omega.diagonal().array() += theta.sigma2;
    Eigen::LLT<Eigen::MatrixXd> chol(omega);
    if (chol.info() != Eigen::Success) throw Error("fim_linear: singular marginal covariance");
    omega_inv = chol.solve(Eigen::MatrixXd::Identity(n_obs, n_obs));
    omega_inv = (0.5 * (omega_inv + omega_inv.transpose())).eval();
    a_mats.assign(pairs.size() + 1, Eigen::MatrixXd());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto [i, j] = pairs[k];
      Eigen::MatrixXd d_omega = z_design.col(i) * z_design.col(j).transpose();
      if (i != j) d_omega += z_design.col(j) * z_design.col(i).transpose();
      a_mats[k] = omega_inv * d_omega;
    }
    a_mats[pairs.size()] = omega_inv;  // dO/dsigma2 = I
  };

  if (shared) prepare(data.individuals.front().x);
  int count = 0;
  for (const auto& ind : data.individuals) {
    if (!shared) prepare(ind.x);
    for (int a = 0; a < p; ++a)
      for (int b = a; b < p; ++b) {
        const double v = x_design.col(a).dot(omega_inv * x_design.col(b));
        info(a, b) += v;
        if (a != b) info(b, a) += v;
      }
    for (std::size_t a = 0; a < a_mats.size(); ++a)
      for (std::size_t b = a; b < a_mats.size(); ++b) {
        const double v = 0.5 * (a_mats[a] * a_mats[b]).trace();
        info(p + static_cast<int>(a), p + static_cast<int>(b)) += v;
        if (a != b) info(p + static_cast<int>(b), p + static_cast<int>(a)) += v;
      }
    ++count;
    if (shared && count == 1) {
      info *= static_cast<double>(data.n());
      break;
    }
  }
  info /= static_cast<double>(data.n());
  return {info, FimSource::analytic, false};
}

// ---------------------------------------------------------------------------
// Numerical information for arbitrary models via the fixed-seed Monte-Carlo
// log-likelihood. Coordinates sitting on the PSD boundary are differenced
// one-sidedly; perturbed Gamma matrices that dip outside the cone are
// clipped before the square root.
// ---------------------------------------------------------------------------

namespace detail {

// Flags flat coordinates that cannot be perturbed downward: gamma diagonal
// entries at zero (and sigma2 if it were at zero, which validation forbids).
inline std::vector<bool> boundary_coords(const Eigen::VectorXd& flat, const CovStructure& s,
                                         int p) {
  const auto pairs = gamma_index_pairs(s, p);
  std::vector<bool> boundary(static_cast<std::size_t>(flat.size()), false);
  const double scale = std::max(1.0, flat.cwiseAbs().maxCoeff());
  for (std::size_t k = 0; k < pairs.size(); ++k)
    if (pairs[k].first == pairs[k].second &&
        flat[p + static_cast<int>(k)] <= 1e-10 * scale)
      boundary[static_cast<std::size_t>(p) + k] = true;
  return boundary;
}

// Registry of finite-difference evaluation points expressed as integer step
// offsets from the base point, deduplicated so each point is evaluated once.
class FdPoints {
 public:
  FdPoints(const Eigen::VectorXd& base, const Eigen::VectorXd& steps)
      : base_(base), steps_(steps) {
    (void)at({});
  }

  int at(std::vector<std::pair<int, int>> offsets) {  // (coordinate, step count)
    std::sort(offsets.begin(), offsets.end());
    const auto found = index_.find(offsets);
    if (found != index_.end()) return found->second;
    Eigen::VectorXd point = base_;
    for (const auto& [coord, count] : offsets) point[coord] += count * steps_[coord];
    const int id = static_cast<int>(points_.size());
    points_.push_back(std::move(point));
    index_.emplace(std::move(offsets), id);
    return id;
  }

  const std::vector<Eigen::VectorXd>& points() const { return points_; }

 private:
  Eigen::VectorXd base_, steps_;
  std::vector<Eigen::VectorXd> points_;
  std::map<std::vector<std::pair<int, int>>, int> index_;
};

// Per-individual log-mean-likelihood terms at a batch of flat parameter
// points, reusing one set of draws per individual: terms(i, point).
inline Eigen::MatrixXd mc_terms_multi(const std::vector<Eigen::VectorXd>& flats,
                                      const CovStructure& s, int p, const ModelSpec& model,
                                      const Dataset& data, const McConfig& mc, int jobs) {
  struct Prepared {
    Eigen::VectorXd beta;
    Eigen::MatrixXd sqrt_gamma;
    double sigma2;
  };
  std::vector<Prepared> prepared;
  prepared.reserve(flats.size());
  for (const auto& flat : flats) {
    Theta theta = theta_unflatten(flat, s, p);
    if (!(theta.sigma2 > 0.0)) throw Error("fim_numerical: sigma2 not positive at a probe point");
    prepared.push_back({theta.beta, matrix_sqrt_clipped(theta.gamma), theta.sigma2});
  }
  const int n = data.n();
  Eigen::MatrixXd terms(n, static_cast<Eigen::Index>(flats.size()));
  parallel_for(
      static_cast<std::size_t>(n),
      [&](std::size_t i) {
        const Eigen::MatrixXd z = mc_draws(mc.seed, static_cast<int>(i), p, mc.M);
        Eigen::VectorXd logf;
        for (std::size_t k = 0; k < prepared.size(); ++k)
          terms(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
              mc_individual_logmean(model, data.individuals[i], prepared[k].beta,
                                    prepared[k].sqrt_gamma, prepared[k].sigma2, z, logf);
      },
      jobs);
  return terms;
}

}  // namespace detail

inline FisherInfo fim_numerical(const Theta& theta, const ModelSpec& model, const Dataset& data,
                                const McConfig& mc, FimSource method, int jobs = 1) {
  validate_model(model);
  validate_dataset(data);
  const int p = theta.p();
  const auto& s = model.structure;
  const Eigen::VectorXd flat = theta_flatten(theta, s);
  const int q = static_cast<int>(flat.size());
  const auto boundary = detail::boundary_coords(flat, s, p);
  const double n_ind = static_cast<double>(data.n());

  // steps live on each coordinate's natural scale; variance coordinates
  // sitting at zero inherit the scale of the other variances so boundary
  // curvature stays resolvable
  const double gamma_scale =
      std::max(theta.gamma.diagonal().maxCoeff(), theta.sigma2);
  Eigen::VectorXd steps(q);
  for (int a = 0; a < q; ++a) {
    double scale = 1.0 + std::abs(flat[a]);
    if (a >= p && a < q - 1) scale = gamma_scale + std::abs(flat[a]);
    steps[a] = 1e-4 * scale;
  }

  Eigen::MatrixXd info(q, q);
  detail::FdPoints registry(flat, steps);
  auto one_sided = [&](int a) { return boundary[static_cast<std::size_t>(a)]; };

  if (method == FimSource::numerical_hessian) {
    // plan every probe point, then evaluate them in one pass over individuals
    struct DiagPlan {
      int f1, f2;
    };
    struct CrossPlan {
      int p1, p2, p3, p4;
      double denom;
    };
    std::vector<DiagPlan> diag(static_cast<std::size_t>(q));
    std::vector<std::vector<CrossPlan>> cross(static_cast<std::size_t>(q),
                                              std::vector<CrossPlan>(static_cast<std::size_t>(q)));
    const int base = registry.at({});
    for (int a = 0; a < q; ++a) {
      if (one_sided(a))
        diag[static_cast<std::size_t>(a)] = {registry.at({{a, 1}}), registry.at({{a, 2}})};
      else
        diag[static_cast<std::size_t>(a)] = {registry.at({{a, 1}}), registry.at({{a, -1}})};
      for (int b = a + 1; b < q; ++b) {
        CrossPlan plan{};
        if (!one_sided(a) && !one_sided(b)) {
          plan = {registry.at({{a, 1}, {b, 1}}), registry.at({{a, 1}, {b, -1}}),
                  registry.at({{a, -1}, {b, 1}}), registry.at({{a, -1}, {b, -1}}),
                  4.0 * steps[a] * steps[b]};
        } else if (one_sided(a) != one_sided(b)) {
          const int fwd = one_sided(a) ? a : b;
          const int ctr = one_sided(a) ? b : a;
          plan = {registry.at({{fwd, 1}, {ctr, 1}}), registry.at({{fwd, 1}, {ctr, -1}}),
                  registry.at({{ctr, 1}}), registry.at({{ctr, -1}}),
                  2.0 * steps[fwd] * steps[ctr]};
        } else {
          plan = {registry.at({{a, 1}, {b, 1}}), registry.at({{a, 1}}), registry.at({{b, 1}}),
                  base, steps[a] * steps[b]};
        }
        cross[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = plan;
      }
    }
    const Eigen::MatrixXd terms =
        detail::mc_terms_multi(registry.points(), s, p, model, data, mc, jobs);
    const Eigen::VectorXd totals = terms.colwise().sum();
    for (int a = 0; a < q; ++a) {
      const auto& dp = diag[static_cast<std::size_t>(a)];
      if (one_sided(a))
        info(a, a) = (totals[base] - 2.0 * totals[dp.f1] + totals[dp.f2]) / (steps[a] * steps[a]);
      else
        info(a, a) =
            (totals[dp.f1] - 2.0 * totals[base] + totals[dp.f2]) / (steps[a] * steps[a]);
      for (int b = a + 1; b < q; ++b) {
        const auto& cp = cross[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
        const double value =
            (totals[cp.p1] - totals[cp.p2] - totals[cp.p3] + totals[cp.p4]) / cp.denom;
        info(a, b) = value;
        info(b, a) = value;
      }
    }
    info = -info / n_ind;
  } else if (method == FimSource::score_outer_product) {
    std::vector<std::pair<int, int>> plan(static_cast<std::size_t>(q));
    const int base = registry.at({});
    for (int a = 0; a < q; ++a) {
      if (one_sided(a))
        plan[static_cast<std::size_t>(a)] = {registry.at({{a, 1}}), base};
      else
        plan[static_cast<std::size_t>(a)] = {registry.at({{a, 1}}), registry.at({{a, -1}})};
    }
    const Eigen::MatrixXd terms =
        detail::mc_terms_multi(registry.points(), s, p, model, data, mc, jobs);
    const int n = data.n();
    Eigen::MatrixXd scores(n, q);
    for (int a = 0; a < q; ++a) {
      const auto& [hi, lo] = plan[static_cast<std::size_t>(a)];
      const double denom = one_sided(a) ? steps[a] : 2.0 * steps[a];
      scores.col(a) = (terms.col(hi) - terms.col(lo)) / denom;
    }
    info = scores.transpose() * scores / n_ind;
  } else {
    throw Error("fim_numerical: method must be numerical_hessian or score_outer_product");
  }

  info = 0.5 * (info + info.transpose());
  FisherInfo result{info, method, false};
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info, Eigen::EigenvaluesOnly);
  const double lambda_max = es.eigenvalues().maxCoeff();
  if (es.eigenvalues().minCoeff() < -0.05 * std::max(lambda_max, 0.0) || lambda_max <= 0.0)
    throw Error("fim_numerical: information matrix indefinite; increase M or N");
  result.psd_clipped = nearest_psd_clip(result.matrix);
  return result;
}

// ---------------------------------------------------------------------------
// Covariance and correlation of selected flat coordinates of the limiting
// Gaussian: V = R I^{-1} R', C = diag(V)^{-1/2} V diag(V)^{-1/2}.
// ---------------------------------------------------------------------------

inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> extract_correlation(const FisherInfo& info,
                                                                       const Eigen::MatrixXd& r) {
  const int q = static_cast<int>(info.matrix.rows());
  if (r.cols() != q) throw Error("extract_correlation: selection matrix width mismatch");
  for (int i = 0; i < r.rows(); ++i) {
    int ones = 0;
    for (int j = 0; j < q; ++j) {
      if (r(i, j) == 1.0)
        ++ones;
      else if (r(i, j) != 0.0)
        throw Error("extract_correlation: selection matrix must be 0/1");
    }
    if (ones != 1) throw Error("extract_correlation: each selection row picks one coordinate");
  }
  Eigen::LLT<Eigen::MatrixXd> chol(info.matrix);
  if (chol.info() != Eigen::Success)
    throw Error("extract_correlation: information matrix is singular");
  const Eigen::MatrixXd v = r * chol.solve(r.transpose());
  Eigen::VectorXd d = v.diagonal().cwiseSqrt();
  Eigen::MatrixXd c = d.cwiseInverse().asDiagonal() * v * d.cwiseInverse().asDiagonal();
  c.diagonal().setOnes();
  return {v, c};
}

}  // namespace varcomp
