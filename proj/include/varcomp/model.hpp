#pragma once

#include <functional>
#include <string>
#include <utility>
#include <variant>

#include <Eigen/Dense>

#include "varcomp/core.hpp"

namespace varcomp {

// Mean structure of the mixed model. The linear case carries design-matrix
// builders; the nonlinear case evaluates g(phi, x) directly. Built-in
// nonlinear means are the logistic growth curve and a quadratic-in-x mean
// that mirrors the linear model through the Monte-Carlo path.

struct LinearMean {
  int p_fixed = 0;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& x)> build_X;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& x)> build_Z;
  bool x_equals_z = false;
};

struct NonlinearMean {
  std::string name;
  int n_params = 0;
  std::function<void(const Eigen::VectorXd& phi, const Eigen::VectorXd& x, Eigen::VectorXd& out)>
      eval;
  // columnwise evaluation over a batch of parameter vectors (phi is p x M,
  // out is J x M); optional, used by the Monte-Carlo hot paths
  std::function<void(const Eigen::MatrixXd& phi, const Eigen::VectorXd& x, Eigen::MatrixXd& out)>
      eval_batch;
};

struct ModelSpec {
  std::variant<LinearMean, NonlinearMean> mean;
  int p = 0;  // number of random effects
  CovStructure structure;

  bool is_linear() const { return std::holds_alternative<LinearMean>(mean); }
  const LinearMean& linear() const { return std::get<LinearMean>(mean); }
  const NonlinearMean& nonlinear() const { return std::get<NonlinearMean>(mean); }

  // Conditional mean given the individual parameter vector phi, used by the
  // Monte-Carlo likelihood. For linear means this requires X == Z so that
  // phi absorbs the fixed effects.
  void conditional_mean(const Eigen::VectorXd& phi, const Eigen::VectorXd& x,
                        Eigen::VectorXd& out) const {
    if (is_linear()) {
      const auto& lm = linear();
      if (!lm.x_equals_z)
        throw Error("conditional_mean: linear model with X != Z has no g(phi, x) form");
      out.noalias() = lm.build_Z(x) * phi;
    } else {
      nonlinear().eval(phi, x, out);
    }
  }

  void conditional_mean_batch(const Eigen::MatrixXd& phi, const Eigen::VectorXd& x,
                              Eigen::MatrixXd& out) const {
    out.resize(x.size(), phi.cols());
    if (is_linear()) {
      const auto& lm = linear();
      if (!lm.x_equals_z)
        throw Error("conditional_mean: linear model with X != Z has no g(phi, x) form");
      out.noalias() = lm.build_Z(x) * phi;
      return;
    }
    const auto& nm = nonlinear();
    if (nm.eval_batch) {
      nm.eval_batch(phi, x, out);
      return;
    }
    Eigen::VectorXd col;
    for (Eigen::Index m = 0; m < phi.cols(); ++m) {
      nm.eval(phi.col(m), x, col);
      out.col(m) = col;
    }
  }
};

inline void validate_model(const ModelSpec& model) {
  if (model.p < 1) throw Error("model: p must be at least 1");
  if (model.is_linear()) {
    if (model.linear().p_fixed != model.p)
      throw Error("model: linear mean must have one fixed effect per random effect");
  } else if (model.nonlinear().n_params != model.p) {
    throw Error("model: nonlinear mean parameter count does not match p");
  }
}

// y = beta_1 + phi_1 + (beta_2 + phi_2) x + ... with X = Z = [1, x, .., x^{p-1}]
inline ModelSpec make_linear_polynomial(int p, CovStructure structure) {
  auto build = [p](const Eigen::VectorXd& x) {
    Eigen::MatrixXd m(x.size(), p);
    m.col(0).setOnes();
    for (int k = 1; k < p; ++k) m.col(k) = m.col(k - 1).cwiseProduct(x);
    return m;
  };
  LinearMean mean{p, build, build, true};
  return ModelSpec{std::move(mean), p, std::move(structure)};
}

// Logistic growth curve: asymptote, half-asymptote age and growth scale.
// With p = 2 the scale parameter is a constant shared by all individuals
// and is not estimated.
inline ModelSpec make_logistic(int p, CovStructure structure, double fixed_scale = 150.0) {
  if (p != 2 && p != 3) throw Error("logistic mean supports p = 2 or 3");
  NonlinearMean mean;
  mean.name = "logistic";
  mean.n_params = p;
  if (p == 3) {
    mean.eval = [](const Eigen::VectorXd& phi, const Eigen::VectorXd& x, Eigen::VectorXd& out) {
      out = phi[0] / (1.0 + ((phi[1] - x.array()) / phi[2]).exp());
    };
    mean.eval_batch = [](const Eigen::MatrixXd& phi, const Eigen::VectorXd& x,
                         Eigen::MatrixXd& out) {
      out.rowwise() = phi.row(1);
      out.colwise() -= x;
      out.array().rowwise() /= phi.row(2).array();
      out = out.array().exp().matrix();
      out = (1.0 + out.array()).inverse().matrix();
      out.array().rowwise() *= phi.row(0).array();
    };
  } else {
    mean.eval = [fixed_scale](const Eigen::VectorXd& phi, const Eigen::VectorXd& x,
                              Eigen::VectorXd& out) {
      out = phi[0] / (1.0 + ((phi[1] - x.array()) / fixed_scale).exp());
    };
    mean.eval_batch = [fixed_scale](const Eigen::MatrixXd& phi, const Eigen::VectorXd& x,
                                    Eigen::MatrixXd& out) {
      out.rowwise() = phi.row(1) / fixed_scale;
      out.colwise() -= x / fixed_scale;
      out = out.array().exp().matrix();
      out = (1.0 + out.array()).inverse().matrix();
      out.array().rowwise() *= phi.row(0).array();
    };
  }
  return ModelSpec{std::move(mean), p, std::move(structure)};
}

// Same mean as the polynomial linear model, but evaluated as g(phi, x) so
// the Monte-Carlo machinery can be exercised against the exact path.
inline ModelSpec make_quadratic_nonlinear(int p, CovStructure structure) {
  NonlinearMean mean;
  mean.name = "quadratic";
  mean.n_params = p;
  mean.eval = [p](const Eigen::VectorXd& phi, const Eigen::VectorXd& x, Eigen::VectorXd& out) {
    out.setConstant(x.size(), phi[0]);
    Eigen::ArrayXd pow = Eigen::ArrayXd::Ones(x.size());
    for (int k = 1; k < p; ++k) {
      pow *= x.array();
      out.array() += phi[k] * pow;
    }
  };
  mean.eval_batch = [p](const Eigen::MatrixXd& phi, const Eigen::VectorXd& x,
                        Eigen::MatrixXd& out) {
    Eigen::MatrixXd powers(x.size(), p);
    powers.col(0).setOnes();
    for (int k = 1; k < p; ++k) powers.col(k) = powers.col(k - 1).cwiseProduct(x);
    out.noalias() = powers * phi;
  };
  return ModelSpec{std::move(mean), p, std::move(structure)};
}

inline ModelSpec make_model(const std::string& name, int p, CovStructure structure) {
  if (name == "linear") return make_linear_polynomial(p, std::move(structure));
  if (name == "logistic") return make_logistic(p, std::move(structure));
  if (name == "quadratic") return make_quadratic_nonlinear(p, std::move(structure));
  throw Error("unknown model '" + name + "' (expected linear, logistic or quadratic)");
}

// Rewires a model so that effect k of the new model is effect order[k] of
// the original; companion of permute_to_tested_last.
inline ModelSpec permuted_model(const ModelSpec& model, const EffectPermutation& perm) {
  ModelSpec out = model;
  out.structure = perm.permuted_structure;
  if (perm.is_identity()) return out;
  const std::vector<int> order = perm.order;
  if (model.is_linear()) {
    const LinearMean& lm = model.linear();
    auto permute_cols = [order](Eigen::MatrixXd m) {
      Eigen::MatrixXd r(m.rows(), m.cols());
      for (int k = 0; k < static_cast<int>(order.size()); ++k) r.col(k) = m.col(order[k]);
      return r;
    };
    LinearMean wrapped = lm;
    wrapped.build_X = [build = lm.build_X, permute_cols](const Eigen::VectorXd& x) {
      return permute_cols(build(x));
    };
    wrapped.build_Z = [build = lm.build_Z, permute_cols](const Eigen::VectorXd& x) {
      return permute_cols(build(x));
    };
    out.mean = std::move(wrapped);
  } else {
    const NonlinearMean& nm = model.nonlinear();
    NonlinearMean wrapped = nm;
    wrapped.eval = [eval = nm.eval, order](const Eigen::VectorXd& phi, const Eigen::VectorXd& x,
                                           Eigen::VectorXd& out_vec) {
      Eigen::VectorXd orig(phi.size());
      for (int k = 0; k < static_cast<int>(order.size()); ++k) orig[order[k]] = phi[k];
      eval(orig, x, out_vec);
    };
    if (nm.eval_batch) {
      wrapped.eval_batch = [eval_batch = nm.eval_batch, order](const Eigen::MatrixXd& phi,
                                                               const Eigen::VectorXd& x,
                                                               Eigen::MatrixXd& out_mat) {
        Eigen::MatrixXd orig(phi.rows(), phi.cols());
        for (int k = 0; k < static_cast<int>(order.size()); ++k) orig.row(order[k]) = phi.row(k);
        eval_batch(orig, x, out_mat);
      };
    }
    out.mean = std::move(wrapped);
  }
  return out;
}

}  // namespace varcomp
