#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "support/util.hpp"
#include "varcomp/estimation.hpp"
#include "varcomp/fisher.hpp"
#include "varcomp/optimize.hpp"

using namespace varcomp;

namespace {

Theta m1_truth_p3() {
  Theta theta;
  theta.beta = Eigen::Vector3d(0.0, 7.0, 2.0);
  theta.gamma = Eigen::MatrixXd::Zero(3, 3);
  theta.gamma(0, 0) = 1.69;
  theta.gamma(1, 1) = 1.0;
  theta.gamma(0, 1) = theta.gamma(1, 0) = 1.04;
  theta.sigma2 = 2.25;
  return theta;
}

Eigen::VectorXd grid_j(int j) {
  Eigen::VectorXd x(j);
  for (int k = 0; k < j; ++k) x[k] = k + 1;
  return x;
}

}  // namespace

TEST_CASE("optimizer sanity on standard functions") {
  auto quadratic = [](const Eigen::VectorXd& x) {
    return (x[0] - 1.0) * (x[0] - 1.0) + 10.0 * (x[1] + 2.0) * (x[1] + 2.0);
  };
  opt::Result r = opt::minimize(quadratic, Eigen::Vector2d(5.0, 5.0));
  CHECK(r.converged);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.x[1] == doctest::Approx(-2.0).epsilon(1e-5));

  auto rosenbrock = [](const Eigen::VectorXd& x) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    return a * a + 100.0 * b * b;
  };
  r = opt::minimize(rosenbrock, Eigen::Vector2d(-1.2, 1.0));
  CHECK(r.f < 1e-8);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("intercept-only linear fit recovers the mean within its standard error") {
  const ModelSpec model = make_linear_polynomial(1, CovStructure::diagonal());
  Theta truth;
  truth.beta = Eigen::VectorXd::Zero(1);
  truth.gamma = Eigen::MatrixXd::Identity(1, 1) * 1.3;
  truth.sigma2 = 2.25;
  const Dataset data = testutil::simulate_dataset(model, truth, grid_j(4), 500, 2024);
  const FitResult fit_res = fit(model, data, CovStructure::diagonal());
  CHECK(fit_res.converged);
  const FisherInfo info = fim_linear(fit_res.theta_hat, model, data);
  const double se_beta = std::sqrt(info.matrix.inverse()(0, 0) / data.n());
  CHECK(std::abs(fit_res.theta_hat.beta[0]) < 3.0 * se_beta);
  CHECK(fit_res.theta_hat.gamma(0, 0) == doctest::Approx(1.3).epsilon(0.35));
  CHECK(fit_res.theta_hat.sigma2 == doctest::Approx(2.25).epsilon(0.25));
}

TEST_CASE("null fit over every effect collapses to the fixed-effects MLE") {
  const ModelSpec model = make_linear_polynomial(2, CovStructure::diagonal());
  Theta truth;
  truth.beta = Eigen::Vector2d(1.0, 0.5);
  truth.gamma = Eigen::Vector2d(0.4, 0.2).asDiagonal();
  truth.sigma2 = 1.0;
  const Dataset data = testutil::simulate_dataset(model, truth, grid_j(5), 40, 7);
  const FitResult res =
      fit(model, data, CovStructure::diagonal(), HypothesisSpec{{0, 1}});
  CHECK(res.converged);
  CHECK(res.theta_hat.gamma.cwiseAbs().maxCoeff() == 0.0);

  // ordinary least squares over the stacked design
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(2, 2);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(2);
  for (const auto& ind : data.individuals) {
    const Eigen::MatrixXd x_design = model.linear().build_X(ind.x);
    xtx += x_design.transpose() * x_design;
    xty += x_design.transpose() * ind.y;
  }
  const Eigen::VectorXd ols = xtx.ldlt().solve(xty);
  double rss = 0.0;
  for (const auto& ind : data.individuals)
    rss += (ind.y - model.linear().build_X(ind.x) * ols).squaredNorm();
  const double sigma2_mle = rss / data.total_obs();
  CHECK(res.theta_hat.beta[0] == doctest::Approx(ols[0]).epsilon(1e-5));
  CHECK(res.theta_hat.beta[1] == doctest::Approx(ols[1]).epsilon(1e-5));
  CHECK(res.theta_hat.sigma2 == doctest::Approx(sigma2_mle).epsilon(1e-5));
}

TEST_CASE("tiny mixed model beats a parameter grid") {
  const ModelSpec model = make_linear_polynomial(1, CovStructure::diagonal());
  Theta truth;
  truth.beta = Eigen::VectorXd::Constant(1, 0.8);
  truth.gamma = Eigen::MatrixXd::Identity(1, 1) * 0.7;
  truth.sigma2 = 0.8;
  const Dataset data = testutil::simulate_dataset(model, truth, grid_j(2), 5, 99);
  const FitResult res = fit(model, data, CovStructure::diagonal());

  double ymin = 1e300, ymax = -1e300, yvar = 0.0, ymean = 0.0;
  int count = 0;
  for (const auto& ind : data.individuals)
    for (Eigen::Index j = 0; j < ind.y.size(); ++j) {
      ymin = std::min(ymin, ind.y[j]);
      ymax = std::max(ymax, ind.y[j]);
      ymean += ind.y[j];
      ++count;
    }
  ymean /= count;
  for (const auto& ind : data.individuals) yvar += (ind.y.array() - ymean).square().sum();
  yvar /= count;

  double best_grid = -1e300;
  Theta probe = truth;
  for (int a = 0; a < 20; ++a)
    for (int b = 0; b < 20; ++b)
      for (int c = 0; c < 20; ++c) {
        probe.beta[0] = ymin + (ymax - ymin) * a / 19.0;
        probe.gamma(0, 0) = 3.0 * yvar * b / 19.0;
        probe.sigma2 = 0.05 * yvar + 2.95 * yvar * c / 19.0;
        best_grid = std::max(best_grid, loglik_linear(probe, model, data));
      }
  CHECK(res.loglik >= best_grid - 1e-6);
}

TEST_CASE("default_init lands near the generating parameters") {
  const ModelSpec model = make_linear_polynomial(3, CovStructure::full());
  const Dataset data = testutil::simulate_dataset(model, m1_truth_p3(), grid_j(6), 300, 11);
  const Theta init = default_init(model, data, CovStructure::full());
  CHECK(std::abs(init.beta[0] - 0.0) < 0.5);
  CHECK(std::abs(init.beta[1] - 7.0) < 3.5);
  CHECK(std::abs(init.beta[2] - 2.0) < 1.0);
  CHECK(init.sigma2 > 0.0);
}

TEST_CASE("default_init zeroes the tested block") {
  const ModelSpec model = make_linear_polynomial(2, CovStructure::diagonal());
  Theta truth;
  truth.beta = Eigen::Vector2d(1.0, 2.0);
  truth.gamma = Eigen::Vector2d(0.5, 0.5).asDiagonal();
  truth.sigma2 = 1.0;
  const Dataset data = testutil::simulate_dataset(model, truth, grid_j(4), 20, 3);
  const Theta init = default_init(model, data, CovStructure::diagonal(), HypothesisSpec{{0, 1}});
  CHECK(init.gamma.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("constant response triggers the unit-variance fallback") {
  const ModelSpec model = make_linear_polynomial(1, CovStructure::diagonal());
  Dataset data;
  for (int i = 0; i < 4; ++i) {
    Individual ind;
    ind.id = std::to_string(i);
    ind.x = grid_j(3);
    ind.y = Eigen::VectorXd::Constant(3, 5.0);
    data.individuals.push_back(ind);
  }
  bool degenerate = false;
  const Theta init = default_init(model, data, CovStructure::diagonal(), std::nullopt, &degenerate);
  CHECK(degenerate);
  CHECK(init.gamma(0, 0) == 1.0);
  CHECK(init.sigma2 == 1.0);
}

TEST_CASE("nested fits are monotone in the likelihood") {
  const ModelSpec model = make_linear_polynomial(2, CovStructure::full());
  Theta truth;
  truth.beta = Eigen::Vector2d(0.0, 7.0);
  truth.gamma = Eigen::MatrixXd::Zero(2, 2);
  truth.gamma(0, 0) = 1.69;
  truth.sigma2 = 2.25;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset data = testutil::simulate_dataset(model, truth, grid_j(6), 60, seed);
    const FitResult h0 = fit(model, data, CovStructure::full(), HypothesisSpec{{1}});
    const FitResult h1 = fit(model, data, CovStructure::full());
    CHECK(h1.loglik >= h0.loglik - 1e-6);
  }
}

TEST_CASE("monotonicity holds on the Monte-Carlo path with a shared seed") {
  const ModelSpec model = make_logistic(2, CovStructure::diagonal());
  Theta truth;
  truth.beta = Eigen::Vector2d(200.0, 500.0);
  truth.gamma = Eigen::Vector2d(0.0, 2500.0).asDiagonal();
  truth.sigma2 = 100.0;
  Eigen::VectorXd x(10);
  for (int k = 0; k < 10; ++k) x[k] = 100.0 + 140.0 * k;
  const Dataset data = testutil::simulate_dataset(model, truth, x, 30, 13);
  const McConfig mc{300, 2025, std::nullopt};
  FitOptions options;
  options.optimizer.nm_max_evals = 500;
  options.optimizer.max_evals = 1500;
  const FitResult h0 = fit(model, data, CovStructure::diagonal(), HypothesisSpec{{0}}, mc,
                           std::nullopt, options);
  Theta warm = h0.theta_hat;
  const FitResult h1 =
      fit(model, data, CovStructure::diagonal(), std::nullopt, mc, warm, options);
  // identical seed and draws: the null optimum embeds into the alternative space
  const McEstimate l0 = loglik_mc(h0.theta_hat, model, data, mc);
  const McEstimate l1 = loglik_mc(h1.theta_hat, model, data, mc);
  CHECK(l1.value >= l0.value - 1e-6);
}

TEST_CASE("linear fits are equivariant under effect permutation") {
  const ModelSpec model = make_linear_polynomial(2, CovStructure::diagonal());
  Theta truth;
  truth.beta = Eigen::Vector2d(1.0, -0.5);
  truth.gamma = Eigen::Vector2d(0.9, 0.3).asDiagonal();
  truth.sigma2 = 0.7;
  const Dataset data = testutil::simulate_dataset(model, truth, grid_j(5), 50, 17);

  const FitResult direct = fit(model, data, CovStructure::diagonal(), HypothesisSpec{{1}});

  // same null expressed on the model with effects swapped
  EffectPermutation swap;
  swap.order = {1, 0};
  swap.permuted_structure = CovStructure::diagonal();
  const ModelSpec swapped = permuted_model(model, swap);
  const FitResult other = fit(swapped, data, CovStructure::diagonal(), HypothesisSpec{{0}});

  CHECK(other.theta_hat.beta[0] == doctest::Approx(direct.theta_hat.beta[1]).epsilon(1e-4));
  CHECK(other.theta_hat.beta[1] == doctest::Approx(direct.theta_hat.beta[0]).epsilon(1e-4));
  CHECK(other.theta_hat.gamma(1, 1) == doctest::Approx(direct.theta_hat.gamma(0, 0)).epsilon(1e-3));
  CHECK(other.loglik == doctest::Approx(direct.loglik).epsilon(1e-8));
}

TEST_CASE("consistency improves with the sample size") {
  const ModelSpec model = make_linear_polynomial(2, CovStructure::full());
  Theta truth;
  truth.beta = Eigen::Vector2d(0.0, 7.0);
  truth.gamma = Eigen::MatrixXd::Zero(2, 2);
  truth.gamma(0, 0) = 1.69;
  truth.gamma(1, 1) = 1.0;
  truth.gamma(0, 1) = truth.gamma(1, 0) = 1.04;
  truth.sigma2 = 2.25;
  const Eigen::VectorXd flat_true = theta_flatten(truth, CovStructure::full());

  auto median_error = [&](int n) {
    std::vector<double> errors;
    for (std::uint64_t rep = 0; rep < 50; ++rep) {
      const Dataset data = testutil::simulate_dataset(model, truth, grid_j(6), n, 1000 + rep);
      const FitResult res = fit(model, data, CovStructure::full());
      errors.push_back(
          (theta_flatten(res.theta_hat, CovStructure::full()) - flat_true).norm());
    }
    std::sort(errors.begin(), errors.end());
    return errors[errors.size() / 2];
  };
  const double err_small = median_error(100);
  const double err_big = median_error(500);
  CHECK(err_big < err_small);
}

TEST_CASE("invalid inputs are rejected") {
  const ModelSpec model = make_logistic(2, CovStructure::diagonal());
  Dataset data;
  Individual ind;
  ind.id = "a";
  ind.x = grid_j(3);
  ind.y = grid_j(3);
  data.individuals.push_back(ind);
  CHECK_THROWS_AS(static_cast<void>(fit(model, data, CovStructure::diagonal())), Error);  // no mc
}
