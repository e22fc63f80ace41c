#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/fixtures.hpp"
#include "support/util.hpp"
#include "varcomp/lrt.hpp"
#include "varcomp/report.hpp"
#include "varcomp/simlab.hpp"

using namespace varcomp;

namespace {

const McConfig kMc{1000, 42, std::nullopt};

Eigen::VectorXd grid_j(int j) {
  Eigen::VectorXd x(j);
  for (int k = 0; k < j; ++k) x[k] = k + 1;
  return x;
}

}  // namespace

TEST_CASE("dental growth, diagonal structure: the slope variance is rejected") {
  const Dataset data = fixtures::dental_dataset();
  const ModelSpec model = make_linear_polynomial(2, CovStructure::diagonal());
  const TestReport rep =
      run_test(model, data, CovStructure::diagonal(), HypothesisSpec{{1}}, 0.05, kMc);
  CHECK(std::abs(rep.lrt - 3.651) < 0.05);
  CHECK(std::abs(rep.quantile_at_alpha - 2.706) < 0.001);
  CHECK(std::abs(rep.pvalue - 0.028) < 0.002);
  CHECK(rep.reject);
  CHECK(rep.lrt_se == 0.0);
  CHECK(rep.weights.support() == std::vector<int>{0, 1});
  CHECK(rep.fit_h0.converged);
  CHECK(rep.fit_h1.converged);
  CHECK(rep.fit_h1.theta_hat.gamma(1, 1) > 0.0);
  // decision consistency
  CHECK(rep.reject == (rep.lrt >= rep.quantile_at_alpha));
  CHECK(rep.reject == (rep.pvalue <= rep.alpha));
}

TEST_CASE("dental growth, full structure: no rejection at the 5% level") {
  const Dataset data = fixtures::dental_dataset();
  const ModelSpec model = make_linear_polynomial(2, CovStructure::full());
  const TestReport rep =
      run_test(model, data, CovStructure::full(), HypothesisSpec{{1}}, 0.05, kMc);
  CHECK(std::abs(rep.lrt - 4.178) < 0.05);
  CHECK(std::abs(rep.quantile_at_alpha - 5.139) < 0.001);
  CHECK(std::abs(rep.pvalue - 0.082) < 0.002);
  CHECK_FALSE(rep.reject);
  CHECK(rep.weights.support() == std::vector<int>{1, 2});
  CHECK(rep.pvalue_source == "closed_form");
}

TEST_CASE("a huge tested variance is rejected decisively") {
  const ModelSpec model = make_linear_polynomial(2, CovStructure::diagonal());
  Theta truth;
  truth.beta = Eigen::Vector2d(1.0, 2.0);
  truth.gamma = Eigen::Vector2d(0.8, 100.0).asDiagonal();
  truth.sigma2 = 1.0;
  const Dataset data = testutil::simulate_dataset(model, truth, grid_j(5), 60, 7);
  const TestReport rep =
      run_test(model, data, CovStructure::diagonal(), HypothesisSpec{{1}}, 0.05, kMc);
  CHECK(rep.reject);
  CHECK(rep.pvalue < 1e-3);
  CHECK(rep.lrt > 100.0);
}

TEST_CASE("testing a non-trailing effect matches the permuted-trailing run") {
  const ModelSpec model = make_linear_polynomial(2, CovStructure::diagonal());
  Theta truth;
  truth.beta = Eigen::Vector2d(1.0, 2.0);
  truth.gamma = Eigen::Vector2d(0.0, 1.5).asDiagonal();
  truth.sigma2 = 1.0;
  const Dataset data = testutil::simulate_dataset(model, truth, grid_j(5), 50, 11);
  const TestReport direct =
      run_test(model, data, CovStructure::diagonal(), HypothesisSpec{{0}}, 0.05, kMc);

  EffectPermutation swap;
  swap.order = {1, 0};
  swap.permuted_structure = CovStructure::diagonal();
  const ModelSpec swapped = permuted_model(model, swap);
  const TestReport other =
      run_test(swapped, data, CovStructure::diagonal(), HypothesisSpec{{1}}, 0.05, kMc);
  CHECK(direct.lrt == doctest::Approx(other.lrt).epsilon(1e-6));
  CHECK(direct.quantile_at_alpha == other.quantile_at_alpha);
  CHECK(direct.fit_h1.theta_hat.gamma(1, 1) ==
        doctest::Approx(other.fit_h1.theta_hat.gamma(0, 0)).epsilon(1e-4));
}

TEST_CASE("limiting mixtures for the simulation cases") {
  using namespace varcomp::simlab;
  SUBCASE("one variance among two independent effects") {
    const ScenarioSpec spec = defaults::m1(2, CovStructure::diagonal());
    const Dataset data = generate(spec, 0);
    const TestReport rep = evaluate_at_theta(spec.theta_star, spec.model(), data, spec.structure,
                                             spec.h, 0.05);
    CHECK(rep.weights.support() == std::vector<int>{0, 1});
    CHECK(rep.weights.weights[0] == 0.5);
    CHECK(rep.weights.weights[1] == 0.5);
    CHECK(rep.quantile_at_alpha == doctest::Approx(2.70554).epsilon(1e-4));
    CHECK_FALSE(rep.has_fits);
  }
  SUBCASE("one variance among two correlated effects") {
    const ScenarioSpec spec = defaults::m1(2, CovStructure::full());
    const Dataset data = generate(spec, 0);
    const TestReport rep = evaluate_at_theta(spec.theta_star, spec.model(), data, spec.structure,
                                             spec.h, 0.05);
    CHECK(rep.weights.support() == std::vector<int>{1, 2});
    CHECK(rep.weights.weights[1] == 0.5);
    CHECK(rep.weights.weights[2] == 0.5);
  }
  SUBCASE("one variance among three independent effects") {
    const ScenarioSpec spec = defaults::m1(3, CovStructure::diagonal());
    const Dataset data = generate(spec, 0);
    const TestReport rep = evaluate_at_theta(spec.theta_star, spec.model(), data, spec.structure,
                                             spec.h, 0.05);
    CHECK(rep.weights.support() == std::vector<int>{0, 1});
  }
  SUBCASE("one variance among three correlated effects") {
    const ScenarioSpec spec = defaults::m1(3, CovStructure::full());
    const Dataset data = generate(spec, 0);
    const TestReport rep = evaluate_at_theta(spec.theta_star, spec.model(), data, spec.structure,
                                             spec.h, 0.05);
    CHECK(rep.weights.support() == std::vector<int>{2, 3});
    CHECK(rep.weights.weights[2] == 0.5);
    CHECK(rep.weights.weights[3] == 0.5);
  }
  SUBCASE("two variances among three independent effects") {
    const ScenarioSpec spec = defaults::m1_leading_pair();
    const Dataset data = generate(spec, 0);
    const TestReport rep = evaluate_at_theta(spec.theta_star, spec.model(), data, spec.structure,
                                             spec.h, 0.05);
    CHECK(rep.weights.support() == std::vector<int>{0, 1, 2});
    CHECK(rep.weights.weights[1] == 0.5);
    CHECK(rep.weights.weights[0] + rep.weights.weights[2] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.tested_corr.rows() == 2);
  }
}

TEST_CASE("the limiting support does not depend on the mean structure") {
  using namespace varcomp::simlab;
  const McConfig mc{400, 5, std::nullopt};
  ScenarioSpec nonlinear = defaults::m2(2, CovStructure::diagonal());
  nonlinear.n_individuals = 40;
  const Dataset data = generate(nonlinear, 0);
  const TestReport rep = evaluate_at_theta(nonlinear.theta_star, nonlinear.model(), data,
                                           nonlinear.structure, nonlinear.h, 0.05, mc);
  const ScenarioSpec linear = defaults::m1(2, CovStructure::diagonal());
  const Dataset lin_data = generate(linear, 0);
  const TestReport lin_rep = evaluate_at_theta(linear.theta_star, linear.model(), lin_data,
                                               linear.structure, linear.h, 0.05);
  CHECK(rep.weights.support() == lin_rep.weights.support());
  CHECK(rep.cone.describe() == lin_rep.cone.describe());
}

TEST_CASE("evaluate_at_theta rejects points outside the null or the conditions") {
  using namespace varcomp::simlab;
  ScenarioSpec spec = defaults::m1(2, CovStructure::diagonal());
  const Dataset data = generate(spec, 0);
  Theta bad = spec.theta_star;
  bad.gamma(1, 1) = 0.5;  // tested variance not zero
  CHECK_THROWS_AS(static_cast<void>(evaluate_at_theta(bad, spec.model(), data, spec.structure,
                                                      spec.h, 0.05)),
                  Error);
  Theta degenerate = spec.theta_star;
  degenerate.gamma(0, 0) = 0.0;  // untested block must stay positive definite
  CHECK_THROWS_AS(static_cast<void>(evaluate_at_theta(degenerate, spec.model(), data,
                                                      spec.structure, spec.h, 0.05)),
                  Error);
}

TEST_CASE("nonlinear end-to-end run is reproducible and self-consistent") {
  using namespace varcomp::simlab;
  ScenarioSpec spec = defaults::m2(2, CovStructure::diagonal());
  spec.n_individuals = 30;
  spec.seed = 9;
  const Dataset data = generate(spec, 0);
  const ModelSpec model = spec.model();
  const McConfig mc{400, 77, std::nullopt};
  TestOptions options;
  options.jobs = 2;
  options.fit_options.optimizer.nm_max_evals = 400;
  options.fit_options.optimizer.max_evals = 1200;

  const TestReport a =
      run_test(model, data, spec.structure, spec.h, 0.05, mc, options);
  const TestReport b =
      run_test(model, data, spec.structure, spec.h, 0.05, mc, options);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(a.lrt >= 0.0);
  CHECK(a.weights.support() == std::vector<int>{0, 1});
  CHECK(a.reject == (a.pvalue <= 0.05));
  CHECK(a.fit_h1.loglik >= a.fit_h0.loglik - 1e-6);
}

TEST_CASE("weights mode overrides") {
  const Dataset data = fixtures::dental_dataset();
  const ModelSpec model = make_linear_polynomial(2, CovStructure::diagonal());
  TestOptions options;
  options.weights_mode = WeightsMode::mc;
  options.weight_draws = 40000;
  const TestReport mc_rep =
      run_test(model, data, CovStructure::diagonal(), HypothesisSpec{{1}}, 0.05, kMc, options);
  CHECK(mc_rep.weights.source == WeightSource::monte_carlo);
  CHECK(std::abs(mc_rep.weights.weights[0] - 0.5) < 3.0 * mc_rep.weights.se[0]);

  options.weights_mode = WeightsMode::tail;
  options.tail_draws = 50000;
  const TestReport tail_rep =
      run_test(model, data, CovStructure::diagonal(), HypothesisSpec{{1}}, 0.05, kMc, options);
  CHECK(tail_rep.pvalue_source == "tail_mc");
  CHECK(std::abs(tail_rep.pvalue - 0.028) < 0.01);
  CHECK(std::abs(tail_rep.quantile_at_alpha - 2.706) < 0.1);
  CHECK(tail_rep.reject);
}

TEST_CASE("report serialization is byte-stable and carries the key fields") {
  const Dataset data = fixtures::dental_dataset();
  const ModelSpec model = make_linear_polynomial(2, CovStructure::diagonal());
  const TestReport rep =
      run_test(model, data, CovStructure::diagonal(), HypothesisSpec{{1}}, 0.05, kMc);
  const auto j = to_json(rep);
  CHECK(j.contains("lrt"));
  CHECK(j["chibar"].contains("weights"));
  CHECK(j["chibar"].contains("support"));
  CHECK(j["chibar"].contains("source"));
  CHECK(j.contains("quantile"));
  CHECK(j.contains("pvalue"));
  CHECK(j.contains("effect_order"));
  const TestReport rep2 =
      run_test(model, data, CovStructure::diagonal(), HypothesisSpec{{1}}, 0.05, kMc);
  CHECK(to_json(rep2).dump() == j.dump());
}
