#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "support/util.hpp"
#include "varcomp/cone.hpp"

using namespace varcomp;

namespace {

Cone orthant_cone(int r) {
  Cone cone;
  cone.factors = {ConeFactor::orthant(r)};
  return cone;
}

}  // namespace

TEST_CASE("cone construction follows the tangent-cone shapes") {
  SUBCASE("diagonal, p=2, r=1") {
    const Cone cone = build_cone(2, 1, CovStructure::diagonal());
    REQUIRE(cone.factors.size() == 4);
    CHECK(cone.factors[0].kind == ConeFactor::Kind::zero);
    CHECK(cone.factors[0].size == 2);
    CHECK(cone.factors[1].size == 1);
    CHECK(cone.factors[2].kind == ConeFactor::Kind::orthant);
    CHECK(cone.factors[2].size == 1);
    CHECK(cone.factors[3].size == 1);
    CHECK(cone.total_dim() == 5);
  }
  SUBCASE("full, p=3, r=1") {
    const Cone cone = build_cone(3, 1, CovStructure::full());
    REQUIRE(cone.factors.size() == 5);
    CHECK(cone.factors[2].kind == ConeFactor::Kind::free);
    CHECK(cone.factors[2].size == 2);
    CHECK(cone.factors[3].kind == ConeFactor::Kind::psd);
    CHECK(cone.factors[3].size == 1);
    CHECK(cone.total_dim() == 10);
  }
  SUBCASE("diagonal, p=3, r=2") {
    const Cone cone = build_cone(3, 2, CovStructure::diagonal());
    CHECK(cone.total_dim() == 7);
    bool found = false;
    for (const auto& f : cone.factors)
      if (f.kind == ConeFactor::Kind::orthant) {
        CHECK(f.size == 2);
        found = true;
      }
    CHECK(found);
  }
  SUBCASE("block diagonal, trailing block tested") {
    const Cone cone = build_cone(3, 1, CovStructure::block({2, 1}));
    CHECK(cone.total_dim() == flat_dim(CovStructure::block({2, 1}), 3));
    CHECK(cone.factors[2].kind == ConeFactor::Kind::psd);
    CHECK(cone.factors[2].size == 1);
  }
  SUBCASE("full, testing everything") {
    const Cone cone = build_cone(2, 2, CovStructure::full());
    CHECK(cone.total_dim() == 6);
    CHECK(cone.max_df() == 3);
  }
  CHECK_THROWS_AS(static_cast<void>(build_cone(2, 3, CovStructure::diagonal())), Error);
}

TEST_CASE("cone layout permutes the full-structure triangle into blocks") {
  SUBCASE("diagonal layouts are the identity") {
    const ConeLayout layout = cone_layout(3, 2, CovStructure::diagonal());
    for (std::size_t k = 0; k < layout.index.size(); ++k)
      CHECK(layout.index[k] == static_cast<int>(k));
    CHECK(layout.scale.maxCoeff() == 1.0);
  }
  SUBCASE("full p=3 r=1 groups the tested row last") {
    const ConeLayout layout = cone_layout(3, 1, CovStructure::full());
    const std::vector<int> expect = {0, 1, 2, 3, 4, 6, 5, 7, 8, 9};
    CHECK(layout.index == expect);
    CHECK(layout.scale.maxCoeff() == 1.0);  // psd(1) has no off-diagonal
  }
  SUBCASE("full p=3 r=2 carries the isometry scale on the tested off-diagonal") {
    const ConeLayout layout = cone_layout(3, 2, CovStructure::full());
    const Cone cone = build_cone(3, 2, CovStructure::full());
    CHECK(static_cast<int>(layout.index.size()) == cone.total_dim());
    int n_scaled = 0;
    for (Eigen::Index k = 0; k < layout.scale.size(); ++k)
      if (layout.scale[k] != 1.0) {
        CHECK(layout.scale[k] == doctest::Approx(std::sqrt(2.0)));
        ++n_scaled;
      }
    CHECK(n_scaled == 1);
  }
}

TEST_CASE("projection clips coordinates under the identity metric") {
  const Eigen::MatrixXd v = Eigen::MatrixXd::Identity(2, 2);
  const Projection pr = project_cone(Eigen::Vector2d(1.0, -1.0), orthant_cone(2), v);
  CHECK(pr.proj[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(pr.proj[1] == doctest::Approx(0.0));
  CHECK(pr.dist2 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("projection clips eigenvalues on the PSD factor") {
  Cone cone;
  cone.factors = {ConeFactor::psd(2)};
  // diag(1, -1) in the isometric packing (m11, sqrt2*m21, m22)
  Eigen::Vector3d z(1.0, 0.0, -1.0);
  const Projection pr = project_cone(z, cone, Eigen::MatrixXd::Identity(3, 3));
  CHECK(pr.proj[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(pr.proj[1] == doctest::Approx(0.0));
  CHECK(pr.proj[2] == doctest::Approx(0.0));
  CHECK(pr.dist2 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("degenerate cones") {
  Cone zero;
  zero.factors = {ConeFactor::zero(3)};
  Eigen::Vector3d z(1.0, 2.0, -1.0);
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(3, 3);
  v(0, 1) = v(1, 0) = 0.4;
  const Projection pz = project_cone(z, zero, v);
  CHECK(pz.proj.cwiseAbs().maxCoeff() == 0.0);
  CHECK(pz.dist2 == doctest::Approx(z.dot(v.inverse() * z)).epsilon(1e-9));

  Cone free;
  free.factors = {ConeFactor::free_space(3)};
  const Projection pf = project_cone(z, free, v);
  CHECK((pf.proj - z).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(pf.dist2 == doctest::Approx(0.0));
}

TEST_CASE("projection matches active-set enumeration under general metrics") {
  // zero(1) x orthant(2) x zero(1) with correlated metrics
  Cone cone;
  cone.factors = {ConeFactor::zero(1), ConeFactor::orthant(2), ConeFactor::zero(1)};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    rng::Stream stream(seed, rng::StreamKind::generic, 7);
    Eigen::MatrixXd a(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) a(i, j) = stream.next_normal();
    const Eigen::MatrixXd v = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(4, 4);
    const Eigen::VectorXd z = stream.normal_vector(4);
    const Projection pr = project_cone(z, cone, v);
    const Eigen::VectorXd expect = oracle::project_enumerate(z, {0, 3}, {1, 2}, v);
    CHECK((pr.proj - expect).cwiseAbs().maxCoeff() < 1e-5 * (1.0 + z.norm()));
    // the attained objective matches the enumerated optimum
    const Eigen::MatrixXd w = v.inverse();
    const double oracle_obj = (z - expect).dot(w * (z - expect));
    CHECK(pr.dist2 <= oracle_obj + 1e-7 * (1.0 + z.squaredNorm()));
    CHECK(pr.dist2 >= oracle_obj - 1e-7 * (1.0 + z.squaredNorm()));
    // complementarity at the reported solution
    const Eigen::VectorXd resid = w * (z - pr.proj);
    CHECK(std::abs(pr.proj.dot(resid)) <= 1e-8 * std::max(z.squaredNorm(), 1e-12) + 1e-12);
  }
}

TEST_CASE("effective dimension counts active coordinates and ranks") {
  Cone cone;
  cone.factors = {ConeFactor::zero(2), ConeFactor::free_space(2), ConeFactor::orthant(2),
                  ConeFactor::psd(2)};
  Eigen::VectorXd proj(9);
  proj << 0, 0, 1.0, -2.0, 0.5, 0.0, 1.0, 0.0, 0.0;  // psd part = diag(1, 0)
  CHECK(effective_dimension(proj, cone) == 2 + 1 + 1);
  proj[5] = 0.3;       // second orthant coordinate activates
  proj[8] = 2.0;       // psd part now rank 2
  CHECK(effective_dimension(proj, cone) == 2 + 2 + 2);
  CHECK(effective_dimension(Eigen::VectorXd::Zero(9), cone) == 2);  // free dims only
}

TEST_CASE("iteration cap raises an error") {
  Cone cone;
  cone.factors = {ConeFactor::orthant(2)};
  Eigen::MatrixXd v(2, 2);
  v << 1.0, 0.999, 0.999, 1.0;  // kappa ~ 2000
  ConeProjector tight(cone, v, 1e-8, 3);
  CHECK_THROWS_WITH_AS(static_cast<void>(tight.project(Eigen::Vector2d(-3.0, 2.0))),
                       doctest::Contains("iteration cap"), Error);
  // the default cap is plenty even for this conditioning
  const Projection pr = project_cone(Eigen::Vector2d(-3.0, 2.0), cone, v);
  const Eigen::VectorXd expect = oracle::project_enumerate(Eigen::Vector2d(-3.0, 2.0), {}, {0, 1}, v);
  CHECK((pr.proj - expect).cwiseAbs().maxCoeff() < 1e-6);
}
