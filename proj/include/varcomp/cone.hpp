#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "varcomp/core.hpp"

namespace varcomp {

// Closed convex cone given as an ordered product of elementary factors.
// PsdMatrices(m) denotes the cone of symmetric PSD m x m matrices in its
// isometric vector representation: diagonal entries as-is, off-diagonal
// entries scaled by sqrt(2), so Euclidean geometry on the coordinates
// matches Frobenius geometry on the matrices.
struct ConeFactor {
  enum class Kind { zero, free, orthant, psd };
  Kind kind = Kind::zero;
  int size = 0;  // coordinate count for zero/free/orthant, matrix order for psd

  int dim() const { return kind == Kind::psd ? size * (size + 1) / 2 : size; }

  static ConeFactor zero(int n) { return {Kind::zero, n}; }
  static ConeFactor free_space(int n) { return {Kind::free, n}; }
  static ConeFactor orthant(int n) { return {Kind::orthant, n}; }
  static ConeFactor psd(int m) { return {Kind::psd, m}; }
};

struct Cone {
  std::vector<ConeFactor> factors;

  int total_dim() const {
    int d = 0;
    for (const auto& f : factors) d += f.dim();
    return d;
  }
  // largest attainable effective dimension (free dims + orthant dims + psd face dims)
  int max_df() const {
    int d = 0;
    for (const auto& f : factors)
      if (f.kind != ConeFactor::Kind::zero) d += f.dim();
    return d;
  }
  std::string describe() const {
    std::string s;
    for (const auto& f : factors) {
      if (!s.empty()) s += " x ";
      switch (f.kind) {
        case ConeFactor::Kind::zero: s += "zero(" + std::to_string(f.size) + ")"; break;
        case ConeFactor::Kind::free: s += "free(" + std::to_string(f.size) + ")"; break;
        case ConeFactor::Kind::orthant: s += "orthant(" + std::to_string(f.size) + ")"; break;
        case ConeFactor::Kind::psd: s += "psd(" + std::to_string(f.size) + ")"; break;
      }
    }
    return s;
  }
};

// ---------------------------------------------------------------------------
// The cone T(Theta, theta*) ∩ T(Theta0, theta*)^perp for testing the
// trailing r random-effect variances, expressed over the tested-last flat
// parameter layout. The residual variance is interior, contributing a
// single zero coordinate.
// ---------------------------------------------------------------------------

inline Cone build_cone(int p, int r, const CovStructure& s) {
  if (r < 1 || r > p) throw Error("build_cone: need 1 <= r <= p");
  Cone cone;
  auto push = [&](ConeFactor f) {
    if (f.size > 0) cone.factors.push_back(f);
  };
  push(ConeFactor::zero(p));  // fixed effects
  switch (s.kind) {
    case CovStructure::Kind::diagonal:
      push(ConeFactor::zero(p - r));
      push(ConeFactor::orthant(r));
      break;
    case CovStructure::Kind::full:
      push(ConeFactor::zero((p - r) * (p - r + 1) / 2));
      push(ConeFactor::free_space(r * (p - r)));
      push(ConeFactor::psd(r));
      break;
    case CovStructure::Kind::block_diagonal: {
      const auto blocks = s.blocks_for(p);
      int tested = 0, zero_params = 0;
      std::vector<int> tested_blocks;
      for (auto it = blocks.rbegin(); it != blocks.rend() && tested < r; ++it) {
        tested += *it;
        tested_blocks.insert(tested_blocks.begin(), *it);
      }
      if (tested != r)
        throw Error("build_cone: tested count does not match trailing blocks");
      for (std::size_t k = 0; k + tested_blocks.size() < blocks.size(); ++k)
        zero_params += blocks[k] * (blocks[k] + 1) / 2;
      push(ConeFactor::zero(zero_params));
      for (int b : tested_blocks) push(ConeFactor::psd(b));
      break;
    }
  }
  push(ConeFactor::zero(1));  // sigma2
  return cone;
}

// Mapping from the tested-last flat coordinates to the cone coordinates:
// cone_coord[k] = scale[k] * flat_coord[index[k]]. Off-diagonal entries of
// PSD factors carry the sqrt(2) isometry scale.
struct ConeLayout {
  std::vector<int> index;
  Eigen::VectorXd scale;

  Eigen::VectorXd to_cone(const Eigen::VectorXd& flat) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(index.size()));
    for (std::size_t k = 0; k < index.size(); ++k)
      out[static_cast<Eigen::Index>(k)] = scale[static_cast<Eigen::Index>(k)] * flat[index[k]];
    return out;
  }
  Eigen::MatrixXd transform_cov(const Eigen::MatrixXd& v_flat) const {
    const int d = static_cast<int>(index.size());
    Eigen::MatrixXd out(d, d);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        out(a, b) = scale[a] * scale[b] * v_flat(index[static_cast<std::size_t>(a)],
                                                 index[static_cast<std::size_t>(b)]);
    return out;
  }
};

inline ConeLayout cone_layout(int p, int r, const CovStructure& s) {
  const auto pairs = gamma_index_pairs(s, p);
  const int q = p + static_cast<int>(pairs.size()) + 1;
  ConeLayout layout;
  layout.index.reserve(static_cast<std::size_t>(q));
  std::vector<double> scales;
  for (int k = 0; k < p; ++k) {
    layout.index.push_back(k);
    scales.push_back(1.0);
  }
  auto push_gamma = [&](int pair_idx, bool in_psd_factor) {
    layout.index.push_back(p + pair_idx);
    const bool off_diag = pairs[static_cast<std::size_t>(pair_idx)].first !=
                          pairs[static_cast<std::size_t>(pair_idx)].second;
    scales.push_back(in_psd_factor && off_diag ? std::sqrt(2.0) : 1.0);
  };
  if (s.kind == CovStructure::Kind::full) {
    // group the lower triangle into the untested block, the cross block and
    // the tested block, column-major within each group
    std::vector<int> g1, g12, g2;
    for (int k = 0; k < static_cast<int>(pairs.size()); ++k) {
      const auto [i, j] = pairs[static_cast<std::size_t>(k)];
      if (i < p - r && j < p - r)
        g1.push_back(k);
      else if (j < p - r)
        g12.push_back(k);
      else
        g2.push_back(k);
    }
    for (int k : g1) push_gamma(k, false);
    for (int k : g12) push_gamma(k, false);
    for (int k : g2) push_gamma(k, true);
  } else if (s.kind == CovStructure::Kind::diagonal) {
    for (int k = 0; k < static_cast<int>(pairs.size()); ++k) push_gamma(k, false);
  } else {
    // block layout is already grouped; scale the tested trailing blocks
    const auto blocks = s.blocks_for(p);
    int tested = 0;
    std::size_t first_tested_block = blocks.size();
    for (std::size_t k = blocks.size(); k-- > 0 && tested < r;) {
      tested += blocks[k];
      first_tested_block = k;
    }
    int offset = 0, pair_idx = 0;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const int nb = blocks[k] * (blocks[k] + 1) / 2;
      for (int t = 0; t < nb; ++t) push_gamma(pair_idx++, k >= first_tested_block);
      offset += blocks[k];
    }
  }
  layout.index.push_back(q - 1);
  scales.push_back(1.0);
  layout.scale = Eigen::Map<Eigen::VectorXd>(scales.data(), static_cast<Eigen::Index>(scales.size()));
  return layout;
}

// ---------------------------------------------------------------------------
// Projection onto the cone in the V^{-1} metric:
//   argmin (z - theta)' V^{-1} (z - theta)  over theta in C.
// Accelerated projected gradient with exact per-factor Euclidean projectors
// and per-factor diagonal preconditioning.
// ---------------------------------------------------------------------------

struct Projection {
  Eigen::VectorXd proj;
  double dist2 = 0.0;
  int iterations = 0;
};

class ConeProjector {
 public:
  ConeProjector(const Cone& cone, const Eigen::MatrixXd& v, double kkt_tol = 1e-8,
                int max_iter = 10000)
      : cone_(cone), kkt_tol_(kkt_tol), max_iter_(max_iter) {
    const int d = cone.total_dim();
    if (v.rows() != d || v.cols() != d)
      throw Error("ConeProjector: metric dimension does not match cone");
    // one scale per factor; uniform within a factor so every factor set is preserved
    precond_ = Eigen::VectorXd::Ones(d);
    int offset = 0;
    for (const auto& f : cone.factors) {
      const int fd = f.dim();
      double g = 0.0;
      for (int k = 0; k < fd; ++k) g += std::log(std::max(v(offset + k, offset + k), 1e-300));
      const double s = std::exp(0.5 * g / std::max(fd, 1));
      for (int k = 0; k < fd; ++k) precond_[offset + k] = 1.0 / std::max(s, 1e-150);
      offset += fd;
    }
    Eigen::MatrixXd v_scaled = precond_.asDiagonal() * v * precond_.asDiagonal();
    chol_.compute(v_scaled);
    if (chol_.info() != Eigen::Success) throw Error("ConeProjector: metric not positive definite");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v_scaled, Eigen::EigenvaluesOnly);
    lambda_min_ = es.eigenvalues().minCoeff();
    if (lambda_min_ <= 0.0) throw Error("ConeProjector: metric not positive definite");
    step_ = lambda_min_;  // 1 / L with L = lambda_max(V^{-1}) = 1 / lambda_min(V)
    const double kappa = es.eigenvalues().maxCoeff() / lambda_min_;
    momentum_ = (std::sqrt(kappa) - 1.0) / (std::sqrt(kappa) + 1.0);
  }

  Projection project(const Eigen::VectorXd& z_in) const {
    const int d = cone_.total_dim();
    if (z_in.size() != d) throw Error("ConeProjector: point dimension mismatch");
    const Eigen::VectorXd z = precond_.asDiagonal() * z_in;

    Eigen::VectorXd x = euclid_project(z);
    Eigen::VectorXd x_prev = x;
    Eigen::VectorXd y = x;
    const double z2 = std::max(z.squaredNorm(), 1e-30);
    double f_prev = std::numeric_limits<double>::infinity();

    int iter = 0;
    bool converged = false;
    for (; iter < max_iter_; ++iter) {
      const Eigen::VectorXd grad = chol_.solve(y - z);
      Eigen::VectorXd x_next = euclid_project(y - step_ * grad);
      y = x_next + momentum_ * (x_next - x);
      x_prev = x;
      x = std::move(x_next);

      const Eigen::VectorXd resid = chol_.solve(z - x);  // V^{-1}(z - proj)
      const double f_cur = 0.5 * (z - x).dot(resid);
      if (f_cur > f_prev) y = x;  // restart momentum when the objective backslides
      f_prev = f_cur;
      if (std::abs(x.dot(resid)) <= kkt_tol_ * z2 && dual_feasible(resid, z2)) {
        converged = true;
        ++iter;
        break;
      }
    }
    if (!converged) throw Error("project_cone: iteration cap exceeded");

    Projection result;
    result.proj = precond_.cwiseInverse().asDiagonal() * x;
    const Eigen::VectorXd diff = z - x;
    result.dist2 = diff.dot(chol_.solve(diff));
    result.iterations = iter;
    return result;
  }

  // squared V^{-1}-norm of a point in original coordinates
  double metric_norm2(const Eigen::VectorXd& v_in) const {
    const Eigen::VectorXd v = precond_.asDiagonal() * v_in;
    return v.dot(chol_.solve(v));
  }

  const Cone& cone() const { return cone_; }

 private:
  Eigen::VectorXd euclid_project(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out = v;
    int offset = 0;
    for (const auto& f : cone_.factors) {
      const int fd = f.dim();
      switch (f.kind) {
        case ConeFactor::Kind::zero:
          out.segment(offset, fd).setZero();
          break;
        case ConeFactor::Kind::free:
          break;
        case ConeFactor::Kind::orthant:
          out.segment(offset, fd) = out.segment(offset, fd).cwiseMax(0.0);
          break;
        case ConeFactor::Kind::psd: {
          Eigen::MatrixXd m = unpack_sym(out.segment(offset, fd), f.size);
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
          const Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
          m = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
          pack_sym(m, out.segment(offset, fd));
          break;
        }
      }
      offset += fd;
    }
    return out;
  }

  bool dual_feasible(const Eigen::VectorXd& resid, double z2) const {
    const double tol = std::sqrt(kkt_tol_ * z2) * 10.0 + 1e-9;
    int offset = 0;
    for (const auto& f : cone_.factors) {
      const int fd = f.dim();
      switch (f.kind) {
        case ConeFactor::Kind::zero:
          break;  // polar is the whole space
        case ConeFactor::Kind::free:
          if (resid.segment(offset, fd).cwiseAbs().maxCoeff() > tol) return false;
          break;
        case ConeFactor::Kind::orthant:
          if (resid.segment(offset, fd).maxCoeff() > tol) return false;
          break;
        case ConeFactor::Kind::psd: {
          const Eigen::MatrixXd m = unpack_sym(resid.segment(offset, fd), f.size);
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
          if (es.eigenvalues().maxCoeff() > tol) return false;  // polar of PSD is -PSD
          break;
        }
      }
      offset += fd;
    }
    return true;
  }

  // isometric vector <-> symmetric matrix, lower triangle column-major
  static Eigen::MatrixXd unpack_sym(const Eigen::Ref<const Eigen::VectorXd>& v, int m) {
    Eigen::MatrixXd out(m, m);
    int k = 0;
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (int j = 0; j < m; ++j)
      for (int i = j; i < m; ++i) {
        const double val = i == j ? v[k] : v[k] * inv_sqrt2;
        out(i, j) = val;
        out(j, i) = val;
        ++k;
      }
    return out;
  }
  static void pack_sym(const Eigen::MatrixXd& m, Eigen::Ref<Eigen::VectorXd> v) {
    int k = 0;
    const double sqrt2 = std::sqrt(2.0);
    for (int j = 0; j < m.cols(); ++j)
      for (int i = j; i < m.rows(); ++i) {
        v[k] = i == j ? m(i, j) : m(i, j) * sqrt2;
        ++k;
      }
  }

  Cone cone_;
  double kkt_tol_;
  int max_iter_;
  Eigen::VectorXd precond_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  double lambda_min_ = 0.0;
  double step_ = 0.0;
  double momentum_ = 0.0;
};

inline Projection project_cone(const Eigen::VectorXd& z, const Cone& cone,
                               const Eigen::MatrixXd& v) {
  return ConeProjector(cone, v).project(z);
}

// Effective dimension of a projected point: free dims count fully, orthant
// coordinates when strictly positive, PSD factors by the rank of the
// projected matrix.
inline int effective_dimension(const Eigen::VectorXd& proj, const Cone& cone,
                               double rel_tol = 1e-8) {
  const double norm = proj.norm();
  int df = 0, offset = 0;
  for (const auto& f : cone.factors) {
    const int fd = f.dim();
    switch (f.kind) {
      case ConeFactor::Kind::zero:
        break;
      case ConeFactor::Kind::free:
        df += fd;
        break;
      case ConeFactor::Kind::orthant:
        for (int k = 0; k < fd; ++k)
          if (proj[offset + k] > rel_tol * norm) ++df;
        break;
      case ConeFactor::Kind::psd: {
        Eigen::MatrixXd m(f.size, f.size);
        int k = 0;
        const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        for (int j = 0; j < f.size; ++j)
          for (int i = j; i < f.size; ++i) {
            const double val = i == j ? proj[offset + k] : proj[offset + k] * inv_sqrt2;
            m(i, j) = val;
            m(j, i) = val;
            ++k;
          }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
        const double lambda_max = es.eigenvalues().maxCoeff();
        for (int e = 0; e < f.size; ++e)
          if (es.eigenvalues()[e] > rel_tol * std::max(lambda_max, 0.0) &&
              es.eigenvalues()[e] > 0.0)
            ++df;
        break;
      }
    }
    offset += fd;
  }
  return df;
}

}  // namespace varcomp
