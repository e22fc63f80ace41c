#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace varcomp {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Relative eigenvalue tolerance for "is positive semi-definite" checks;
// chosen so that values survive round-trips through flat storage.
inline constexpr double tol_psd = 1e-10;

// ---------------------------------------------------------------------------
// Covariance structure of the random effects
// ---------------------------------------------------------------------------

struct CovStructure {
  enum class Kind { diagonal, full, block_diagonal };

  Kind kind = Kind::diagonal;
  std::vector<int> blocks;  // only for block_diagonal, sizes summing to p

  static CovStructure diagonal() { return {Kind::diagonal, {}}; }
  static CovStructure full() { return {Kind::full, {}}; }

  // One block of size p collapses to full, all-unit blocks to diagonal.
  static CovStructure block(std::vector<int> sizes) {
    if (sizes.empty()) throw Error("block structure needs at least one block");
    for (int s : sizes)
      if (s <= 0) throw Error("block sizes must be positive");
    if (sizes.size() == 1) return full();
    if (std::all_of(sizes.begin(), sizes.end(), [](int s) { return s == 1; }))
      return diagonal();
    return {Kind::block_diagonal, std::move(sizes)};
  }

  // Block decomposition view: diagonal is p unit blocks, full is one block.
  std::vector<int> blocks_for(int p) const {
    switch (kind) {
      case Kind::diagonal: return std::vector<int>(static_cast<std::size_t>(p), 1);
      case Kind::full: return {p};
      case Kind::block_diagonal: {
        int total = std::accumulate(blocks.begin(), blocks.end(), 0);
        if (total != p) throw Error("block sizes do not sum to p");
        return blocks;
      }
    }
    throw Error("unreachable");
  }

  bool operator==(const CovStructure& o) const { return kind == o.kind && blocks == o.blocks; }
};

// Flat positions of the Gamma parameters: for each block, the lower
// triangle in column-major order. This ordering is normative for all
// gradient, information-matrix and selection-matrix indexing.
inline std::vector<std::pair<int, int>> gamma_index_pairs(const CovStructure& s, int p) {
  std::vector<std::pair<int, int>> pairs;
  int offset = 0;
  for (int b : s.blocks_for(p)) {
    for (int j = 0; j < b; ++j)
      for (int i = j; i < b; ++i) pairs.emplace_back(offset + i, offset + j);
    offset += b;
  }
  return pairs;
}

inline int n_gamma_params(const CovStructure& s, int p) {
  return static_cast<int>(gamma_index_pairs(s, p).size());
}

// Dimension q of the flat parameter vector (beta, Gamma params, sigma^2).
inline int flat_dim(const CovStructure& s, int p) { return p + n_gamma_params(s, p) + 1; }

// ---------------------------------------------------------------------------
// Parameter vector
// ---------------------------------------------------------------------------

struct Theta {
  Eigen::VectorXd beta;   // fixed effects, length p
  Eigen::MatrixXd gamma;  // random-effect covariance, p x p symmetric PSD
  double sigma2 = 1.0;    // residual variance

  int p() const { return static_cast<int>(beta.size()); }
};

inline bool is_psd(const Eigen::MatrixXd& m, double rel_tol = tol_psd) {
  if (m.rows() != m.cols()) return false;
  if (m.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const double lambda_max = std::max(es.eigenvalues().maxCoeff(), 0.0);
  return es.eigenvalues().minCoeff() >= -rel_tol * std::max(lambda_max, 1.0);
}

inline void validate_theta(const Theta& theta, const CovStructure& s) {
  const int p = theta.p();
  if (theta.gamma.rows() != p || theta.gamma.cols() != p)
    throw Error("theta: gamma dimension does not match beta");
  if (!theta.gamma.isApprox(theta.gamma.transpose(), 1e-12) &&
      (theta.gamma - theta.gamma.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw Error("theta: gamma is not symmetric");
  if (!(theta.sigma2 > 0.0)) throw Error("theta: sigma2 must be positive");
  if (!is_psd(theta.gamma)) throw Error("theta: gamma is not positive semi-definite");
  // zero pattern must conform to the declared structure
  std::vector<std::vector<bool>> allowed(p, std::vector<bool>(p, false));
  int offset = 0;
  for (int b : s.blocks_for(p)) {
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j) allowed[offset + i][offset + j] = true;
    offset += b;
  }
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j)
      if (!allowed[i][j] && theta.gamma(i, j) != 0.0)
        throw Error("theta: gamma has nonzero entries outside the declared structure");
}

// Canonical flat ordering: beta_1..beta_p, Gamma parameters per
// gamma_index_pairs, sigma^2 last.
inline Eigen::VectorXd theta_flatten(const Theta& theta, const CovStructure& s) {
  const int p = theta.p();
  const auto pairs = gamma_index_pairs(s, p);
  Eigen::VectorXd v(p + static_cast<int>(pairs.size()) + 1);
  v.head(p) = theta.beta;
  for (std::size_t k = 0; k < pairs.size(); ++k)
    v[p + static_cast<int>(k)] = theta.gamma(pairs[k].first, pairs[k].second);
  v[v.size() - 1] = theta.sigma2;
  return v;
}

inline Theta theta_unflatten(const Eigen::VectorXd& v, const CovStructure& s, int p) {
  const auto pairs = gamma_index_pairs(s, p);
  if (v.size() != p + static_cast<int>(pairs.size()) + 1)
    throw Error("theta_unflatten: length mismatch");
  Theta theta;
  theta.beta = v.head(p);
  theta.gamma = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    theta.gamma(i, j) = v[p + static_cast<int>(k)];
    theta.gamma(j, i) = v[p + static_cast<int>(k)];
  }
  theta.sigma2 = v[v.size() - 1];
  return theta;
}

// ---------------------------------------------------------------------------
// Hypothesis: which random-effect variances are tested to be zero
// ---------------------------------------------------------------------------

struct HypothesisSpec {
  std::vector<int> tested;  // 0-based effect indices, distinct

  int r() const { return static_cast<int>(tested.size()); }
};

inline void validate_hypothesis(const HypothesisSpec& h, int p, const CovStructure& s) {
  if (h.tested.empty()) throw Error("hypothesis: no effects tested");
  std::vector<int> t = h.tested;
  std::sort(t.begin(), t.end());
  if (std::adjacent_find(t.begin(), t.end()) != t.end())
    throw Error("hypothesis: duplicate tested index");
  if (t.front() < 0 || t.back() >= p) throw Error("hypothesis: tested index out of range");
  if (s.kind == CovStructure::Kind::block_diagonal) {
    // tested set must be a union of whole blocks
    int offset = 0;
    for (int b : s.blocks_for(p)) {
      int hit = 0;
      for (int i = 0; i < b; ++i)
        hit += std::binary_search(t.begin(), t.end(), offset + i) ? 1 : 0;
      if (hit != 0 && hit != b)
        throw Error("hypothesis: tested set must be a union of whole blocks");
      offset += b;
    }
  }
}

struct EffectPermutation {
  // order[new_index] = old_index; tested effects occupy the trailing positions
  std::vector<int> order;
  CovStructure permuted_structure;  // blocks reordered alongside the effects
  HypothesisSpec permuted_h;        // tested = {p-r, .., p-1}

  int apply(int old_index) const {
    for (std::size_t k = 0; k < order.size(); ++k)
      if (order[k] == old_index) return static_cast<int>(k);
    throw Error("permutation: index out of range");
  }
  bool is_identity() const {
    for (std::size_t k = 0; k < order.size(); ++k)
      if (order[k] != static_cast<int>(k)) return false;
    return true;
  }
};

inline EffectPermutation tested_last_permutation(int p, const HypothesisSpec& h,
                                                 const CovStructure& s) {
  validate_hypothesis(h, p, s);
  std::vector<int> tested = h.tested;
  std::sort(tested.begin(), tested.end());
  EffectPermutation perm;
  if (s.kind == CovStructure::Kind::block_diagonal) {
    // move tested blocks (whole) to the back, preserving within-block order
    std::vector<int> kept_blocks, moved_blocks;
    std::vector<int> kept_idx, moved_idx;
    int offset = 0;
    for (int b : s.blocks_for(p)) {
      const bool is_tested = std::binary_search(tested.begin(), tested.end(), offset);
      for (int i = 0; i < b; ++i) (is_tested ? moved_idx : kept_idx).push_back(offset + i);
      (is_tested ? moved_blocks : kept_blocks).push_back(b);
      offset += b;
    }
    perm.order = kept_idx;
    perm.order.insert(perm.order.end(), moved_idx.begin(), moved_idx.end());
    std::vector<int> sizes = kept_blocks;
    sizes.insert(sizes.end(), moved_blocks.begin(), moved_blocks.end());
    perm.permuted_structure = CovStructure::block(std::move(sizes));
  } else {
    for (int i = 0; i < p; ++i)
      if (!std::binary_search(tested.begin(), tested.end(), i)) perm.order.push_back(i);
    perm.order.insert(perm.order.end(), tested.begin(), tested.end());
    perm.permuted_structure = s;
  }
  for (int i = p - h.r(); i < p; ++i) perm.permuted_h.tested.push_back(i);
  return perm;
}

// Symmetric row/column reordering of theta so the tested effects come last.
inline std::pair<Theta, EffectPermutation> permute_to_tested_last(const Theta& theta,
                                                                  const HypothesisSpec& h,
                                                                  const CovStructure& s) {
  const int p = theta.p();
  EffectPermutation perm = tested_last_permutation(p, h, s);
  Theta out;
  out.beta.resize(p);
  out.gamma.resize(p, p);
  for (int i = 0; i < p; ++i) {
    out.beta[i] = theta.beta[perm.order[i]];
    for (int j = 0; j < p; ++j) out.gamma(i, j) = theta.gamma(perm.order[i], perm.order[j]);
  }
  out.sigma2 = theta.sigma2;
  return {std::move(out), std::move(perm)};
}

// Inverse reordering, for reporting fitted parameters in user order.
inline Theta permute_back(const Theta& theta, const EffectPermutation& perm) {
  const int p = theta.p();
  Theta out;
  out.beta.resize(p);
  out.gamma.resize(p, p);
  for (int i = 0; i < p; ++i) {
    out.beta[perm.order[i]] = theta.beta[i];
    for (int j = 0; j < p; ++j) out.gamma(perm.order[i], perm.order[j]) = theta.gamma(i, j);
  }
  out.sigma2 = theta.sigma2;
  return out;
}

// ---------------------------------------------------------------------------
// Longitudinal data
// ---------------------------------------------------------------------------

struct Individual {
  std::string id;
  Eigen::VectorXd x;  // per-observation covariate, length J_i
  Eigen::VectorXd y;  // observations, length J_i
};

struct Dataset {
  std::vector<Individual> individuals;

  int n() const { return static_cast<int>(individuals.size()); }
  int total_obs() const {
    int t = 0;
    for (const auto& ind : individuals) t += static_cast<int>(ind.y.size());
    return t;
  }
  bool balanced() const {
    for (const auto& ind : individuals)
      if (ind.y.size() != individuals.front().y.size()) return false;
    return true;
  }
  // true when every individual shares the same covariate vector
  bool shared_design() const {
    if (!balanced()) return false;
    for (const auto& ind : individuals)
      if (ind.x != individuals.front().x) return false;
    return true;
  }
};

inline void validate_dataset(const Dataset& data) {
  if (data.individuals.empty()) throw Error("dataset: no individuals");
  for (const auto& ind : data.individuals) {
    if (ind.y.size() == 0) throw Error("dataset: individual '" + ind.id + "' has no observations");
    if (ind.x.size() != ind.y.size())
      throw Error("dataset: covariate/observation length mismatch for '" + ind.id + "'");
  }
}

}  // namespace varcomp
