#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <Eigen/Dense>

#include "varcomp/core.hpp"
#include "varcomp/model.hpp"
#include "varcomp/rng.hpp"

namespace testutil {

class TempFile {
 public:
  explicit TempFile(const std::string& contents = "") {
    path_ = (std::filesystem::temp_directory_path() /
             ("varcomp_test_" + std::to_string(counter_++) + "_" +
              std::to_string(::getpid()) + ".csv"))
                .string();
    if (!contents.empty()) {
      std::ofstream out(path_);
      out << contents;
    }
  }
  ~TempFile() { std::filesystem::remove(path_); }
  const std::string& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  std::string path_;
};

// random parameter point conforming to the structure (PSD Gamma, sigma2 > 0)
inline varcomp::Theta random_theta(int p, const varcomp::CovStructure& s, std::uint64_t seed) {
  varcomp::rng::Stream stream(seed, varcomp::rng::StreamKind::generic, 42);
  varcomp::Theta theta;
  theta.beta = stream.normal_vector(p);
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(p, p);
  int offset = 0;
  for (int b : s.blocks_for(p)) {
    for (int j = 0; j < b; ++j)
      for (int i = j; i < b; ++i) l(offset + i, offset + j) = stream.next_normal();
    offset += b;
  }
  theta.gamma = l * l.transpose();
  theta.sigma2 = std::exp(stream.next_normal());
  return theta;
}

// small synthetic longitudinal dataset: phi_i ~ N(beta, Gamma), iid noise
inline varcomp::Dataset simulate_dataset(const varcomp::ModelSpec& model,
                                         const varcomp::Theta& theta, const Eigen::VectorXd& x,
                                         int n, std::uint64_t seed) {
  varcomp::Dataset data;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(theta.gamma);
  const Eigen::MatrixXd root =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
      es.eigenvectors().transpose();
  for (int i = 0; i < n; ++i) {
    varcomp::rng::Stream stream(seed, varcomp::rng::StreamKind::generic,
                                static_cast<std::uint64_t>(i) + 1);
    varcomp::Individual ind;
    ind.id = "i" + std::to_string(i);
    ind.x = x;
    const Eigen::VectorXd phi = theta.beta + root * stream.normal_vector(theta.p());
    Eigen::VectorXd mean;
    model.conditional_mean(phi, x, mean);
    ind.y = mean + std::sqrt(theta.sigma2) * stream.normal_vector(x.size());
    data.individuals.push_back(std::move(ind));
  }
  return data;
}

}  // namespace testutil
