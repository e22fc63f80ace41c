#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "varcomp/core.hpp"
#include "varcomp/estimation.hpp"
#include "varcomp/fisher.hpp"
#include "varcomp/lrt.hpp"
#include "varcomp/simlab.hpp"

namespace varcomp {

inline constexpr const char* version_string = "0.1.0";

using Json = nlohmann::ordered_json;

inline Json to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json to_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Json to_json(const Theta& theta) {
  return Json{{"beta", to_json(theta.beta)},
              {"gamma", to_json(theta.gamma)},
              {"sigma2", theta.sigma2}};
}

inline Json to_json(const FitResult& fit) {
  return Json{{"theta", to_json(fit.theta_hat)}, {"loglik", fit.loglik},
              {"loglik_se", fit.loglik_se},      {"converged", fit.converged},
              {"n_iter", fit.n_iter}};
}

inline Json to_json(const ChiBarSq& d) {
  Json out;
  out["weights"] = d.weights;
  out["support"] = d.support(0.0);
  out["source"] = d.source == WeightSource::closed_form ? "closed_form" : "monte_carlo";
  if (!d.se.empty()) out["se"] = d.se;
  if (d.n_samples > 0) out["n_samples"] = d.n_samples;
  return out;
}

inline Json to_json(const FisherInfo& info) {
  const char* source = info.source == FimSource::analytic ? "analytic"
                       : info.source == FimSource::numerical_hessian ? "numerical_hessian"
                                                                     : "score_outer_product";
  return Json{{"matrix", to_json(info.matrix)}, {"source", source}, {"clipped", info.psd_clipped}};
}

inline Json to_json(const Cone& cone) {
  Json factors = Json::array();
  for (const auto& f : cone.factors) {
    const char* kind = f.kind == ConeFactor::Kind::zero      ? "zero"
                       : f.kind == ConeFactor::Kind::free    ? "free"
                       : f.kind == ConeFactor::Kind::orthant ? "orthant"
                                                             : "psd";
    factors.push_back(Json{{"kind", kind}, {"size", f.size}});
  }
  return Json{{"factors", std::move(factors)}, {"total_dim", cone.total_dim()}};
}

inline Json to_json(const TestReport& report) {
  Json out;
  out["lrt"] = report.lrt;
  out["lrt_se"] = report.lrt_se;
  out["alpha"] = report.alpha;
  out["quantile"] = report.quantile_at_alpha;
  out["pvalue"] = report.pvalue;
  out["reject"] = report.reject;
  out["pvalue_source"] = report.pvalue_source;
  out["chibar"] = to_json(report.weights);
  out["cone"] = to_json(report.cone);
  if (report.tested_corr.size() > 0) {
    out["tested_correlation"] = to_json(report.tested_corr);
    if (report.tested_corr.rows() == 2) out["rho"] = report.tested_corr(0, 1);
  }
  if (report.has_fits) {
    out["fit_h0"] = to_json(report.fit_h0);
    out["fit_h1"] = to_json(report.fit_h1);
  }
  out["fisher"] = to_json(report.fisher);
  out["effect_order"] = report.perm.order;
  if (!report.warnings.empty()) out["warnings"] = report.warnings;
  return out;
}

inline Json to_json(const simlab::LevelTable& table, int n_individuals,
                    const std::string& structure) {
  Json rows = Json::array();
  for (const auto& row : table.rows)
    rows.push_back(Json{{"alpha", row.alpha},
                        {"N", n_individuals},
                        {"structure", structure},
                        {"threshold", row.threshold},
                        {"alpha_hat", row.alpha_hat},
                        {"se", row.se},
                        {"K_effective", row.k_effective}});
  return Json{{"rows", std::move(rows)}, {"dropped", table.n_dropped}, {"K", table.n_total}};
}

inline std::string level_csv_header() { return "alpha,N,structure,alpha_hat,se,K_effective"; }

inline std::string level_csv_rows(const simlab::LevelTable& table, int n_individuals,
                                  const std::string& structure) {
  std::ostringstream out;
  for (const auto& row : table.rows)
    out << row.alpha << ',' << n_individuals << ',' << structure << ',' << row.alpha_hat << ','
        << row.se << ',' << row.k_effective << '\n';
  return out.str();
}

inline void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << contents;
}

}  // namespace varcomp
