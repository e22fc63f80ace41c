// varcomp: likelihood ratio tests for variance components in (non)linear
// mixed effects models, with chi-bar-square limiting distributions.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "varcomp/chibar.hpp"
#include "varcomp/dataset_io.hpp"
#include "varcomp/estimation.hpp"
#include "varcomp/lrt.hpp"
#include "varcomp/report.hpp"
#include "varcomp/simlab.hpp"

namespace {

using varcomp::Error;
using Json = varcomp::Json;

varcomp::CovStructure parse_structure(const std::string& text) {
  if (text == "diag" || text == "diagonal") return varcomp::CovStructure::diagonal();
  if (text == "full") return varcomp::CovStructure::full();
  if (text.rfind("block:", 0) == 0) {
    std::vector<int> sizes;
    std::stringstream ss(text.substr(6));
    std::string tok;
    while (std::getline(ss, tok, ',')) sizes.push_back(std::stoi(tok));
    return varcomp::CovStructure::block(sizes);
  }
  throw Error("unknown structure '" + text + "' (expected diag, full or block:sizes)");
}

std::vector<int> parse_indices(const std::string& text, int p) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const int idx = std::stoi(tok);
    if (idx < 1 || idx > p)
      throw Error("effect index " + tok + " out of range 1.." + std::to_string(p));
    out.push_back(idx - 1);
  }
  if (out.empty()) throw Error("empty index list");
  return out;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

Eigen::MatrixXd load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open matrix file '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    rows.push_back(parse_doubles(line));
  }
  if (rows.empty()) throw Error("empty matrix file '" + path + "'");
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw Error("ragged matrix file '" + path + "'");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

varcomp::Cone parse_cone(const std::string& text) {
  varcomp::Cone cone;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos) throw Error("cone factor '" + tok + "' needs kind:size");
    const std::string kind = tok.substr(0, colon);
    const int size = std::stoi(tok.substr(colon + 1));
    if (kind == "zero")
      cone.factors.push_back(varcomp::ConeFactor::zero(size));
    else if (kind == "free")
      cone.factors.push_back(varcomp::ConeFactor::free_space(size));
    else if (kind == "orthant")
      cone.factors.push_back(varcomp::ConeFactor::orthant(size));
    else if (kind == "psd")
      cone.factors.push_back(varcomp::ConeFactor::psd(size));
    else
      throw Error("unknown cone factor kind '" + kind + "'");
  }
  return cone;
}

// flags override config-file values; the environment seed is the last fallback
class ConfigResolver {
 public:
  explicit ConfigResolver(const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file '" + path + "'");
    try {
      in >> config_;
    } catch (const std::exception& e) {
      throw Error("config file '" + path + "': " + e.what());
    }
  }

  template <typename T>
  void fill(const CLI::Option* opt, const std::string& key, T& value) const {
    if (opt != nullptr && opt->count() > 0) return;
    if (config_.contains(key)) value = config_.at(key).get<T>();
  }

  std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t value) const {
    if (opt != nullptr && opt->count() > 0) return value;
    if (config_.contains("seed")) return config_.at("seed").get<std::uint64_t>();
    if (const char* env = std::getenv("VARCOMP_SEED")) return std::strtoull(env, nullptr, 10);
    return value;
  }

 private:
  Json config_ = Json::object();
};

void emit(const Json& payload, const std::string& out_path) {
  const std::string text = payload.dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    varcomp::write_file(out_path, text);
}

struct ModelArgs {
  std::string data_path;
  std::string model_name = "linear";
  int p = 2;
  std::string structure_text = "diag";
  int mc_samples = 10000;
  std::uint64_t seed = 0;
  int jobs = 0;
  std::string out_path;
  std::string config_path;
};

void add_model_options(CLI::App* cmd, ModelArgs& args) {
  cmd->add_option("--data", args.data_path, "long CSV with columns id,x,y")->required();
  cmd->add_option("--model", args.model_name, "mean structure: linear, logistic or quadratic");
  cmd->add_option("--p", args.p, "number of random effects");
  cmd->add_option("--structure", args.structure_text, "covariance: diag, full or block:sizes");
  cmd->add_option("--mc-samples", args.mc_samples, "Monte-Carlo draws per individual");
  cmd->add_option("--seed", args.seed, "RNG seed (VARCOMP_SEED as fallback)");
  cmd->add_option("--jobs", args.jobs, "worker threads (0 = all cores)");
  cmd->add_option("--out", args.out_path, "write the JSON report here instead of stdout");
  cmd->add_option("--config", args.config_path, "JSON file with defaults for these options");
}

void resolve_model_args(const CLI::App* cmd, ModelArgs& args, const ConfigResolver& config) {
  config.fill(cmd->get_option("--model"), "model", args.model_name);
  config.fill(cmd->get_option("--p"), "p", args.p);
  config.fill(cmd->get_option("--structure"), "structure", args.structure_text);
  config.fill(cmd->get_option("--mc-samples"), "mc_samples", args.mc_samples);
  config.fill(cmd->get_option("--jobs"), "jobs", args.jobs);
  args.seed = config.resolve_seed(cmd->get_option("--seed"), args.seed);
}

Json config_echo(const ModelArgs& args) {
  return Json{{"data", args.data_path},
              {"model", args.model_name},
              {"p", args.p},
              {"structure", args.structure_text},
              {"mc_samples", args.mc_samples},
              {"jobs", args.jobs}};
}

// ---------------------------------------------------------------------------

int cmd_fit(const CLI::App* cmd, ModelArgs& args, const std::string& tested_text) {
  ConfigResolver config(args.config_path);
  resolve_model_args(cmd, args, config);
  const varcomp::CovStructure structure = parse_structure(args.structure_text);
  const varcomp::ModelSpec model = varcomp::make_model(args.model_name, args.p, structure);
  const varcomp::Dataset data = varcomp::load_dataset(args.data_path);
  std::optional<varcomp::HypothesisSpec> h;
  if (!tested_text.empty()) h = varcomp::HypothesisSpec{parse_indices(tested_text, args.p)};
  std::optional<varcomp::McConfig> mc;
  if (!model.is_linear()) mc = varcomp::McConfig{args.mc_samples, args.seed, std::nullopt};
  varcomp::FitOptions options;
  options.jobs = args.jobs <= 0 ? varcomp::default_jobs() : args.jobs;

  const varcomp::FitResult result =
      varcomp::fit(model, data, structure, h, mc, std::nullopt, options);
  Json payload{{"version", varcomp::version_string},
               {"seed", args.seed},
               {"config", config_echo(args)},
               {"fit", varcomp::to_json(result)}};
  if (h) payload["config"]["null_tested"] = tested_text;
  emit(payload, args.out_path);
  return result.converged ? 0 : 2;
}

int cmd_test(const CLI::App* cmd, ModelArgs& args, const std::string& tested_text, double alpha,
             const std::string& weights_text, const std::string& fim_at) {
  ConfigResolver config(args.config_path);
  resolve_model_args(cmd, args, config);
  const varcomp::CovStructure structure = parse_structure(args.structure_text);
  const varcomp::ModelSpec model = varcomp::make_model(args.model_name, args.p, structure);
  const varcomp::Dataset data = varcomp::load_dataset(args.data_path);
  const varcomp::HypothesisSpec h{parse_indices(tested_text, args.p)};
  const varcomp::McConfig mc{args.mc_samples, args.seed, std::nullopt};

  varcomp::TestOptions options;
  options.jobs = args.jobs <= 0 ? varcomp::default_jobs() : args.jobs;
  options.fit_options.jobs = options.jobs;
  if (weights_text == "closed")
    options.weights_mode = varcomp::WeightsMode::closed;
  else if (weights_text == "mc")
    options.weights_mode = varcomp::WeightsMode::mc;
  else if (weights_text == "tail")
    options.weights_mode = varcomp::WeightsMode::tail;
  else if (weights_text != "auto")
    throw Error("unknown weights mode '" + weights_text + "'");
  options.fim_at_alt = fim_at == "alt";
  if (fim_at != "alt" && fim_at != "null")
    throw Error("unknown --fim-at value '" + fim_at + "' (expected null or alt)");

  const varcomp::TestReport report =
      varcomp::run_test(model, data, structure, h, alpha, mc, options);
  Json payload{{"version", varcomp::version_string},
               {"seed", args.seed},
               {"config", config_echo(args)},
               {"test", varcomp::to_json(report)}};
  payload["config"]["tested"] = tested_text;
  payload["config"]["alpha"] = alpha;
  payload["config"]["weights"] = weights_text;
  payload["config"]["fim_at"] = fim_at;
  emit(payload, args.out_path);
  return 0;
}

int cmd_chibar(const std::string& what, const std::string& weights_text,
               const std::string& corr_text, int r, const std::string& cone_text,
               const std::string& fim_path, double alpha, double t_value, long n_draws,
               std::uint64_t seed, const std::string& out_path) {
  varcomp::ChiBarSq dist;
  if (!weights_text.empty()) {
    dist.weights = parse_doubles(weights_text);
    dist.source = varcomp::WeightSource::closed_form;
    varcomp::validate_weights(dist, 1e-9);
  } else if (!corr_text.empty()) {
    Eigen::MatrixXd corr;
    if (corr_text.rfind("rho=", 0) == 0) {
      if (r != 2 && r != 1) throw Error("--corr rho=VALUE needs --r 1 or 2");
      const double rho = std::stod(corr_text.substr(4));
      corr = Eigen::MatrixXd::Identity(r, r);
      if (r == 2) corr(0, 1) = corr(1, 0) = rho;
    } else {
      corr = load_matrix_csv(corr_text);
      if (r > 0 && corr.rows() != r) throw Error("--r does not match the correlation matrix");
    }
    dist = varcomp::weights_closed_form(corr);
  } else if (!cone_text.empty()) {
    if (fim_path.empty()) throw Error("--cone needs --fim FILE with the information matrix");
    const varcomp::Cone cone = parse_cone(cone_text);
    const Eigen::MatrixXd info = load_matrix_csv(fim_path);
    Eigen::LLT<Eigen::MatrixXd> chol(info);
    if (chol.info() != Eigen::Success) throw Error("information matrix is not positive definite");
    const Eigen::MatrixXd v = chol.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
    dist = varcomp::weights_mc(cone, 0.5 * (v + v.transpose()), n_draws, seed,
                               varcomp::default_jobs());
  } else {
    throw Error("chibar needs --weights, --corr or --cone");
  }

  Json payload{{"version", varcomp::version_string}, {"chibar", varcomp::to_json(dist)}};
  char buffer[64];
  std::string printed;
  if (what == "quantile") {
    const double q = varcomp::chibar_quantile(dist, alpha);
    payload["alpha"] = alpha;
    payload["quantile"] = q;
    std::snprintf(buffer, sizeof(buffer), "%.6g", q);
    printed = buffer;
  } else if (what == "pvalue") {
    const double p = varcomp::chibar_pvalue(dist, t_value);
    payload["t"] = t_value;
    payload["pvalue"] = p;
    std::snprintf(buffer, sizeof(buffer), "%.6g", p);
    printed = buffer;
  } else if (what == "weights") {
    for (std::size_t i = 0; i < dist.weights.size(); ++i) {
      std::snprintf(buffer, sizeof(buffer), "%.6g", dist.weights[i]);
      printed += (i == 0 ? "" : ",") + std::string(buffer);
    }
  } else {
    throw Error("chibar action must be quantile, pvalue or weights");
  }
  std::cout << printed << "\n";
  if (!out_path.empty()) varcomp::write_file(out_path, payload.dump(2) + "\n");
  return 0;
}

// reference empirical levels from the original study, for the summary line
struct Reference {
  const char* scenario;
  const char* structure;
  int n;
  double alpha;
  double value;
};

constexpr Reference reference_levels[] = {
    {"table1", "diag", 100, 0.01, 0.008}, {"table1", "diag", 100, 0.05, 0.040},
    {"table1", "diag", 100, 0.10, 0.084}, {"table1", "diag", 500, 0.01, 0.008},
    {"table1", "diag", 500, 0.05, 0.044}, {"table1", "diag", 500, 0.10, 0.089},
    {"table1", "full", 100, 0.01, 0.008}, {"table1", "full", 100, 0.05, 0.040},
    {"table1", "full", 100, 0.10, 0.085}, {"table1", "full", 500, 0.01, 0.009},
    {"table1", "full", 500, 0.05, 0.045}, {"table1", "full", 500, 0.10, 0.092},
    {"table2", "diag", 100, 0.01, 0.008}, {"table2", "diag", 100, 0.05, 0.045},
    {"table2", "diag", 100, 0.10, 0.088}, {"table2", "diag", 500, 0.01, 0.009},
    {"table2", "diag", 500, 0.05, 0.049}, {"table2", "diag", 500, 0.10, 0.097},
    {"table2", "full", 100, 0.01, 0.007}, {"table2", "full", 100, 0.05, 0.040},
    {"table2", "full", 100, 0.10, 0.082}, {"table2", "full", 500, 0.01, 0.008},
    {"table2", "full", 500, 0.05, 0.044}, {"table2", "full", 500, 0.10, 0.093},
    {"table3", "correct", 500, 0.01, 0.009}, {"table3", "correct", 500, 0.05, 0.045},
    {"table3", "correct", 500, 0.10, 0.092}, {"table3", "wrong", 500, 0.01, 0.050},
    {"table3", "wrong", 500, 0.05, 0.174},   {"table3", "wrong", 500, 0.10, 0.311},
    {"table4", "diag", 100, 0.01, 0.007}, {"table4", "diag", 100, 0.05, 0.036},
    {"table4", "diag", 100, 0.10, 0.074}, {"table4", "diag", 500, 0.01, 0.007},
    {"table4", "diag", 500, 0.05, 0.045}, {"table4", "diag", 500, 0.10, 0.090},
    {"table4", "diag", 800, 0.01, 0.010}, {"table4", "diag", 800, 0.05, 0.048},
    {"table4", "diag", 800, 0.10, 0.096},
    {"table5", "diag-p2", 500, 0.01, 0.003}, {"table5", "diag-p2", 500, 0.05, 0.038},
    {"table5", "diag-p2", 500, 0.10, 0.082}, {"table5", "full-p2", 500, 0.01, 0.007},
    {"table5", "full-p2", 500, 0.05, 0.033}, {"table5", "full-p2", 500, 0.10, 0.073},
    {"table5", "diag-p3", 500, 0.01, 0.000}, {"table5", "diag-p3", 500, 0.05, 0.040},
    {"table5", "diag-p3", 500, 0.10, 0.077}, {"table5", "full-p3", 500, 0.01, 0.003},
    {"table5", "full-p3", 500, 0.05, 0.033}, {"table5", "full-p3", 500, 0.10, 0.073},
};

std::optional<double> reference_for(const std::string& scenario, const std::string& structure,
                                    int n, double alpha) {
  for (const auto& ref : reference_levels)
    if (scenario == ref.scenario && structure == ref.structure && n == ref.n &&
        std::abs(alpha - ref.alpha) < 1e-12)
      return ref.value;
  return std::nullopt;
}

void print_level_summary(const std::string& scenario, const std::string& structure,
                         const varcomp::simlab::LevelTable& table, int n) {
  for (const auto& row : table.rows) {
    std::printf("%s %s N=%d alpha=%.2f: alpha_hat=%.4f (se %.4f, K=%d", scenario.c_str(),
                structure.c_str(), n, row.alpha, row.alpha_hat, row.se, row.k_effective);
    if (const auto ref = reference_for(scenario, structure, n, row.alpha))
      std::printf(", reference %.3f", *ref);
    std::printf(")\n");
  }
  if (table.n_dropped > 0) std::printf("  dropped replications: %d\n", table.n_dropped);
}

int cmd_simulate(const std::string& scenario, int k_reps, int n_individuals, std::uint64_t seed,
                 int jobs, const std::string& out_dir) {
  using namespace varcomp::simlab;
  if (jobs <= 0) jobs = varcomp::default_jobs();
  std::string csv = varcomp::level_csv_header() + "\n";
  auto finish = [&](const std::string& name) {
    const std::string path = out_dir + "/" + name + ".csv";
    varcomp::write_file(path, csv);
    std::printf("wrote %s\n", path.c_str());
    return 0;
  };

  auto configure = [&](ScenarioSpec spec) {
    if (k_reps > 0) spec.replications = k_reps;
    if (n_individuals > 0) spec.n_individuals = n_individuals;
    spec.seed = seed;
    return spec;
  };

  if (scenario == "table1" || scenario == "table2") {
    const int p = scenario == "table1" ? 2 : 3;
    for (const auto& structure_name : {std::string("diag"), std::string("full")}) {
      ScenarioSpec spec = configure(defaults::m1(p, parse_structure(structure_name)));
      const LevelTable table = empirical_level(spec, jobs);
      print_level_summary(scenario, structure_name, table, spec.n_individuals);
      csv += varcomp::level_csv_rows(table, spec.n_individuals, structure_name);
    }
    return finish(scenario);
  }
  if (scenario == "table3") {
    ScenarioSpec spec = configure(defaults::m1(2, varcomp::CovStructure::full()));
    const auto outcomes = run_replications(spec, jobs);
    const LevelTable correct = score_outcomes(outcomes, scenario_limit(spec), spec.alphas);
    const LevelTable mis =
        score_outcomes(outcomes, varcomp::weights_half_pair(0), spec.alphas);
    print_level_summary("table3", "correct", correct, spec.n_individuals);
    print_level_summary("table3", "wrong", mis, spec.n_individuals);
    csv += varcomp::level_csv_rows(correct, spec.n_individuals, "correct");
    csv += varcomp::level_csv_rows(mis, spec.n_individuals, "wrong");
    return finish(scenario);
  }
  if (scenario == "table4") {
    ScenarioSpec spec = configure(defaults::m1_leading_pair());
    const LevelTable table = empirical_level(spec, jobs);
    print_level_summary("table4", "diag", table, spec.n_individuals);
    csv += varcomp::level_csv_rows(table, spec.n_individuals, "diag");
    return finish(scenario);
  }
  if (scenario == "table5") {
    for (int p : {2, 3}) {
      for (const auto& structure_name : {std::string("diag"), std::string("full")}) {
        ScenarioSpec spec = configure(defaults::m2(p, parse_structure(structure_name)));
        const LevelTable table = empirical_level(spec, jobs);
        const std::string label = structure_name + "-p" + std::to_string(p);
        print_level_summary("table5", label, table, spec.n_individuals);
        csv += varcomp::level_csv_rows(table, spec.n_individuals, label);
      }
    }
    return finish(scenario);
  }
  if (scenario == "power") {
    std::string dat = "# tested_sd power se\n";
    for (double sd : {2.0, 5.0, 7.0}) {
      ScenarioSpec spec = configure(defaults::m2(2, varcomp::CovStructure::diagonal(), sd));
      const PowerPoint point = empirical_power(spec, 0.05, jobs);
      std::printf("power at tested sd %.1f: %.3f (se %.3f, K=%d)\n", sd, point.power, point.se,
                  point.k_effective);
      csv += "0.05," + std::to_string(spec.n_individuals) + ",power-sd" +
             std::to_string(static_cast<int>(sd)) + "," + std::to_string(point.power) + "," +
             std::to_string(point.se) + "," + std::to_string(point.k_effective) + "\n";
      dat += std::to_string(sd) + " " + std::to_string(point.power) + " " +
             std::to_string(point.se) + "\n";
    }
    varcomp::write_file(out_dir + "/power.dat", dat);
    return finish(scenario);
  }
  throw Error("unknown scenario '" + scenario + "' (expected table1..table5 or power)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variance-component likelihood ratio tests for mixed effects models"};
  app.require_subcommand(1);

  ModelArgs fit_args, test_args;
  std::string fit_tested, test_tested;
  double alpha = 0.05;
  std::string weights_mode = "auto", fim_at = "null";

  CLI::App* fit_cmd = app.add_subcommand("fit", "maximum likelihood fit");
  add_model_options(fit_cmd, fit_args);
  fit_cmd->add_option("--null-tested", fit_tested,
                      "1-based effect indices frozen at zero variance");

  CLI::App* test_cmd = app.add_subcommand("test", "variance-component likelihood ratio test");
  add_model_options(test_cmd, test_args);
  test_cmd->add_option("--tested", test_tested, "1-based effect indices under test")->required();
  test_cmd->add_option("--alpha", alpha, "nominal level");
  test_cmd->add_option("--weights", weights_mode, "weight computation: auto, closed, mc or tail");
  test_cmd->add_option("--fim-at", fim_at, "information evaluated at the null or alt fit");

  CLI::App* chibar_cmd = app.add_subcommand("chibar", "chi-bar-square utilities");
  std::string chibar_what, chibar_weights, chibar_corr, chibar_cone, chibar_fim, chibar_out;
  int chibar_r = 0;
  double chibar_alpha = 0.05, chibar_t = 0.0;
  long chibar_n = 100000;
  std::uint64_t chibar_seed = 0;
  chibar_cmd->add_option("action", chibar_what, "quantile, pvalue or weights")->required();
  chibar_cmd->add_option("--weights", chibar_weights, "mixture weights w0,w1,...");
  chibar_cmd->add_option("--corr", chibar_corr, "rho=VALUE or a CSV correlation matrix");
  chibar_cmd->add_option("--r", chibar_r, "number of tested variances");
  chibar_cmd->add_option("--cone", chibar_cone, "cone spec, e.g. zero:2,orthant:1,zero:1");
  chibar_cmd->add_option("--fim", chibar_fim, "CSV information matrix in cone coordinates");
  chibar_cmd->add_option("--alpha", chibar_alpha, "level for quantile");
  chibar_cmd->add_option("--t", chibar_t, "statistic value for pvalue");
  chibar_cmd->add_option("--n", chibar_n, "Monte-Carlo draws for --cone weights");
  chibar_cmd->add_option("--seed", chibar_seed, "RNG seed");
  chibar_cmd->add_option("--out", chibar_out, "write the JSON report here");

  CLI::App* sim_cmd = app.add_subcommand("simulate", "replication experiments");
  std::string scenario, out_dir = ".";
  int sim_k = 0, sim_n = 0, sim_jobs = 0;
  std::uint64_t sim_seed = 1;
  sim_cmd->add_option("--scenario", scenario, "table1..table5 or power")->required();
  sim_cmd->add_option("--K", sim_k, "replications per cell");
  sim_cmd->add_option("--N", sim_n, "individuals per dataset");
  sim_cmd->add_option("--seed", sim_seed, "RNG seed");
  sim_cmd->add_option("--jobs", sim_jobs, "worker threads");
  sim_cmd->add_option("--out-dir", out_dir, "directory for CSV tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(fit_cmd, fit_args, fit_tested);
    if (test_cmd->parsed())
      return cmd_test(test_cmd, test_args, test_tested, alpha, weights_mode, fim_at);
    if (chibar_cmd->parsed())
      return cmd_chibar(chibar_what, chibar_weights, chibar_corr, chibar_r, chibar_cone,
                        chibar_fim, chibar_alpha, chibar_t, chibar_n, chibar_seed, chibar_out);
    if (sim_cmd->parsed()) return cmd_simulate(scenario, sim_k, sim_n, sim_seed, sim_jobs, out_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
