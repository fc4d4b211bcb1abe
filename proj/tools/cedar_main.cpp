#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "cedar/common.hpp"
#include "cedar/csv.hpp"
#include "cedar/harness.hpp"
#include "cedar/model.hpp"
#include "cedar/privacy.hpp"

namespace fs = std::filesystem;

namespace {

void emit(const std::string& out, const std::string& text) {
  if (out == "-") {
    std::cout << text;
  } else {
    cedar::write_text_file(out, text);
    std::cout << "wrote " << out << "\n";
  }
}

cedar::Alternative parse_alternative_flag(const std::string& s) {
  if (s == "two_sided") return cedar::Alternative::TwoSided;
  if (s == "greater") return cedar::Alternative::Greater;
  if (s == "less") return cedar::Alternative::Less;
  cedar::fail("unknown alternative \"", s,
              "\" (use two_sided | greater | less)");
}

int run_simulate(const std::string& out_dir, int p, int n, int M,
                 double sigma0_sq, std::uint64_t seed) {
  cedar::require(p >= 1 && n >= p && M >= 1,
                 "simulate: need p >= 1, n >= p, M >= 1");
  cedar::require(sigma0_sq > 0.0, "simulate: sigma0_sq must be positive");
  const cedar::VectorXd beta0 =
      cedar::sparse_uniform_beta0(p, cedar::derive_seed(seed, 1, 0));
  const cedar::GroundTruth truth = cedar::make_truth(
      beta0, sigma0_sq,
      cedar::mixed_feature_laws(p, cedar::derive_seed(seed, 2, 0)));
  fs::create_directories(out_dir);
  for (int m = 1; m <= M; ++m) {
    const cedar::SiteData data = cedar::generate_site_data(
        truth, n, cedar::derive_seed(seed, 3, 0, m), m);
    const fs::path path = fs::path(out_dir) / ("site" + std::to_string(m) +
                                               ".csv");
    cedar::write_site_csv(path, data);
    std::cout << "wrote " << path.string() << "\n";
  }
  nlohmann::json truth_doc;
  truth_doc["p"] = p;
  truth_doc["n"] = n;
  truth_doc["M"] = M;
  truth_doc["sigma0_sq"] = sigma0_sq;
  truth_doc["seed"] = seed;
  truth_doc["beta0"] =
      std::vector<double>(beta0.data(), beta0.data() + beta0.size());
  const fs::path truth_path = fs::path(out_dir) / "truth.json";
  cedar::write_text_file(truth_path, truth_doc.dump(2) + "\n");
  std::cout << "wrote " << truth_path.string() << "\n";
  return 0;
}

int run_experiment_cmd(const std::string& config_path, std::uint64_t seed,
                       const std::string& out_dir, bool gnuplot) {
  cedar::ExperimentConfig cfg = cedar::config_from_file(config_path);
  cfg.master_seed = seed;
  cedar::validate_config(cfg);
  if (cfg.sparse)
    cedar::require(cedar::config_grid(cfg).size() == 1,
                   "experiment: a sparse (ROC) config must expand to a single "
                   "(n, M) grid point");

  fs::create_directories(out_dir);
  const std::vector<cedar::ResultRow> rows = cedar::run_experiment(cfg);
  const std::vector<cedar::SummaryRow> summary = cedar::summarize(rows);
  emit((fs::path(out_dir) / "results.csv").string(),
       cedar::results_csv(rows));
  emit((fs::path(out_dir) / "timings.csv").string(),
       cedar::timings_csv(rows));
  emit((fs::path(out_dir) / "summary.csv").string(),
       cedar::summary_csv(summary));
  if (cfg.sparse) {
    const cedar::RocStudy roc = cedar::run_roc_study(cfg);
    emit((fs::path(out_dir) / "roc.csv").string(),
         cedar::roc_points_csv(roc.points));
    emit((fs::path(out_dir) / "roc_areas.csv").string(),
         cedar::roc_areas_csv(roc.areas));
  }
  if (gnuplot)
    cedar::write_gnuplot_files(fs::path(out_dir) / "gnuplot", summary);
  return 0;
}

int run_privacy_cmd(bool table1, std::vector<int> p_list,
                    std::vector<int> K_list, std::vector<double> c_list,
                    int n, double psi, double sigma_sq, double delta,
                    long long reps, int redraws, std::uint64_t seed,
                    const std::string& out) {
  if (table1) {
    cedar::Table1Grid grid;
    grid.p_list = std::move(p_list);
    grid.K_list = std::move(K_list);
    grid.c_list = std::move(c_list);
    grid.psi = psi;
    grid.reps = reps;
    grid.redraws = redraws;
    grid.seed = seed;
    emit(out, cedar::table1_csv(cedar::run_table1(grid)));
    return 0;
  }
  cedar::require(p_list.size() == 1 && K_list.size() == 1,
                 "privacy: the per-c report takes a single --p and --K "
                 "(use --table1 for grids)");
  std::string text = "c,eps_mc,eps_forward_mean,eps_expected\n";
  for (std::size_t i = 0; i < c_list.size(); ++i) {
    cedar::PrivacyScenario sc;
    sc.n = n;
    sc.p = p_list.front();
    sc.K = K_list.front();
    sc.psi = psi;
    sc.c = c_list[i];
    sc.delta = delta;
    sc.reps = reps;
    sc.redraws = redraws;
    sc.sigma_sq = sigma_sq;
    sc.seed = cedar::derive_seed(seed, 5, i);
    const cedar::PrivacyReport report = cedar::privacy_report(sc);
    text += cedar::format_double(sc.c);
    text += ',' + cedar::format_double(report.eps_mc);
    text += ',' + cedar::format_double(report.eps_forward);
    text += ',' + cedar::format_double(report.eps_expected);
    text += '\n';
  }
  emit(out, text);
  return 0;
}

int run_report_cmd(const std::vector<std::string>& files,
                   const std::string& out_dir, bool gnuplot) {
  std::vector<cedar::ResultRow> rows;
  for (const std::string& file : files) {
    std::ifstream in(file, std::ios::binary);
    cedar::require(in.good(), "report: cannot open ", file);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::vector<cedar::ResultRow> part;
    try {
      part = cedar::parse_results_csv(buf.str());
    } catch (const std::exception& e) {
      cedar::fail(file, ": ", e.what());
    }
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const std::vector<cedar::SummaryRow> summary = cedar::summarize(rows);
  fs::create_directories(out_dir);
  emit((fs::path(out_dir) / "summary.csv").string(),
       cedar::summary_csv(summary));
  if (gnuplot)
    cedar::write_gnuplot_files(fs::path(out_dir) / "gnuplot", summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Distributed-regression toolkit: one-shot aggregation with "
      "privacy-preserving posterior samples, privacy accounting, and a "
      "reproducible experiment harness"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Write simulated site CSV files");
  std::string sim_out = "sites";
  int sim_p = 4, sim_n = 100, sim_M = 4;
  double sim_sigma0 = 1.0;
  std::uint64_t sim_seed = 1;
  sim->add_option("--out", sim_out, "Output directory")
      ->capture_default_str();
  sim->add_option("--p", sim_p, "Number of features")->capture_default_str();
  sim->add_option("--n", sim_n, "Rows per site")->capture_default_str();
  sim->add_option("--M", sim_M, "Number of sites")->capture_default_str();
  sim->add_option("--sigma0-sq", sim_sigma0, "Noise variance")
      ->capture_default_str();
  sim->add_option("--seed", sim_seed, "Master seed")->capture_default_str();

  // run
  auto* run = app.add_subcommand(
      "run", "Analyze site CSV files (first file is the central site)");
  std::vector<std::string> run_files;
  std::string run_method = "cedar", run_alt = "two_sided", run_out = "-";
  std::string run_drop_root;
  int run_K = 16;
  double run_psi = 100.0, run_alpha = 0.05;
  std::uint64_t run_seed = 1;
  run->add_option("files", run_files, "Site CSV files (central first)")
      ->required()
      ->expected(-1);
  run->add_option("--method", run_method,
                  "avgm | opt | csl1 | csla | cedar")
      ->capture_default_str();
  run->add_option("--K", run_K, "Posterior draws per remote site (cedar)")
      ->capture_default_str();
  run->add_option("--psi", run_psi, "Posterior variance inflation")
      ->capture_default_str();
  run->add_option("--alpha", run_alpha, "Test level")->capture_default_str();
  run->add_option("--alternative", run_alt, "two_sided | greater | less")
      ->capture_default_str();
  run->add_option("--seed", run_seed, "Seed for site posterior draws")
      ->capture_default_str();
  run->add_option("--drop-root", run_drop_root,
                  "Directory for the file-drop exchange (default: temp)");
  run->add_option("--out", run_out, "Output JSON path, '-' for stdout")
      ->capture_default_str();

  // experiment
  auto* exp = app.add_subcommand(
      "experiment", "Run a replicated method-comparison study from JSON");
  std::string exp_config, exp_out = "results";
  std::uint64_t exp_seed = 0;
  bool exp_gnuplot = false;
  exp->add_option("--config", exp_config, "JSON experiment config")
      ->required();
  exp->add_option("--seed", exp_seed, "Master seed (required)")->required();
  exp->add_option("--out", exp_out, "Output directory")
      ->capture_default_str();
  exp->add_flag("--gnuplot", exp_gnuplot, "Emit ready-to-plot files");

  // privacy
  auto* priv = app.add_subcommand(
      "privacy", "Empirical and closed-form privacy levels");
  bool priv_table1 = false;
  std::vector<int> priv_p{4}, priv_K{4};
  std::vector<double> priv_c{0.25};
  int priv_n = 16, priv_redraws = 8;
  double priv_psi = 100.0, priv_sigma = 1.0, priv_delta = -1.0;
  long long priv_reps = 100000;
  std::uint64_t priv_seed = 1;
  std::string priv_out = "-";
  priv->add_flag("--table1", priv_table1,
                 "Grid layout over (p, K, c) with n = p/c, delta = 1/n");
  priv->add_option("--p", priv_p, "Feature counts")
      ->delimiter(',')
      ->capture_default_str();
  priv->add_option("--K", priv_K, "Draw counts")
      ->delimiter(',')
      ->capture_default_str();
  priv->add_option("--c", priv_c, "Leverage values")
      ->delimiter(',')
      ->capture_default_str();
  priv->add_option("--n", priv_n, "Dataset size (per-c report only)")
      ->capture_default_str();
  priv->add_option("--psi", priv_psi, "Posterior variance inflation")
      ->capture_default_str();
  priv->add_option("--sigma-sq", priv_sigma, "Generative noise variance")
      ->capture_default_str();
  priv->add_option("--delta", priv_delta, "Failure probability (<=0: 1/n)")
      ->capture_default_str();
  priv->add_option("--reps", priv_reps, "Loss samples per direction")
      ->capture_default_str();
  priv->add_option("--redraws", priv_redraws, "Dataset redraws averaged over")
      ->capture_default_str();
  priv->add_option("--seed", priv_seed, "Master seed")->capture_default_str();
  priv->add_option("--out", priv_out, "Output CSV path, '-' for stdout")
      ->capture_default_str();

  // report
  auto* rep = app.add_subcommand("report", "Aggregate results CSV files");
  std::vector<std::string> rep_files;
  std::string rep_out = "report";
  bool rep_gnuplot = false;
  rep->add_option("files", rep_files, "results.csv files")
      ->required()
      ->expected(-1);
  rep->add_option("--out", rep_out, "Output directory")
      ->capture_default_str();
  rep->add_flag("--gnuplot", rep_gnuplot, "Emit ready-to-plot files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed())
      return run_simulate(sim_out, sim_p, sim_n, sim_M, sim_sigma0, sim_seed);
    if (run->parsed()) {
      cedar::AnalyzeOptions options;
      options.method = run_method;
      options.K = run_K;
      options.psi = run_psi;
      options.alpha = run_alpha;
      options.alternative = parse_alternative_flag(run_alt);
      options.seed = run_seed;
      options.drop_root = run_drop_root;
      std::vector<fs::path> files(run_files.begin(), run_files.end());
      emit(run_out, cedar::analyze_csv(files, options));
      return 0;
    }
    if (exp->parsed())
      return run_experiment_cmd(exp_config, exp_seed, exp_out, exp_gnuplot);
    if (priv->parsed())
      return run_privacy_cmd(priv_table1, priv_p, priv_K, priv_c, priv_n,
                             priv_psi, priv_sigma, priv_delta, priv_reps,
                             priv_redraws, priv_seed, priv_out);
    if (rep->parsed())
      return run_report_cmd(rep_files, rep_out, rep_gnuplot);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
