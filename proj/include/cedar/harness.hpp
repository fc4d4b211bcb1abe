#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cedar/types.hpp"

namespace cedar {

// --- configuration ---------------------------------------------------------

// Parse an experiment configuration from a JSON document. Accepted keys:
//   p (int, required)
//   n / n_grid (int or array)            M / M_grid (int or array)
//   N_fixed (int; with M_grid: n = N_fixed / M, exact division required)
//   K / K_list (int or array, cedar only; default [0])
//   psi (default 100), replicates (default 100), sigma0_sq (default 1)
//   methods (array from {avgm, opt, csl1, csla, cedar})
//   sparse { lambda_grid: [...], threshold_grid: [...] }   (relative levels)
//   tests  { alpha: 0.05, alternative: "greater"|"less"|"two_sided" }
//   master_seed / seed (uint64)
// Unknown keys are rejected.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig config_from_file(const std::filesystem::path& path);

void validate_config(const ExperimentConfig& cfg);

struct GridPoint {
  int n = 0;
  int M = 0;
};

// Expanded (n, M) grid: with N_fixed, one point per M (n = N_fixed / M);
// otherwise the n_grid x M_grid cross product, n outer.
std::vector<GridPoint> config_grid(const ExperimentConfig& cfg);

// --- replicate studies -------------------------------------------------------

// One method x gridpoint x replicate row per combination (cedar expands over
// K_list; other methods run once with K = 0). Data are generated once per
// (gridpoint, replicate) and every method runs over a fresh in-process
// transport. All randomness derives from master_seed; replicate streams are
// independent of execution order and shared across grid points (common
// random numbers). A method failure marks the row failed and the run
// continues.
std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg);

struct SummaryRow {
  std::string method;
  int p = 0;
  int n = 0;
  int M = 0;
  int K = 0;
  int replicates = 0;  // successful replicates aggregated
  int failures = 0;
  double mean_l2 = 0.0;
  double se_l2 = 0.0;  // standard error of the mean
  std::optional<double> power;
  std::optional<double> specificity;
  std::optional<double> coverage;
  double mean_rounds = 0.0;
  bool plot_excluded = false;  // csl1 rows with mean_l2 > 10x opt's
};

// Aggregate rows over replicates per (method, p, n, M, K), sorted
// deterministically.
std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows);

// run_experiment with the test block required; returns the aggregated
// power/specificity table (raw rows optionally exposed through `raw`).
std::vector<SummaryRow> run_power_study(const ExperimentConfig& cfg,
                                        std::vector<ResultRow>* raw = nullptr);

// --- variable-selection (ROC) study ------------------------------------------

struct RocPoint {
  std::string method;
  int K = 0;
  int grid_index = 0;  // index into the method's level grid
  double level = 0.0;  // relative lambda (paths) or relative threshold (avgm)
  double tpr = 0.0;    // mean over replicates
  double fpr = 0.0;
};

struct RocArea {
  std::string method;
  int K = 0;
  double area = 0.0;  // trapezoid area with (0,0) and (1,1) appended
};

struct RocStudy {
  std::vector<RocPoint> points;
  std::vector<RocArea> areas;
};

// Sweeps the selection level on one grid point (the config must expand to a
// single (n, M)): lasso paths for cedar/opt/csl over sparse.lambda_grid
// (relative to each replicate's lambda_max) and hard thresholding for avgm
// over sparse.threshold_grid (relative to max |beta^A|). TPR/FPR are
// measured against the support of beta0 and averaged over replicates at
// each grid index.
RocStudy run_roc_study(const ExperimentConfig& cfg);

// --- privacy table ------------------------------------------------------------

struct Table1Grid {
  std::vector<int> p_list{4, 16};
  std::vector<int> K_list{4, 16};
  std::vector<double> c_list{1.0, 0.5, 0.25, 0.125, 0.0625};
  double psi = 100.0;
  long long reps = 100000;
  int redraws = 8;
  std::uint64_t seed = 1;
};

struct Table1Cell {
  int p = 0;
  int K = 0;
  double c = 0.0;
  long long n = 0;  // round(p / c)
  double eps_mc = 0.0;
};

// Empirical minimum epsilon per (p, K, c) cell at n = round(p/c), delta = 1/n.
std::vector<Table1Cell> run_table1(const Table1Grid& grid);
std::string table1_csv(const std::vector<Table1Cell>& cells);

// --- multi-CSV analysis ---------------------------------------------------------

struct AnalyzeOptions {
  std::string method = "cedar";
  int K = 16;
  double psi = 100.0;
  double alpha = 0.05;
  Alternative alternative = Alternative::TwoSided;
  std::uint64_t seed = 1;
  std::filesystem::path drop_root;  // empty = unique directory under temp
  CedarOptions em;
};

// Runs one method over site CSV files (first file = central site; the rest
// are remote sites reachable only through a file-drop transport rooted at
// drop_root). Returns a JSON document with the fit, the Wald table, the
// confidence intervals, and the communication trace.
std::string analyze_csv(const std::vector<std::filesystem::path>& files,
                        const AnalyzeOptions& options);

// --- serialization --------------------------------------------------------------

// Long-form results CSV:
//   method,p,n,M,K,replicate,l2_error,power,specificity,coverage,comm_rounds,failed
// Rows sorted by (p, n, M, method, K, replicate); optional fields empty when
// absent. Wall-clock times go to the separate timings CSV so the results file
// stays byte-identical across reruns.
std::string results_csv(const std::vector<ResultRow>& rows);
std::string timings_csv(const std::vector<ResultRow>& rows);
std::string summary_csv(const std::vector<SummaryRow>& rows);
std::string roc_points_csv(const std::vector<RocPoint>& points);
std::string roc_areas_csv(const std::vector<RocArea>& areas);

// Inverse of results_csv (used by the report aggregation command).
std::vector<ResultRow> parse_results_csv(const std::string& text);

// Ready-to-plot aggregated files: one whitespace-separated .dat block per
// (method, K) plus a gnuplot script plotting mean L2 error against the
// varying grid dimension. Rows flagged plot_excluded are dropped.
void write_gnuplot_files(const std::filesystem::path& dir,
                         const std::vector<SummaryRow>& summary);

}  // namespace cedar
