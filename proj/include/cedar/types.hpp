#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cedar {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr std::uint32_t kSchemaVersion = 1;

enum class FeatureLaw { Gaussian, Uniform, Laplace };

// True data-generating process: y = X beta0 + e, e ~ N(0, sigma0_sq I),
// X columns drawn per feature_law, each with unit variance.
struct GroundTruth {
  VectorXd beta0;
  double sigma0_sq = 1.0;
  std::vector<FeatureLaw> feature_law;

  int p() const { return static_cast<int>(beta0.size()); }
};

// Raw per-site data; only ever held locally, never serialized across the
// protocol boundary (the OPT sufficient-statistics task is the one
// documented, non-private exception and even it never ships X or y).
struct SiteData {
  int site_id = 1;
  MatrixXd X;  // n x p
  VectorXd y;  // n
};

struct LocalFit {
  int site_id = 1;
  int n = 0;
  int p = 0;
  VectorXd beta_hat;
  double sigma_hat_sq = 0.0;  // MLE scaling: ||y - X beta||^2 / n
  MatrixXd S;                 // X'X
};

struct SufficientStats {
  int n = 0;
  MatrixXd S;
  VectorXd Xty;
  double yty = 0.0;
};

// --- posterior sampling -----------------------------------------------------

struct PosteriorDraws {
  int K = 0;
  double psi = 100.0;
  MatrixXd beta_tilde;      // p x K
  VectorXd sigma_tilde_sq;  // K
  // (beta_tilde_k - beta_hat)/sigma_tilde_k computed in its stable form
  // sqrt(psi) L^{-T} z_k, which is exact for sigma_hat_sq > 0 and the unique
  // continuous extension at sigma_hat_sq = 0 (perfect local fit, n = p).
  MatrixXd norm_cols;  // p x K
};

enum class BlockForm { Columns, Gram };

// Normalized sample block B = [(beta_tilde_k - beta_hat)/sigma_tilde_k].
// Columns form when K <= p; the Gram form B B' is shipped when K > p to
// save communication.
struct PosteriorBlock {
  BlockForm form = BlockForm::Columns;
  int K = 0;
  int p = 0;
  double psi = 100.0;
  MatrixXd B;    // p x K (Columns form)
  MatrixXd BBt;  // p x p (Gram form)
};

// --- protocol ----------------------------------------------------------------

struct SitePayload {
  std::uint32_t schema_version = kSchemaVersion;
  int site_id = 0;
  int n = 0;
  int p = 0;
  VectorXd beta_hat;
  double sigma_hat_sq = 0.0;
  std::optional<PosteriorBlock> block;          // mle_plus_posterior
  std::optional<VectorXd> gradient;             // csl_gradient
  std::optional<std::vector<double>> wald;      // wald_stats (one per hypothesis)
  std::optional<SufficientStats> stats;         // sufficient_stats (non-private)
};

enum class Task {
  MleOnly,
  MlePlusPosterior,
  CslGradient,
  WaldStats,
  SufficientStatsTask,
};

struct Hypothesis {
  int j = 0;        // coefficient index, 0-based
  double b0 = 0.0;  // null value
};

enum class Alternative { TwoSided, Greater, Less };

struct TaskRequest {
  Task task = Task::MleOnly;
  int K = 0;
  double psi = 100.0;
  std::optional<VectorXd> beta_bar;     // csl_gradient
  std::vector<Hypothesis> hypotheses;   // wald_stats
  double alpha = 0.05;
  Alternative alternative = Alternative::TwoSided;
};

struct CommTrace {
  int rounds = 0;
  std::vector<std::uint64_t> bytes_per_round;
  std::map<int, std::uint64_t> per_site_bytes;
};

// --- EM aggregator -----------------------------------------------------------

enum class EstepMode { Auto, Direct, Woodbury };

struct CedarOptions {
  int max_iters = 500;
  double tol = 1e-8;
  double penalty_lambda = 0.0;  // 0 = unpenalized
  EstepMode estep_mode = EstepMode::Auto;
  // Optional warm start (used by the lasso-path sweep); empty = Algorithm
  // default initialization.
  std::optional<VectorXd> init_beta;
  std::optional<double> init_sigma_sq;
  std::optional<MatrixXd> init_Sigma;
};

struct EmState {
  VectorXd beta;
  double sigma_sq = 1.0;
  MatrixXd Sigma;
  std::vector<MatrixXd> S_hat;  // S_hat[0] is the observed central Gram
};

struct CedarFit {
  VectorXd beta;
  double sigma_sq = 0.0;
  MatrixXd Sigma;
  std::vector<MatrixXd> S_hat;
  int iterations = 0;
  double final_loglik = 0.0;
  bool converged = false;
  std::vector<double> loglik_trace;  // one value per iteration
  int N = 0;          // total observations across all sites
  int n_central = 0;  // central-site observations
};

// --- inference ----------------------------------------------------------------

struct WaldResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool reject = false;
  int j = 0;
  double null_value = 0.0;
};

enum class VarianceRegime { Main, SmallK, Homogeneous };

struct AsymptoticVariance {
  MatrixXd Sigma_star;
  VarianceRegime regime = VarianceRegime::Main;
  double gamma = 0.0;
};

// --- privacy -------------------------------------------------------------------

struct PrivacyBoundInputs {
  int K = 0;
  double c = 0.0;            // leverage x' S1^{-1} x of the differing point
  double xi2 = 0.0;          // (b2-b1)' S2 (b2-b1) / (psi sigma^2)
  double lambda_priv = 0.0;  // (y - x'b1)^2 / (psi sigma^2 c)
  double delta = 0.0;
  double psi = 100.0;
};

struct PrivacyScenario {
  int n = 16;
  int p = 4;
  int K = 4;
  double psi = 100.0;
  double c = 0.25;
  double delta = -1.0;  // <= 0 means default 1/n
  long long reps = 100000;
  std::uint64_t seed = 1;
  int redraws = 8;        // dataset redraws averaged over
  double sigma_sq = 1.0;  // generative truth
};

struct PrivacyReport {
  double eps_forward = 0.0;   // Theorem-style forward bound, mean over redraws
  double eps_reverse = 0.0;   // reverse-direction bound, mean over redraws
  double eps_expected = 0.0;  // expectation bound (closed form)
  double eps_mc = 0.0;        // empirical minimum epsilon
  PrivacyBoundInputs params;
};

// --- harness --------------------------------------------------------------------

struct SparseConfig {
  std::vector<double> lambda_grid;     // relative to per-replicate lambda_max
  std::vector<double> threshold_grid;  // relative to per-replicate max |beta|
};

struct TestConfig {
  double alpha = 0.05;
  Alternative alternative = Alternative::Greater;
};

struct ExperimentConfig {
  int p = 4;
  std::vector<int> n_grid;
  std::vector<int> M_grid;
  std::optional<long long> N_fixed;  // with M_grid: n = N_fixed / M
  std::vector<int> K_list{0};
  double psi = 100.0;
  std::vector<std::string> methods{"avgm", "opt", "csl1", "csla", "cedar"};
  int replicates = 100;
  double sigma0_sq = 1.0;
  std::optional<SparseConfig> sparse;
  std::optional<TestConfig> tests;
  std::uint64_t master_seed = 0;
};

struct ResultRow {
  std::string method;
  int p = 0;
  int n = 0;
  int M = 0;
  int K = 0;  // meaningful for cedar only; 0 otherwise
  int replicate = 0;
  double l2_error = 0.0;
  std::optional<double> power;
  std::optional<double> specificity;
  std::optional<double> coverage;
  int comm_rounds = 0;
  double wall_ms = 0.0;  // written to the timing sidecar, not the results CSV
  bool failed = false;
};

}  // namespace cedar
