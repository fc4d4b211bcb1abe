#pragma once

#include "cedar/types.hpp"

namespace cedar {

// Mean of the per-site OLS estimates.
VectorXd avgm(const std::vector<VectorXd>& betas);

// Aggregated Wald statistic: sum of per-site statistics divided by sqrt(M).
double avgm_wald(const std::vector<double>& walds);

// Per-site standard Wald statistics for a list of hypotheses, using the
// site's own MLE variance: W = (beta_hat_j - b0) / (sigma_hat sqrt((S^-1)_jj)).
std::vector<double> site_wald_statistics(const LocalFit& fit,
                                         const std::vector<Hypothesis>& hyps);

struct OptFit {
  VectorXd beta;
  MatrixXd var_scale;  // sigma_hat^2 (sum S_m)^{-1}
  double sigma_hat_sq = 0.0;
  long long N = 0;
};

// Pooled/global OLS from transmitted sufficient statistics; the residual
// variance uses the unbiased divisor N - p.
OptFit opt_fit(const std::vector<SufficientStats>& stats);

// Gradient of the site's average squared-error loss
// L_m(beta) = (1/n) sum_i 1/2 (y_i - x_i' beta)^2 at beta_bar.
VectorXd csl_gradient(const SiteData& data, const VectorXd& beta_bar);

struct CslInputs {
  VectorXd beta_bar;
  std::vector<VectorXd> gradients;  // one per site, every site exactly once
  SiteData central;
};

// Closed-form minimizer of the surrogate loss
// L~(beta) = L_1(beta) - (grad L_1(beta_bar) - grad L(beta_bar))' beta:
//   beta = beta_bar - n S_1^{-1} grad L(beta_bar).
VectorXd csl_fit(const CslInputs& inputs);

// Hard-thresholded coefficient vector (sparse AVGM comparison).
VectorXd hard_threshold(const VectorXd& beta, double level);

// Lasso on a quadratic objective 1/2 b'Q b - r'b + lambda ||b||_1 via
// proximal gradient with backtracking (used for the OPT/CSL selection paths).
VectorXd lasso_quadratic(const MatrixXd& Q, const VectorXd& r, double lambda,
                         const VectorXd& start, double tol = 1e-10,
                         int max_iters = 50000);

}  // namespace cedar
