#pragma once

#include <utility>
#include <vector>

#include "cedar/types.hpp"

namespace cedar {

// Standard-normal CDF and quantile (quantile accurate to better than 1e-9).
double normal_cdf(double x);
double normal_quantile(double p);

// p-value and accept/reject decision for an asymptotically standard-normal
// statistic w testing H0: beta_j = b0.
WaldResult wald_decision(double w, int j, double b0, double alpha,
                         Alternative sided);

// Coefficient test W_j = sqrt(N) (beta_j - b0j) / (sigma_hat sqrt((Sigma^-1)_jj))
// using the aggregated fit's Sigma and sigma_sq. j is 0-based.
WaldResult wald_statistic(const CedarFit& fit, int j, double b0j, double alpha,
                          Alternative sided);

// Symmetric (1-alpha) interval for coefficient j (0-based).
std::pair<double, double> confidence_interval(const CedarFit& fit, int j,
                                              double alpha);

// Plug-in asymptotic-variance estimators from the remote posterior blocks.
// Main regime:  (1/N) S1 + (1/(N K)) sum_m S_hat_m (B B'/psi) S_hat_m;
// small-K regime: (n/M) S1^{-1} + (n/(M K)) sum_m (B B'/psi).
// Transmitted blocks have covariance psi * S_m^{-1}, hence the /psi.
AsymptoticVariance sigma_star_hat(const CedarFit& fit,
                                  const std::vector<SitePayload>& payloads,
                                  VarianceRegime regime);

// Zero of f0(S) = (1/M) S0_1 + ((1+gamma)/M) sum_{m>1} (S^-1 + gamma (S0_m)^-1)^-1 - S
// by fixed-point iteration from the mean of the inputs.
MatrixXd theory_sigma0(const std::vector<MatrixXd>& Sigma0_list, double gamma);

// Limiting variance shape: gamma > 0 uses
//   (1/M) S0_1 + ((1+gamma)^2/M) sum_{m>1} W (S0_m)^-1 W,
//   W = (Sigma0^-1 + gamma (S0_m)^-1)^-1;
// gamma = 0 is the small-K limit (1/M) sum_m (S0_m)^-1 over all sites.
MatrixXd theory_sigma_star(const std::vector<MatrixXd>& Sigma0_list,
                           const MatrixXd& Sigma0, double gamma);

}  // namespace cedar
