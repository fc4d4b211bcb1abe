#pragma once

#include "cedar/types.hpp"

namespace cedar {

// Conditional-expectation imputation of the remote Gram matrices:
//   S_hat_m = (n_m + K_m + 1) (Sigma^{-1} + A_m A_m')^{-1},
//   A_m = [a_m, B_m / sqrt(psi)],  a_m = (beta_hat_m - beta) / sigma.
// Returns the full list with S_hat[0] equal to the observed central Gram.
// The Woodbury path rewrites the inverse as
//   Sigma - Sigma A (I + A' Sigma A)^{-1} A' Sigma
// and is used per site when the sample columns are available and K+1 <= p
// (mode Auto) or whenever columns are available (mode Woodbury; Gram-form
// payloads always use the direct inverse).
std::vector<MatrixXd> e_step(const VectorXd& beta, double sigma_sq,
                             const MatrixXd& Sigma, const LocalFit& central,
                             const std::vector<SitePayload>& payloads,
                             EstepMode mode = EstepMode::Auto);

struct MStepResult {
  VectorXd beta;
  double sigma_sq = 0.0;
  MatrixXd Sigma;
};

// Weighted-least-squares parameter updates:
//   beta  <- (sum S_hat_m)^{-1} sum S_hat_m beta_hat_m
//   sigma^2 <- (1/N) sum ((beta_hat_m - beta)' S_hat_m (beta_hat_m - beta)
//                         + n_m sigma_hat_m^2)
//   Sigma <- (1/N) sum S_hat_m
MStepResult m_step(const std::vector<MatrixXd>& S_hat, const LocalFit& central,
                   const std::vector<SitePayload>& payloads);

// Soft-thresholding: argmin_z (1/2s)||z - x||^2 + lambda ||z||_1
VectorXd prox_l1(const VectorXd& x, double lambda, double s);

// Penalized coefficient update: proximal-gradient iteration with Armijo
// backtracking on Q(beta) = 1/2 sum (beta - beta_hat_m)' S_hat_m (...),
// threshold weight lambda * sigma_sq, run to a proximal fixed point.
VectorXd sparse_beta_step(const std::vector<MatrixXd>& S_hat,
                          const LocalFit& central,
                          const std::vector<SitePayload>& payloads,
                          const VectorXd& beta_start, double sigma_sq,
                          double lambda, double tol = 1e-12,
                          int max_iters = 50000);

// Closed-form marginal loglikelihood: the observed-data terms for the
// central site plus, for every remote site, the log-normalizer of the
// integrated Wishart factor
//   log int |S|^{(nu-p-1)/2} exp(-tr(V^{-1} S)/2) dS
//     = (nu p/2) log 2 + (nu/2) log |V| + log Gamma_p(nu/2),
// nu = n + K + 1, V = (Sigma^{-1} + A A')^{-1}. Additive data-only constants
// (including ((n-p)/2) log |S_1|) are dropped consistently across calls, so
// differences along an EM trajectory are exact.
double marginal_loglik(const VectorXd& beta, double sigma_sq,
                       const MatrixXd& Sigma, const LocalFit& central,
                       const std::vector<SitePayload>& payloads);

CedarFit cedar_fit(const LocalFit& central,
                   const std::vector<SitePayload>& payloads,
                   const CedarOptions& opts = {});

CedarFit cedar_fit(const SiteData& central,
                   const std::vector<SitePayload>& payloads,
                   const CedarOptions& opts = {});

namespace detail {
// Force the proximal path even at lambda = 0 (used to verify that the
// sparse path reproduces the dense closed form).
CedarFit cedar_fit_impl(const LocalFit& central,
                        const std::vector<SitePayload>& payloads,
                        const CedarOptions& opts, bool force_prox);
}  // namespace detail

}  // namespace cedar
