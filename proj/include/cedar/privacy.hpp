#pragma once

#include <utility>
#include <vector>

#include "cedar/rng.hpp"
#include "cedar/types.hpp"

namespace cedar {

// Closed-form (eps, delta) bound for releasing K scaled-posterior draws when
// the neighboring datasets differ by one added row, evaluated in both
// directions (smaller -> larger dataset, and the reverse).
std::pair<double, double> epsilon_delta_bound(const PrivacyBoundInputs& inp);

// Expectation form of the bound: the data-dependent terms replaced by their
// means under the generative model.
double expected_epsilon_bound(int K, double c, double psi, double delta);

// One realized pair of neighboring datasets: D2 = D1 plus one point x whose
// leverage x' S1^{-1} x equals c exactly. beta1/beta2 are the two OLS fits;
// the posterior of the release under D_i is N(beta_i, psi sigma^2 S_i^{-1}).
struct NeighborInstance {
  int n = 0;
  int p = 0;
  double c = 0.0;
  double psi = 100.0;
  double sigma_sq = 1.0;
  double r1 = 0.0;  // y* - x' beta1, the extra point's D1 residual
  VectorXd x;
  VectorXd beta1;
  VectorXd beta2;
  MatrixXd L1t;  // upper Cholesky factor of S1
  MatrixXd L2t;  // upper Cholesky factor of S2 = S1 + x x'

  double r2() const { return r1 / (1.0 + c); }
  double xi1() const;  // (b2-b1)' S1 (b2-b1) / (psi sigma^2)
  double xi2() const;  // (b2-b1)' S2 (b2-b1) / (psi sigma^2)
  double lambda_priv() const;  // r1^2 / (psi sigma^2 c)
  PrivacyBoundInputs bound_inputs(int K, double delta) const;
};

NeighborInstance sample_neighbor_instance(int n, int p, double c, double psi,
                                          double sigma_sq, Rng& rng);

// Per-draw privacy-loss evaluations from an explicit standard-normal vector z
// (the posterior draw is reconstructed from z). Used as the ground-truth
// oracle for the fast scalar forms below.
double forward_loss_direct(const NeighborInstance& inst, const VectorXd& z);
double reverse_loss_direct(const NeighborInstance& inst, const VectorXd& z);

// Scalar per-draw losses: the loss depends on the posterior draw only through
// one standard-normal projection (g under D1 sampling, h under D2 sampling).
double forward_loss_scalar(const NeighborInstance& inst, double g);
double reverse_loss_scalar(const NeighborInstance& inst, double h);

// Total K-draw losses from the sufficient pair (a, q): a = (sum of the K
// projections)/sqrt(K) ~ N(0,1) and q = sum of squares minus a^2 ~ chisq(K-1),
// independent. Lets one loss sample cost O(1) instead of O(K).
double forward_total_from(const NeighborInstance& inst, int K, double a,
                          double q);
double reverse_total_from(const NeighborInstance& inst, int K, double a,
                          double q);
double sample_forward_total(const NeighborInstance& inst, int K, Rng& rng);
double sample_reverse_total(const NeighborInstance& inst, int K, Rng& rng);

// Smallest eps >= 0 with max over directions of the empirical hockey-stick
// divergence mean(1 - e^{eps - L})_+ at or below delta. Sorts its inputs.
double hockey_min_epsilon(std::vector<double>& fwd, std::vector<double>& rev,
                          double delta);

// Empirical (1-delta) order-statistic quantile. Sorts its input.
double loss_quantile(std::vector<double>& losses, double delta);

// Per-dataset diagnostics for the bound-dominance checks.
struct PrivacyReplicate {
  double c = 0.0;
  double r1 = 0.0;
  double xi1 = 0.0;
  double xi2 = 0.0;
  double lambda_priv = 0.0;
  double eps_fwd_bound = 0.0;
  double eps_rev_bound = 0.0;
  double q_fwd = 0.0;    // (1-delta)-quantile of the forward loss
  double q_rev = 0.0;    // (1-delta)-quantile of the reverse loss
  double eps_hs = 0.0;   // hockey-stick minimum epsilon
};

PrivacyReplicate privacy_replicate(const PrivacyScenario& sc,
                                   std::uint64_t seed);

// Monte Carlo minimum epsilon: mean of the per-dataset hockey-stick minimum
// over `redraws` independent datasets. K=0 releases nothing and returns 0.
double mc_min_epsilon(const PrivacyScenario& sc);

// Bound + Monte Carlo summary on one scenario.
PrivacyReport privacy_report(const PrivacyScenario& sc);

}  // namespace cedar
