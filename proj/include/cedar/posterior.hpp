#pragma once

#include <cstdint>

#include "cedar/types.hpp"

namespace cedar {

// Scaled-posterior draws under the improper prior pi(beta, sigma^2) ~
// (sigma^2)^{-(p/2+1)}:
//   sigma_tilde_k^2 ~ InvGamma(n/(2 psi), n sigma_hat^2/(2 psi))
//   beta_tilde_k | sigma_tilde_k^2 ~ N(beta_hat, psi sigma_tilde_k^2 S^{-1})
// Note the inverse-gamma shape n/(2 psi) is typically far below 1 (psi=100),
// so sigma_tilde^2 has no finite mean; this is harmless downstream because
// only the ratio columns (beta_tilde - beta_hat)/sigma_tilde — which are
// exactly N(0, psi S^{-1}) independent of sigma_tilde — enter any
// computation. Those ratios are materialized directly as norm_cols =
// sqrt(psi) L^{-T} z, so sites with a perfect local fit (sigma_hat_sq = 0,
// e.g. n = p) still produce valid blocks.
PosteriorDraws draw_posterior(const LocalFit& fit, int K, double psi,
                              std::uint64_t seed);

PosteriorBlock build_block(const PosteriorDraws& draws, const LocalFit& fit);

// B B' of the transmitted block (columns covariance psi * S^{-1}); callers
// divide by psi where the S^{-1}-scaled form is needed.
MatrixXd block_outer(const PosteriorBlock& block);

// Number of scalars the block contributes to the wire format.
std::size_t block_scalar_count(const PosteriorBlock& block);

}  // namespace cedar
