#include "cedar/posterior.hpp"

#include <cmath>

#include "cedar/linalg.hpp"
#include "cedar/rng.hpp"

namespace cedar {

PosteriorDraws draw_posterior(const LocalFit& fit, int K, double psi,
                              std::uint64_t seed) {
  require(K >= 0, "K must be nonnegative, got ", K);
  require(psi > 0.0, "psi must be positive, got ", psi);
  Eigen::LLT<MatrixXd> llt(fit.S);
  require(llt.info() == Eigen::Success, "site ", fit.site_id,
          ": rank-deficient Gram matrix in posterior sampling");

  PosteriorDraws d;
  d.K = K;
  d.psi = psi;
  d.beta_tilde.resize(fit.p, K);
  d.sigma_tilde_sq.resize(K);
  d.norm_cols.resize(fit.p, K);
  if (K == 0) return d;

  Rng rng(seed);
  const double shape = fit.n / (2.0 * psi);
  const double rate = fit.n * fit.sigma_hat_sq / (2.0 * psi);
  // L^{-T} z has covariance S^{-1} when S = L L'
  MatrixXd Lt = MatrixXd(llt.matrixL()).transpose();
  VectorXd z(fit.p);
  for (int k = 0; k < K; ++k) {
    double s2 = rng.inv_gamma(shape, rate);
    d.sigma_tilde_sq[k] = s2;
    for (int i = 0; i < fit.p; ++i) z[i] = rng.normal();
    // Normalized displacement sqrt(psi) L^{-T} z is independent of s2, so it
    // stays well defined when sigma_hat_sq = 0 forces s2 = 0 (n = p sites).
    d.norm_cols.col(k) =
        std::sqrt(psi) * Lt.triangularView<Eigen::Upper>().solve(z);
    d.beta_tilde.col(k) = fit.beta_hat + std::sqrt(s2) * d.norm_cols.col(k);
  }
  return d;
}

PosteriorBlock build_block(const PosteriorDraws& draws, const LocalFit& fit) {
  PosteriorBlock b;
  b.K = draws.K;
  b.p = fit.p;
  b.psi = draws.psi;
  if (draws.K <= fit.p) {
    b.form = BlockForm::Columns;
    b.B = draws.norm_cols;
  } else {
    b.form = BlockForm::Gram;
    b.BBt = draws.norm_cols * draws.norm_cols.transpose();
  }
  return b;
}

MatrixXd block_outer(const PosteriorBlock& block) {
  if (block.form == BlockForm::Gram) return block.BBt;
  if (block.K == 0) return MatrixXd::Zero(block.p, block.p);
  return block.B * block.B.transpose();
}

std::size_t block_scalar_count(const PosteriorBlock& block) {
  if (block.form == BlockForm::Columns)
    return static_cast<std::size_t>(block.p) * block.K;
  return static_cast<std::size_t>(block.p) * (block.p + 1) / 2;
}

}  // namespace cedar
