#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cedar/model.hpp"
#include "cedar/posterior.hpp"
#include "test_support.hpp"

using namespace cedar;
using test_support::gaussian_site;
using test_support::mentions;
using test_support::sample_moments;
using test_support::thrown_message;

TEST_CASE("posterior draws are seeded, shaped, and rebuild beta exactly") {
  const SiteData site = gaussian_site(40, 3, 11);
  const LocalFit fit = local_mle(site);
  const PosteriorDraws d = draw_posterior(fit, 5, 100.0, 7);
  const PosteriorDraws d2 = draw_posterior(fit, 5, 100.0, 7);
  const PosteriorDraws d3 = draw_posterior(fit, 5, 100.0, 8);

  CHECK(d.K == 5);
  CHECK(d.psi == 100.0);
  CHECK(d.beta_tilde.rows() == 3);
  CHECK(d.beta_tilde.cols() == 5);
  CHECK(d.sigma_tilde_sq.size() == 5);
  CHECK(d.norm_cols.rows() == 3);
  CHECK(d.norm_cols.cols() == 5);
  CHECK((d.beta_tilde - d2.beta_tilde).norm() == 0.0);
  CHECK((d.sigma_tilde_sq - d2.sigma_tilde_sq).norm() == 0.0);
  CHECK((d.beta_tilde - d3.beta_tilde).norm() != 0.0);
  CHECK(d.sigma_tilde_sq.minCoeff() > 0.0);

  // Each coefficient draw decomposes as center + scale * normalized column.
  for (int k = 0; k < d.K; ++k) {
    const VectorXd rebuilt =
        fit.beta_hat + std::sqrt(d.sigma_tilde_sq[k]) * d.norm_cols.col(k);
    CHECK((d.beta_tilde.col(k) - rebuilt).norm() <= 1e-14 * rebuilt.norm());
  }
}

TEST_CASE("normalized columns are centered with covariance psi S^{-1}") {
  const SiteData site = gaussian_site(200, 3, 17);
  const LocalFit fit = local_mle(site);
  const int K = 20000;
  const double psi = 3.5;
  const PosteriorDraws d = draw_posterior(fit, K, psi, 5);

  const VectorXd mean = d.norm_cols.rowwise().mean();
  CHECK(mean.norm() < 0.01);

  const MatrixXd emp =
      d.norm_cols * d.norm_cols.transpose() / static_cast<double>(K);
  const MatrixXd target =
      psi * fit.S.llt().solve(MatrixXd::Identity(3, 3));
  CHECK((emp - target).norm() <= 0.05 * target.norm());
}

TEST_CASE("variance draws follow the scaled inverse-gamma law") {
  // shape = n/(2 psi) = 7.5 > 1 so both the mean and the reciprocal mean are
  // finite:  E[s2] = n sh2 / (n - 2 psi),  E[1/s2] = 1/sh2.
  const SiteData site = gaussian_site(30, 2, 23);
  const LocalFit fit = local_mle(site);
  REQUIRE(fit.sigma_hat_sq > 0.0);
  const double psi = 2.0;
  const int K = 60000;
  const PosteriorDraws d = draw_posterior(fit, K, psi, 9);

  std::vector<double> s2(static_cast<std::size_t>(K)), inv(s2.size());
  for (int k = 0; k < K; ++k) {
    s2[static_cast<std::size_t>(k)] = d.sigma_tilde_sq[k];
    inv[static_cast<std::size_t>(k)] = 1.0 / d.sigma_tilde_sq[k];
  }
  CHECK(d.sigma_tilde_sq.minCoeff() > 0.0);
  const double want_mean = 30.0 * fit.sigma_hat_sq / (30.0 - 2.0 * psi);
  CHECK(sample_moments(s2).mean == doctest::Approx(want_mean).epsilon(0.02));
  CHECK(sample_moments(inv).mean ==
        doctest::Approx(1.0 / fit.sigma_hat_sq).epsilon(0.02));
}

TEST_CASE("a perfect local fit still produces usable normalized draws") {
  // n = p with an exactly linear response: the local residual variance is
  // (numerically) zero, the scale draws collapse to zero, and the normalized
  // columns remain finite because they never divide by the scale.
  SiteData site;
  site.site_id = 1;
  site.X.resize(3, 3);
  site.X << 2, 0, 0, 1, 3, 0, 0, 1, 2;
  const VectorXd beta = (VectorXd(3) << 1.0, 1.0, 1.0).finished();
  site.y = site.X * beta;
  const LocalFit fit = local_mle(site);
  CHECK(fit.sigma_hat_sq <= 1e-20);

  const PosteriorDraws d = draw_posterior(fit, 3, 100.0, 3);
  CHECK(d.sigma_tilde_sq.maxCoeff() <= 1e-12);
  CHECK((d.beta_tilde.colwise() - fit.beta_hat).norm() <= 1e-10);
  CHECK(d.norm_cols.allFinite());
  CHECK(d.norm_cols.norm() > 0.0);

  const PosteriorBlock block = build_block(d, fit);
  CHECK(block.form == BlockForm::Columns);
  CHECK(block_outer(block).allFinite());
}

TEST_CASE("block form switches from columns to a Gram square past K = p") {
  const SiteData site = gaussian_site(25, 3, 31);
  const LocalFit fit = local_mle(site);

  const PosteriorDraws small = draw_posterior(fit, 3, 100.0, 4);
  const PosteriorBlock cols = build_block(small, fit);
  CHECK(cols.form == BlockForm::Columns);
  CHECK(cols.K == 3);
  CHECK(cols.p == 3);
  CHECK((cols.B - small.norm_cols).norm() == 0.0);
  CHECK(block_scalar_count(cols) == 9);
  const MatrixXd outer_cols = block_outer(cols);
  CHECK((outer_cols - small.norm_cols * small.norm_cols.transpose()).norm() <=
        1e-14 * outer_cols.norm());

  const PosteriorDraws big = draw_posterior(fit, 4, 100.0, 4);
  const PosteriorBlock gram = build_block(big, fit);
  CHECK(gram.form == BlockForm::Gram);
  const MatrixXd expect = big.norm_cols * big.norm_cols.transpose();
  CHECK((gram.BBt - expect).norm() <= 1e-14 * expect.norm());
  CHECK((block_outer(gram) - gram.BBt).norm() == 0.0);
  CHECK(block_scalar_count(gram) == 6);  // p (p + 1) / 2 at p = 3

  // Communication saving that motivates the Gram form: p = 32, K = 64.
  PosteriorBlock wide;
  wide.form = BlockForm::Gram;
  wide.p = 32;
  wide.K = 64;
  CHECK(block_scalar_count(wide) == 528);
  PosteriorBlock narrow;
  narrow.form = BlockForm::Columns;
  narrow.p = 32;
  narrow.K = 64;
  CHECK(block_scalar_count(narrow) == 2048);

  const PosteriorDraws none = draw_posterior(fit, 0, 100.0, 4);
  CHECK(none.norm_cols.cols() == 0);
  const PosteriorBlock empty = build_block(none, fit);
  CHECK(empty.form == BlockForm::Columns);
  const MatrixXd z = block_outer(empty);
  CHECK(z.rows() == 3);
  CHECK(z.cols() == 3);
  CHECK(z.isZero(0.0));
}

TEST_CASE("posterior sampling rejects invalid inputs") {
  const SiteData site = gaussian_site(10, 2, 41);
  const LocalFit fit = local_mle(site);
  CHECK(mentions(thrown_message([&] { draw_posterior(fit, -1, 100.0, 1); }),
                 "K must be nonnegative"));
  CHECK(mentions(thrown_message([&] { draw_posterior(fit, 2, 0.0, 1); }),
                 "psi must be positive"));

  LocalFit bad;
  bad.site_id = 5;
  bad.n = 4;
  bad.p = 2;
  bad.beta_hat = VectorXd::Zero(2);
  bad.sigma_hat_sq = 1.0;
  bad.S = MatrixXd::Ones(2, 2);  // exactly singular
  const std::string msg =
      thrown_message([&] { draw_posterior(bad, 2, 100.0, 1); });
  CHECK(mentions(msg, "rank-deficient"));
  CHECK(mentions(msg, "site 5"));
}
