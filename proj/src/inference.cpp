#include "cedar/inference.hpp"

#include <cmath>

#include "cedar/common.hpp"
#include "cedar/linalg.hpp"
#include "cedar/posterior.hpp"

namespace cedar {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

// Acklam's rational approximation to the inverse normal CDF (~1e-9 relative),
// tightened with one Halley step against the erfc-based CDF.
double acklam_inverse(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
            c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p <= 1.0 - plow) {
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r +
            a[5]) *
           q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r +
            1.0);
  }
  q = std::sqrt(-2.0 * std::log(1.0 - p));
  return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
           c[5]) /
         ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
}

}  // namespace

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "normal_quantile: p must lie in (0,1), got ", p);
  double x = acklam_inverse(p);
  // Halley refinement: e = CDF(x) - p, u = e / pdf(x).
  const double e = normal_cdf(x) - p;
  const double pdf =
      std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  if (pdf > 0.0) {
    const double u = e / pdf;
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

namespace {

double check_fit_and_get_jj(const CedarFit& fit, int j) {
  const auto p = fit.beta.size();
  require(j >= 0 && j < p, "coefficient index ", j, " out of range for p = ",
          p);
  require(fit.N > 0, "fit carries no sample-size information");
  require(fit.sigma_sq > 0.0, "fit has nonpositive residual variance");
  const MatrixXd Sigma_inv = spd_inverse(fit.Sigma, "aggregated Sigma");
  return Sigma_inv(j, j);
}

}  // namespace

WaldResult wald_decision(double w, int j, double b0, double alpha,
                         Alternative sided) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1), got ", alpha);
  WaldResult res;
  res.statistic = w;
  res.j = j;
  res.null_value = b0;
  switch (sided) {
    case Alternative::TwoSided:
      res.p_value = 2.0 * (1.0 - normal_cdf(std::abs(w)));
      res.reject = std::abs(w) > normal_quantile(1.0 - 0.5 * alpha);
      break;
    case Alternative::Greater:
      res.p_value = 1.0 - normal_cdf(w);
      res.reject = w > normal_quantile(1.0 - alpha);
      break;
    case Alternative::Less:
      res.p_value = normal_cdf(w);
      res.reject = w < -normal_quantile(1.0 - alpha);
      break;
  }
  return res;
}

WaldResult wald_statistic(const CedarFit& fit, int j, double b0j, double alpha,
                          Alternative sided) {
  const double jj = check_fit_and_get_jj(fit, j);
  const double N = static_cast<double>(fit.N);
  const double w = std::sqrt(N) * (fit.beta(j) - b0j) /
                   (std::sqrt(fit.sigma_sq) * std::sqrt(jj));
  return wald_decision(w, j, b0j, alpha, sided);
}

std::pair<double, double> confidence_interval(const CedarFit& fit, int j,
                                              double alpha) {
  require(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0,1], got ", alpha);
  const double jj = check_fit_and_get_jj(fit, j);
  const double N = static_cast<double>(fit.N);
  const double z = alpha == 1.0 ? 0.0 : normal_quantile(1.0 - 0.5 * alpha);
  const double half = z * std::sqrt(fit.sigma_sq) * std::sqrt(jj / N);
  return {fit.beta(j) - half, fit.beta(j) + half};
}

AsymptoticVariance sigma_star_hat(const CedarFit& fit,
                                  const std::vector<SitePayload>& payloads,
                                  VarianceRegime regime) {
  require(regime == VarianceRegime::Main || regime == VarianceRegime::SmallK,
          "sigma_star_hat: unsupported regime");
  require(!fit.S_hat.empty(), "fit carries no imputed Gram matrices");
  require(fit.S_hat.size() == payloads.size() + 1,
          "fit/payload count mismatch: ", fit.S_hat.size(), " Grams vs ",
          payloads.size(), " remote payloads");
  const auto p = fit.beta.size();
  const double N = static_cast<double>(fit.N);
  const double n1 = static_cast<double>(fit.n_central);
  const double M = static_cast<double>(payloads.size() + 1);

  int K = 0;
  for (const SitePayload& pl : payloads) {
    require(pl.block.has_value(),
            "sigma_star_hat: site ", pl.site_id,
            " transmitted no posterior block");
    if (K == 0) K = pl.block->K;
    require(pl.block->K == K, "sigma_star_hat: sites disagree on K");
  }
  require(K >= 1,
          "sigma_star_hat: unavailable at K = 0 (no posterior information)");

  AsymptoticVariance out;
  out.regime = regime;
  out.gamma = n1 > 0 ? static_cast<double>(K) / n1 : 0.0;
  MatrixXd acc;
  if (regime == VarianceRegime::Main) {
    acc = fit.S_hat[0] / N;
    for (std::size_t m = 0; m < payloads.size(); ++m) {
      const MatrixXd outer = block_outer(*payloads[m].block) /
                             payloads[m].block->psi;
      const MatrixXd& Sm = fit.S_hat[m + 1];
      acc += (Sm * outer * Sm) / (N * static_cast<double>(K));
    }
  } else {
    acc = n1 * spd_inverse(fit.S_hat[0], "central Gram") / M;
    MatrixXd sum = MatrixXd::Zero(p, p);
    for (const SitePayload& pl : payloads) {
      sum += block_outer(*pl.block) / pl.block->psi;
    }
    acc += (n1 / (M * static_cast<double>(K))) * sum;
  }
  out.Sigma_star = 0.5 * (acc + acc.transpose());
  return out;
}

namespace {

void check_spd_list(const std::vector<MatrixXd>& list, const char* what) {
  require(!list.empty(), what, ": empty covariance list");
  const auto p = list.front().rows();
  for (const MatrixXd& S : list) {
    require(S.rows() == p && S.cols() == p, what,
            ": covariance dimensions disagree");
  }
}

}  // namespace

MatrixXd theory_sigma0(const std::vector<MatrixXd>& Sigma0_list,
                       double gamma) {
  check_spd_list(Sigma0_list, "theory_sigma0");
  require(gamma >= 0.0, "theory_sigma0: negative gamma");
  const auto p = Sigma0_list.front().rows();
  const double M = static_cast<double>(Sigma0_list.size());

  std::vector<MatrixXd> remote_inv;
  remote_inv.reserve(Sigma0_list.size());
  for (std::size_t m = 1; m < Sigma0_list.size(); ++m) {
    remote_inv.push_back(spd_inverse(Sigma0_list[m], "remote design"));
  }

  MatrixXd Sigma = MatrixXd::Zero(p, p);
  for (const MatrixXd& S : Sigma0_list) Sigma += S;
  Sigma /= M;

  const int max_iters = 10000;
  for (int it = 0; it < max_iters; ++it) {
    MatrixXd next = Sigma0_list[0] / M;
    const MatrixXd Sigma_inv = spd_inverse(Sigma, "iterate");
    for (const MatrixXd& Rinv : remote_inv) {
      next += (1.0 + gamma) / M *
              spd_inverse(MatrixXd(Sigma_inv + gamma * Rinv), "iterate blend");
    }
    next = 0.5 * (next + next.transpose()).eval();
    const double change = (next - Sigma).norm();
    Sigma = next;
    if (change < 1e-12) {
      // Residual check on the fixed-point equation itself.
      MatrixXd f0 = Sigma0_list[0] / M - Sigma;
      const MatrixXd Si = spd_inverse(Sigma, "solution");
      for (const MatrixXd& Rinv : remote_inv) {
        f0 += (1.0 + gamma) / M *
              spd_inverse(MatrixXd(Si + gamma * Rinv), "solution blend");
      }
      require(f0.norm() < 1e-10,
              "theory_sigma0: fixed point failed residual check, |f0| = ",
              f0.norm());
      return Sigma;
    }
  }
  fail("theory_sigma0: no convergence within ", max_iters, " iterations");
}

MatrixXd theory_sigma_star(const std::vector<MatrixXd>& Sigma0_list,
                           const MatrixXd& Sigma0, double gamma) {
  check_spd_list(Sigma0_list, "theory_sigma_star");
  require(gamma >= 0.0, "theory_sigma_star: negative gamma");
  const auto p = Sigma0_list.front().rows();
  const double M = static_cast<double>(Sigma0_list.size());

  if (gamma == 0.0) {
    MatrixXd acc = MatrixXd::Zero(p, p);
    for (const MatrixXd& S : Sigma0_list) {
      acc += spd_inverse(S, "site design");
    }
    return MatrixXd(acc / M);
  }

  require(Sigma0.rows() == p && Sigma0.cols() == p,
          "theory_sigma_star: Sigma0 dimension mismatch");
  const MatrixXd Sigma0_inv = spd_inverse(Sigma0, "Sigma0");
  MatrixXd acc = Sigma0_list[0] / M;
  for (std::size_t m = 1; m < Sigma0_list.size(); ++m) {
    const MatrixXd Rinv = spd_inverse(Sigma0_list[m], "remote design");
    const MatrixXd W =
        spd_inverse(MatrixXd(Sigma0_inv + gamma * Rinv), "blend");
    acc += (1.0 + gamma) * (1.0 + gamma) / M * W * Rinv * W;
  }
  return MatrixXd(0.5 * (acc + acc.transpose()));
}

}  // namespace cedar
