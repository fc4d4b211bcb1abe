#include "cedar/em.hpp"

#include <cmath>

#include "cedar/linalg.hpp"
#include "cedar/model.hpp"
#include "cedar/posterior.hpp"

namespace cedar {

namespace {

int block_K(const SitePayload& pl) { return pl.block ? pl.block->K : 0; }

void check_payloads(const LocalFit& central,
                    const std::vector<SitePayload>& payloads) {
  for (const auto& pl : payloads) {
    require(pl.p == central.p, "dimension mismatch across payloads: site ",
            pl.site_id, " has p=", pl.p, ", central has p=", central.p);
    require(pl.beta_hat.size() == central.p, "site ", pl.site_id,
            ": beta_hat length does not match p");
  }
}

}  // namespace

std::vector<MatrixXd> e_step(const VectorXd& beta, double sigma_sq,
                             const MatrixXd& Sigma, const LocalFit& central,
                             const std::vector<SitePayload>& payloads,
                             EstepMode mode) {
  check_payloads(central, payloads);
  require(sigma_sq > 0.0, "sigma_sq must be positive in the E-step");
  const int p = central.p;
  const double sigma = std::sqrt(sigma_sq);
  auto llt = spd_llt(Sigma, "Sigma");
  MatrixXd SigmaInv = llt.solve(MatrixXd::Identity(p, p));

  std::vector<MatrixXd> S_hat;
  S_hat.reserve(payloads.size() + 1);
  S_hat.push_back(central.S);

  for (const auto& pl : payloads) {
    const int K = block_K(pl);
    const double nu = pl.n + K + 1;
    VectorXd a = (pl.beta_hat - beta) / sigma;

    bool columns = pl.block && pl.block->form == BlockForm::Columns;
    bool use_woodbury = false;
    if (mode == EstepMode::Woodbury)
      use_woodbury = (K == 0) || columns;
    else if (mode == EstepMode::Auto)
      use_woodbury = (K + 1 <= p) && ((K == 0) || columns);

    MatrixXd Sm;
    if (use_woodbury) {
      MatrixXd A(p, K + 1);
      A.col(0) = a;
      if (K > 0) A.rightCols(K) = pl.block->B / std::sqrt(pl.block->psi);
      MatrixXd SA = Sigma * A;
      MatrixXd C = MatrixXd::Identity(K + 1, K + 1) + A.transpose() * SA;
      Sm = nu * (Sigma - SA * spd_solve(C, SA.transpose(), "E-step capacitance"));
    } else {
      MatrixXd Mm = SigmaInv + a * a.transpose();
      if (K > 0) Mm += block_outer(*pl.block) / pl.block->psi;
      Sm = nu * spd_inverse(Mm, "E-step precision");
    }
    Sm = 0.5 * (Sm + Sm.transpose().eval());  // clean symmetry
    require(Sm.allFinite(), "E-step produced non-finite values at site ",
            pl.site_id);
    S_hat.push_back(std::move(Sm));
  }
  return S_hat;
}

MStepResult m_step(const std::vector<MatrixXd>& S_hat, const LocalFit& central,
                   const std::vector<SitePayload>& payloads) {
  check_payloads(central, payloads);
  require(S_hat.size() == payloads.size() + 1,
          "S_hat list must cover the central site plus every payload");
  const int p = central.p;

  MatrixXd Ssum = MatrixXd::Zero(p, p);
  VectorXd rhs = VectorXd::Zero(p);
  long long N = central.n;
  Ssum += S_hat[0];
  rhs += S_hat[0] * central.beta_hat;
  for (std::size_t m = 0; m < payloads.size(); ++m) {
    Ssum += S_hat[m + 1];
    rhs += S_hat[m + 1] * payloads[m].beta_hat;
    N += payloads[m].n;
  }

  MStepResult out;
  out.beta = spd_solve(Ssum, rhs, "M-step Gram sum");
  double acc = 0.0;
  VectorXd d = central.beta_hat - out.beta;
  acc += d.dot(S_hat[0] * d) + central.n * central.sigma_hat_sq;
  for (std::size_t m = 0; m < payloads.size(); ++m) {
    d = payloads[m].beta_hat - out.beta;
    acc += d.dot(S_hat[m + 1] * d) + payloads[m].n * payloads[m].sigma_hat_sq;
  }
  out.sigma_sq = acc / static_cast<double>(N);
  out.Sigma = Ssum / static_cast<double>(N);
  return out;
}

VectorXd prox_l1(const VectorXd& x, double lambda, double s) {
  require(s > 0.0, "prox step size must be positive");
  double t = lambda * s;
  return x.unaryExpr([t](double v) {
    double a = std::fabs(v) - t;
    return a > 0.0 ? (v > 0 ? a : -a) : 0.0;
  });
}

VectorXd sparse_beta_step(const std::vector<MatrixXd>& S_hat,
                          const LocalFit& central,
                          const std::vector<SitePayload>& payloads,
                          const VectorXd& beta_start, double sigma_sq,
                          double lambda, double tol, int max_iters) {
  require(lambda >= 0.0, "penalty lambda must be nonnegative");
  const int p = central.p;
  MatrixXd Ssum = S_hat[0];
  VectorXd rhs = S_hat[0] * central.beta_hat;
  for (std::size_t m = 0; m < payloads.size(); ++m) {
    Ssum += S_hat[m + 1];
    rhs += S_hat[m + 1] * payloads[m].beta_hat;
  }
  auto Qval = [&](const VectorXd& b) {
    return 0.5 * b.dot(Ssum * b) - rhs.dot(b);
  };

  VectorXd beta = beta_start;
  double s = 1.0 / std::max(1.0, Ssum.cwiseAbs().rowwise().sum().maxCoeff());
  const double w = lambda * sigma_sq;
  for (int it = 0; it < max_iters; ++it) {
    VectorXd grad = Ssum * beta - rhs;
    double qb = Qval(beta);
    VectorXd z;
    for (;;) {
      z = prox_l1(beta - s * grad, w, s);
      VectorXd dz = z - beta;
      if (Qval(z) <= qb + grad.dot(dz) + dz.squaredNorm() / (2.0 * s) + 1e-14 * std::fabs(qb))
        break;
      s *= 0.5;
      require(s > 1e-300, "line-search failure: step size underflow");
    }
    double move = (z - beta).cwiseAbs().maxCoeff();
    beta = z;
    if (move <= tol * (1.0 + beta.cwiseAbs().maxCoeff())) break;
    s *= 1.25;  // cautious growth; backtracking shrinks again if needed
  }
  (void)p;
  return beta;
}

double marginal_loglik(const VectorXd& beta, double sigma_sq,
                       const MatrixXd& Sigma, const LocalFit& central,
                       const std::vector<SitePayload>& payloads) {
  check_payloads(central, payloads);
  require(sigma_sq > 0.0, "sigma_sq must be positive");
  const int p = central.p;
  auto llt = spd_llt(Sigma, "Sigma");
  double logdet_Sigma =
      2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  MatrixXd SigmaInv = llt.solve(MatrixXd::Identity(p, p));

  long long N = central.n;
  double sum_nsig = central.n * central.sigma_hat_sq;
  for (const auto& pl : payloads) {
    N += pl.n;
    sum_nsig += pl.n * pl.sigma_hat_sq;
  }

  double l = 0.0;
  l -= 0.5 * static_cast<double>(N) * std::log(sigma_sq);
  l -= sum_nsig / (2.0 * sigma_sq);
  l -= 0.5 * static_cast<double>(N) * logdet_Sigma;
  VectorXd d1 = central.beta_hat - beta;
  l -= d1.dot(central.S * d1) / (2.0 * sigma_sq);
  l -= 0.5 * (SigmaInv * central.S).trace();

  for (const auto& pl : payloads) {
    const int K = block_K(pl);
    const double nu = pl.n + K + 1;
    VectorXd a = (pl.beta_hat - beta) / std::sqrt(sigma_sq);
    MatrixXd Mm = SigmaInv + a * a.transpose();
    if (K > 0) Mm += block_outer(*pl.block) / pl.block->psi;
    double logdet_M = spd_logdet(Mm, "integrated Wishart precision");
    l += 0.5 * nu * (p * std::log(2.0) - logdet_M) + mvlgamma(p, 0.5 * nu);
  }
  require(std::isfinite(l), "marginal loglikelihood is not finite");
  return l;
}

namespace detail {

CedarFit cedar_fit_impl(const LocalFit& central,
                        const std::vector<SitePayload>& payloads,
                        const CedarOptions& opts, bool force_prox) {
  check_payloads(central, payloads);
  require(opts.max_iters >= 1, "max_iters must be >= 1");
  require(opts.tol > 0.0, "tol must be positive");
  require(opts.penalty_lambda >= 0.0, "penalty_lambda must be nonnegative");
  const int p = central.p;
  const int M = static_cast<int>(payloads.size()) + 1;
  const double lambda = opts.penalty_lambda;
  const bool prox_path = lambda > 0.0 || force_prox;

  long long N = central.n;
  for (const auto& pl : payloads) N += pl.n;

  // Initialization: AVGM coefficients, central Gram scaled by its site size,
  // and the variance update evaluated with the observed central Gram.
  VectorXd beta;
  if (opts.init_beta) {
    beta = *opts.init_beta;
    require(beta.size() == p, "init_beta length does not match p");
  } else {
    beta = central.beta_hat;
    for (const auto& pl : payloads) beta += pl.beta_hat;
    beta /= static_cast<double>(M);
  }
  MatrixXd Sigma = opts.init_Sigma ? *opts.init_Sigma
                                   : MatrixXd(central.S / central.n);
  double sigma_sq;
  if (opts.init_sigma_sq) {
    sigma_sq = *opts.init_sigma_sq;
  } else {
    double acc = 0.0;
    VectorXd d = central.beta_hat - beta;
    acc += d.dot(central.S * d) + central.n * central.sigma_hat_sq;
    for (const auto& pl : payloads) {
      d = pl.beta_hat - beta;
      acc += d.dot(central.S * d) + pl.n * pl.sigma_hat_sq;
    }
    sigma_sq = acc / static_cast<double>(N);
  }
  require(sigma_sq > 0.0,
          "degenerate initialization: zero error variance across all sites");

  CedarFit fit;
  fit.N = static_cast<int>(N);
  fit.n_central = central.n;
  auto objective = [&](const VectorXd& b, double s2, const MatrixXd& Sg) {
    double J = marginal_loglik(b, s2, Sg, central, payloads);
    if (lambda > 0.0) J -= lambda * b.cwiseAbs().sum();
    return J;
  };
  fit.loglik_trace.push_back(objective(beta, sigma_sq, Sigma));

  std::vector<MatrixXd> S_hat;
  bool converged = false;
  int iter = 0;
  for (iter = 1; iter <= opts.max_iters; ++iter) {
    {
      Eigen::LLT<MatrixXd> chk(Sigma);
      require(chk.info() == Eigen::Success, "EM iteration ", iter,
              ": Sigma is not positive definite");
    }
    S_hat = e_step(beta, sigma_sq, Sigma, central, payloads, opts.estep_mode);

    VectorXd beta_next;
    if (prox_path) {
      beta_next =
          sparse_beta_step(S_hat, central, payloads, beta, sigma_sq, lambda,
                           std::min(opts.tol * 1e-2, 1e-10));
    } else {
      MStepResult ms = m_step(S_hat, central, payloads);
      beta_next = std::move(ms.beta);
    }
    // variance and covariance updates use the fresh coefficients
    double acc = 0.0;
    MatrixXd Ssum = MatrixXd::Zero(p, p);
    {
      VectorXd d = central.beta_hat - beta_next;
      acc += d.dot(S_hat[0] * d) + central.n * central.sigma_hat_sq;
      Ssum += S_hat[0];
      for (std::size_t m = 0; m < payloads.size(); ++m) {
        d = payloads[m].beta_hat - beta_next;
        acc += d.dot(S_hat[m + 1] * d) +
               payloads[m].n * payloads[m].sigma_hat_sq;
        Ssum += S_hat[m + 1];
      }
    }
    double sigma_next = acc / static_cast<double>(N);
    require(sigma_next > 0.0, "EM iteration ", iter,
            ": error variance collapsed to zero");
    MatrixXd Sigma_next = Ssum / static_cast<double>(N);

    double J = objective(beta_next, sigma_next, Sigma_next);
    double dJ = std::fabs(J - fit.loglik_trace.back()) /
                (1.0 + std::fabs(fit.loglik_trace.back()));
    double change = std::max({rel_change(beta_next, beta),
                              rel_change(sigma_next, sigma_sq),
                              rel_change(Sigma_next, Sigma), dJ});
    beta = std::move(beta_next);
    sigma_sq = sigma_next;
    Sigma = std::move(Sigma_next);
    fit.loglik_trace.push_back(J);
    if (change < opts.tol) {
      converged = true;
      break;
    }
  }

  fit.beta = beta;
  fit.sigma_sq = sigma_sq;
  fit.Sigma = Sigma;
  // refresh the imputations at the final parameters so the returned S_hat
  // list is consistent with (beta, sigma_sq, Sigma)
  fit.S_hat = e_step(beta, sigma_sq, Sigma, central, payloads, opts.estep_mode);
  fit.iterations = std::min(iter, opts.max_iters);
  fit.converged = converged;
  fit.final_loglik = marginal_loglik(beta, sigma_sq, Sigma, central, payloads);
  return fit;
}

}  // namespace detail

CedarFit cedar_fit(const LocalFit& central,
                   const std::vector<SitePayload>& payloads,
                   const CedarOptions& opts) {
  return detail::cedar_fit_impl(central, payloads, opts, false);
}

CedarFit cedar_fit(const SiteData& central,
                   const std::vector<SitePayload>& payloads,
                   const CedarOptions& opts) {
  return detail::cedar_fit_impl(local_mle(central), payloads, opts, false);
}

}  // namespace cedar
