#include "cedar/baselines.hpp"

#include <cmath>

#include "cedar/common.hpp"
#include "cedar/linalg.hpp"

namespace cedar {

VectorXd avgm(const std::vector<VectorXd>& betas) {
  require(!betas.empty(), "avgm: empty estimate list");
  const auto p = betas.front().size();
  VectorXd sum = VectorXd::Zero(p);
  for (std::size_t m = 0; m < betas.size(); ++m) {
    require(betas[m].size() == p, "avgm: estimate ", m + 1, " has dimension ",
            betas[m].size(), ", expected ", p);
    sum += betas[m];
  }
  return sum / static_cast<double>(betas.size());
}

double avgm_wald(const std::vector<double>& walds) {
  require(!walds.empty(), "avgm_wald: empty statistic list");
  double sum = 0.0;
  for (double w : walds) sum += w;
  return sum / std::sqrt(static_cast<double>(walds.size()));
}

std::vector<double> site_wald_statistics(const LocalFit& fit,
                                         const std::vector<Hypothesis>& hyps) {
  const MatrixXd Sinv = spd_inverse(fit.S, "site Gram");
  std::vector<double> out;
  out.reserve(hyps.size());
  const double sigma_hat = std::sqrt(fit.sigma_hat_sq);
  require(sigma_hat > 0.0, "site ", fit.site_id,
          ": zero residual variance, Wald statistic undefined");
  for (const Hypothesis& h : hyps) {
    require(h.j >= 0 && h.j < fit.p, "hypothesis index ", h.j,
            " out of range for p = ", fit.p);
    out.push_back((fit.beta_hat(h.j) - h.b0) /
                  (sigma_hat * std::sqrt(Sinv(h.j, h.j))));
  }
  return out;
}

OptFit opt_fit(const std::vector<SufficientStats>& stats) {
  require(!stats.empty(), "opt_fit: empty statistics list");
  const auto p = stats.front().S.rows();
  MatrixXd S_sum = MatrixXd::Zero(p, p);
  VectorXd Xty_sum = VectorXd::Zero(p);
  double yty_sum = 0.0;
  long long N = 0;
  for (std::size_t m = 0; m < stats.size(); ++m) {
    const SufficientStats& st = stats[m];
    require(st.S.rows() == p && st.S.cols() == p && st.Xty.size() == p,
            "opt_fit: statistics ", m + 1, " have mismatched dimension");
    S_sum += st.S;
    Xty_sum += st.Xty;
    yty_sum += st.yty;
    N += st.n;
  }
  OptFit fit;
  fit.N = N;
  const Eigen::LLT<MatrixXd> llt = spd_llt(S_sum, "pooled Gram");
  fit.beta = llt.solve(Xty_sum);
  require(N > p, "opt_fit: total sample size ", N,
          " too small for residual variance with p = ", p);
  fit.sigma_hat_sq =
      (yty_sum - fit.beta.dot(Xty_sum)) / static_cast<double>(N - p);
  // Tiny negative values can appear at machine precision on exact fits.
  fit.sigma_hat_sq = std::max(fit.sigma_hat_sq, 0.0);
  fit.var_scale =
      fit.sigma_hat_sq * llt.solve(MatrixXd::Identity(p, p));
  return fit;
}

VectorXd csl_gradient(const SiteData& data, const VectorXd& beta_bar) {
  require(data.X.cols() == beta_bar.size(), "csl_gradient: site ",
          data.site_id, " has p = ", data.X.cols(), ", beta_bar has ",
          beta_bar.size());
  const auto n = data.X.rows();
  require(n > 0, "csl_gradient: site ", data.site_id, " has no rows");
  return -(data.X.transpose() * (data.y - data.X * beta_bar)) /
         static_cast<double>(n);
}

VectorXd csl_fit(const CslInputs& inputs) {
  require(!inputs.gradients.empty(), "csl_fit: empty gradient list");
  const auto p = inputs.beta_bar.size();
  VectorXd grad_mean = VectorXd::Zero(p);
  for (std::size_t m = 0; m < inputs.gradients.size(); ++m) {
    require(inputs.gradients[m].size() == p, "csl_fit: gradient ", m + 1,
            " has dimension ", inputs.gradients[m].size(), ", expected ", p);
    grad_mean += inputs.gradients[m];
  }
  grad_mean /= static_cast<double>(inputs.gradients.size());
  const auto n = inputs.central.X.rows();
  require(n > 0 && inputs.central.X.cols() == p,
          "csl_fit: central data is empty or has wrong dimension");
  const MatrixXd S1 = inputs.central.X.transpose() * inputs.central.X;
  return inputs.beta_bar -
         static_cast<double>(n) * spd_solve(S1, grad_mean, "central Gram");
}

VectorXd hard_threshold(const VectorXd& beta, double level) {
  require(level >= 0.0, "hard_threshold: negative level");
  VectorXd out = beta;
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    if (std::abs(out(j)) <= level) out(j) = 0.0;
  }
  return out;
}

VectorXd lasso_quadratic(const MatrixXd& Q, const VectorXd& r, double lambda,
                         const VectorXd& start, double tol, int max_iters) {
  require(lambda >= 0.0, "lasso_quadratic: negative penalty");
  const auto p = r.size();
  require(Q.rows() == p && Q.cols() == p && start.size() == p,
          "lasso_quadratic: dimension mismatch");
  VectorXd beta = start;
  // Lipschitz constant of the gradient: max row sum bounds the spectral norm.
  double lip = Q.cwiseAbs().rowwise().sum().maxCoeff();
  if (!(lip > 0.0)) lip = 1.0;
  const double s = 1.0 / lip;
  auto soft = [](double x, double t) {
    return std::copysign(std::max(std::abs(x) - t, 0.0), x);
  };
  for (int it = 0; it < max_iters; ++it) {
    const VectorXd grad = Q * beta - r;
    VectorXd next(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      next(j) = soft(beta(j) - s * grad(j), lambda * s);
    }
    const double move = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    if (move <= tol * (1.0 + beta.cwiseAbs().maxCoeff())) break;
  }
  return beta;
}

}  // namespace cedar
