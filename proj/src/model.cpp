#include "cedar/model.hpp"

#include <algorithm>
#include <cmath>

#include "cedar/linalg.hpp"
#include "cedar/rng.hpp"

namespace cedar {

std::vector<FeatureLaw> mixed_feature_laws(int p, std::uint64_t seed) {
  require(p >= 1, "feature count must be a positive integer, got ", p);
  int n_gauss = p / 2;
  int n_unif = p / 4;
  std::vector<FeatureLaw> laws;
  laws.reserve(p);
  for (int i = 0; i < n_gauss; ++i) laws.push_back(FeatureLaw::Gaussian);
  for (int i = 0; i < n_unif; ++i) laws.push_back(FeatureLaw::Uniform);
  while (static_cast<int>(laws.size()) < p) laws.push_back(FeatureLaw::Laplace);
  // Fisher-Yates with the derived stream so the assignment is reproducible.
  Rng rng(derive_seed(seed, 0x6c617773 /* "laws" */));
  for (int i = p - 1; i > 0; --i) {
    int j = static_cast<int>(rng.raw() % static_cast<std::uint64_t>(i + 1));
    std::swap(laws[i], laws[j]);
  }
  return laws;
}

std::vector<FeatureLaw> gaussian_feature_laws(int p) {
  require(p >= 1, "feature count must be a positive integer, got ", p);
  return std::vector<FeatureLaw>(p, FeatureLaw::Gaussian);
}

int beta0_support_size(int p) { return std::max(1, p / 4); }

VectorXd sparse_uniform_beta0(int p, std::uint64_t seed) {
  require(p >= 1, "feature count must be a positive integer, got ", p);
  Rng rng(derive_seed(seed, 0x62657461 /* "beta" */));
  VectorXd beta0 = VectorXd::Zero(p);
  int k = beta0_support_size(p);
  for (int j = 0; j < k; ++j) beta0[j] = rng.uniform();
  return beta0;
}

GroundTruth make_truth(VectorXd beta0, double sigma0_sq,
                       std::vector<FeatureLaw> laws) {
  require(sigma0_sq > 0.0, "sigma0_sq must be positive, got ", sigma0_sq);
  require(beta0.size() == static_cast<long>(laws.size()),
          "beta0 length ", beta0.size(), " does not match feature_law length ",
          laws.size());
  GroundTruth t;
  t.beta0 = std::move(beta0);
  t.sigma0_sq = sigma0_sq;
  t.feature_law = std::move(laws);
  return t;
}

SiteData generate_site_data(const GroundTruth& truth, int n,
                            std::uint64_t seed, int site_id) {
  int p = truth.p();
  require(p >= 1, "feature count must be a positive integer, got ", p);
  require(n >= 1, "site size must be >= 1, got ", n);
  require(truth.sigma0_sq > 0.0, "sigma0_sq must be positive");
  const double usc = std::sqrt(3.0);

  Rng rng(seed);
  SiteData d;
  d.site_id = site_id;
  d.X.resize(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      switch (truth.feature_law[j]) {
        case FeatureLaw::Gaussian: d.X(i, j) = rng.normal(); break;
        case FeatureLaw::Uniform: d.X(i, j) = rng.uniform(-usc, usc); break;
        case FeatureLaw::Laplace: d.X(i, j) = rng.laplace_unit(); break;
      }
    }
  }
  double s0 = std::sqrt(truth.sigma0_sq);
  d.y = d.X * truth.beta0;
  for (int i = 0; i < n; ++i) d.y[i] += s0 * rng.normal();
  return d;
}

LocalFit local_mle(const SiteData& data) {
  const int n = static_cast<int>(data.X.rows());
  const int p = static_cast<int>(data.X.cols());
  require(n == data.y.size(), "site ", data.site_id, ": X has ", n,
          " rows but y has ", data.y.size());
  require(data.X.allFinite() && data.y.allFinite(), "site ", data.site_id,
          ": non-finite entries in data");

  LocalFit fit;
  fit.site_id = data.site_id;
  fit.n = n;
  fit.p = p;
  fit.S = data.X.transpose() * data.X;
  Eigen::LLT<MatrixXd> llt(fit.S);
  require(llt.info() == Eigen::Success, "site ", data.site_id,
          ": rank-deficient design (X'X is not positive definite)");
  fit.beta_hat = llt.solve(data.X.transpose() * data.y);
  fit.sigma_hat_sq = (data.y - data.X * fit.beta_hat).squaredNorm() / n;
  return fit;
}

SufficientStats sufficient_stats(const SiteData& data) {
  SufficientStats s;
  s.n = static_cast<int>(data.X.rows());
  s.S = data.X.transpose() * data.X;
  s.Xty = data.X.transpose() * data.y;
  s.yty = data.y.squaredNorm();
  return s;
}

}  // namespace cedar
