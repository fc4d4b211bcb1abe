#include "cedar/privacy.hpp"

#include <algorithm>
#include <cmath>

#include "cedar/common.hpp"
#include "cedar/linalg.hpp"

namespace cedar {

namespace {

void check_bound_inputs(const PrivacyBoundInputs& inp) {
  require(inp.delta > 0.0 && inp.delta < 1.0,
          "privacy bound: delta must lie in (0,1), got ", inp.delta);
  require(inp.K >= 0, "privacy bound: negative K");
  require(inp.c >= 0.0, "privacy bound: negative leverage c");
  require(inp.xi2 >= 0.0, "privacy bound: negative xi2");
  require(inp.psi > 0.0, "privacy bound: psi must be positive");
}

}  // namespace

std::pair<double, double> epsilon_delta_bound(const PrivacyBoundInputs& inp) {
  check_bound_inputs(inp);
  const double K = static_cast<double>(inp.K);
  const double log_inv_delta = std::log(1.0 / inp.delta);
  // The lambda term vanishes with c; skipping it keeps c=0 finite even when
  // lambda_priv (which divides by c) was never computable.
  const double lambda_term =
      inp.c > 0.0
          ? inp.c * std::sqrt(K * (1.0 + 2.0 * inp.lambda_priv) * log_inv_delta)
          : 0.0;
  const double forward = -0.5 * K * std::log1p(inp.c) + 0.5 * K * inp.c +
                         0.5 * K * inp.xi2 + inp.c * log_inv_delta +
                         lambda_term;
  const double reverse = 0.5 * K * std::log1p(inp.c) + 0.5 * K * inp.xi2;
  return {forward, reverse};
}

double expected_epsilon_bound(int K, double c, double psi, double delta) {
  require(delta > 0.0 && delta < 1.0,
          "privacy bound: delta must lie in (0,1), got ", delta);
  require(K >= 0, "privacy bound: negative K");
  require(c >= 0.0, "privacy bound: negative leverage c");
  require(psi > 0.0, "privacy bound: psi must be positive");
  if (c == 0.0) return 0.0;
  const double Kd = static_cast<double>(K);
  const double log_inv_delta = std::log(1.0 / delta);
  return -0.5 * Kd * std::log1p(c) + 0.5 * Kd * c + 0.5 * Kd * c / psi +
         c * log_inv_delta +
         c * std::sqrt(Kd * (1.0 + 2.0 * (1.0 + c) / (psi * c)) *
                       log_inv_delta);
}

double NeighborInstance::xi1() const {
  return c * r1 * r1 / ((1.0 + c) * (1.0 + c) * psi * sigma_sq);
}

double NeighborInstance::xi2() const {
  return c * r1 * r1 / ((1.0 + c) * psi * sigma_sq);
}

double NeighborInstance::lambda_priv() const {
  require(c > 0.0, "lambda_priv undefined at c = 0");
  return r1 * r1 / (psi * sigma_sq * c);
}

PrivacyBoundInputs NeighborInstance::bound_inputs(int K, double delta) const {
  PrivacyBoundInputs inp;
  inp.K = K;
  inp.c = c;
  inp.xi2 = xi2();
  inp.lambda_priv = c > 0.0 ? lambda_priv() : 0.0;
  inp.delta = delta;
  inp.psi = psi;
  return inp;
}

NeighborInstance sample_neighbor_instance(int n, int p, double c, double psi,
                                          double sigma_sq, Rng& rng) {
  // n = p is allowed: the Gram stays invertible almost surely and no
  // residual-variance estimate is ever taken (sigma^2 is the known truth).
  require(n >= p, "privacy scenario requires n >= p, got n = ", n, ", p = ",
          p);
  require(c > 0.0, "privacy scenario requires positive leverage c");
  require(psi > 0.0 && sigma_sq > 0.0,
          "privacy scenario requires positive psi and sigma^2");
  NeighborInstance inst;
  inst.n = n;
  inst.p = p;
  inst.c = c;
  inst.psi = psi;
  inst.sigma_sq = sigma_sq;

  MatrixXd X(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
  // The true coefficient vector is irrelevant: the privacy loss depends on the
  // data only through residual-type quantities invariant to beta0, so the
  // responses are pure noise (beta0 = 0).
  const double sigma = std::sqrt(sigma_sq);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = sigma * rng.normal();
  const double y_star = sigma * rng.normal();

  const MatrixXd S1 = X.transpose() * X;
  const Eigen::LLT<MatrixXd> llt1 = spd_llt(S1, "privacy scenario Gram");

  // Random direction rescaled so the leverage x' S1^{-1} x is exactly c.
  VectorXd v(p);
  for (int j = 0; j < p; ++j) v(j) = rng.normal();
  const double lev = v.dot(llt1.solve(v));
  require(lev > 0.0, "privacy scenario: degenerate direction");
  inst.x = v * std::sqrt(c / lev);

  inst.beta1 = llt1.solve(X.transpose() * y);
  inst.r1 = y_star - inst.x.dot(inst.beta1);
  // Rank-one update: beta2 = beta1 + S1^{-1} x r1 / (1 + c).
  inst.beta2 = inst.beta1 + llt1.solve(inst.x) * (inst.r1 / (1.0 + c));

  const MatrixXd S2 = S1 + inst.x * inst.x.transpose();
  inst.L1t = MatrixXd(llt1.matrixU());
  inst.L2t = MatrixXd(spd_llt(S2, "privacy scenario augmented Gram").matrixU());
  return inst;
}

double forward_loss_direct(const NeighborInstance& inst, const VectorXd& z) {
  const double scale = std::sqrt(inst.psi * inst.sigma_sq);
  const VectorXd beta_tilde =
      inst.beta1 +
      scale * inst.L1t.triangularView<Eigen::Upper>().solve(z);
  const double q1 = inst.psi * inst.sigma_sq * z.squaredNorm();
  const double q2 = (inst.L2t * (beta_tilde - inst.beta2)).squaredNorm();
  return -0.5 * std::log1p(inst.c) +
         (q2 - q1) / (2.0 * inst.psi * inst.sigma_sq);
}

double reverse_loss_direct(const NeighborInstance& inst, const VectorXd& z) {
  const double scale = std::sqrt(inst.psi * inst.sigma_sq);
  const VectorXd beta_tilde =
      inst.beta2 +
      scale * inst.L2t.triangularView<Eigen::Upper>().solve(z);
  const double q2 = inst.psi * inst.sigma_sq * z.squaredNorm();
  const double q1 = (inst.L1t * (beta_tilde - inst.beta1)).squaredNorm();
  return 0.5 * std::log1p(inst.c) +
         (q1 - q2) / (2.0 * inst.psi * inst.sigma_sq);
}

double forward_loss_scalar(const NeighborInstance& inst, double g) {
  const double sigma = std::sqrt(inst.sigma_sq);
  return 0.5 * inst.xi2() + 0.5 * inst.c * g * g -
         (inst.r1 / sigma) * std::sqrt(inst.c / inst.psi) * g -
         0.5 * std::log1p(inst.c);
}

double reverse_loss_scalar(const NeighborInstance& inst, double h) {
  const double sigma = std::sqrt(inst.sigma_sq);
  return 0.5 * std::log1p(inst.c) + 0.5 * inst.xi1() +
         (inst.r2() / sigma) * std::sqrt(inst.c / ((1.0 + inst.c) * inst.psi)) *
             h -
         0.5 * inst.c / (1.0 + inst.c) * h * h;
}

double forward_total_from(const NeighborInstance& inst, int K, double a,
                          double q) {
  const double Kd = static_cast<double>(K);
  const double sigma = std::sqrt(inst.sigma_sq);
  const double sum_g = std::sqrt(Kd) * a;
  const double sum_g2 = a * a + q;
  return -0.5 * Kd * std::log1p(inst.c) + 0.5 * Kd * inst.xi2() +
         0.5 * inst.c * sum_g2 -
         (inst.r1 / sigma) * std::sqrt(inst.c / inst.psi) * sum_g;
}

double reverse_total_from(const NeighborInstance& inst, int K, double a,
                          double q) {
  const double Kd = static_cast<double>(K);
  const double sigma = std::sqrt(inst.sigma_sq);
  const double sum_h = std::sqrt(Kd) * a;
  const double sum_h2 = a * a + q;
  return 0.5 * Kd * std::log1p(inst.c) + 0.5 * Kd * inst.xi1() +
         (inst.r2() / sigma) *
             std::sqrt(inst.c / ((1.0 + inst.c) * inst.psi)) * sum_h -
         0.5 * inst.c / (1.0 + inst.c) * sum_h2;
}

namespace {

// Sufficient pair for a sum of K iid standard normals and their squares:
// a = (sum g_k)/sqrt(K) ~ N(0,1), q = sum g_k^2 - a^2 ~ chisq(K-1),
// independent by orthogonal invariance.
std::pair<double, double> sample_projection_pair(int K, Rng& rng) {
  const double a = rng.normal();
  const double q = K > 1 ? rng.chisq(static_cast<double>(K - 1)) : 0.0;
  return {a, q};
}

}  // namespace

double sample_forward_total(const NeighborInstance& inst, int K, Rng& rng) {
  auto [a, q] = sample_projection_pair(K, rng);
  return forward_total_from(inst, K, a, q);
}

double sample_reverse_total(const NeighborInstance& inst, int K, Rng& rng) {
  auto [a, q] = sample_projection_pair(K, rng);
  return reverse_total_from(inst, K, a, q);
}

namespace {

// Empirical hockey-stick divergence evaluator over one loss sample: keeps the
// samples sorted descending with prefix sums of e^{-L} over the positive
// prefix, so delta_hat(eps) = (count(L > eps) - e^eps * sum_{L>eps} e^{-L})/R
// costs one binary search.
class HockeyCurve {
 public:
  explicit HockeyCurve(std::vector<double>& losses) : losses_(losses) {
    std::sort(losses_.begin(), losses_.end(), std::greater<double>());
    std::size_t pos = 0;
    while (pos < losses_.size() && losses_[pos] > 0.0) ++pos;
    prefix_.resize(pos + 1, 0.0);
    for (std::size_t i = 0; i < pos; ++i)
      prefix_[i + 1] = prefix_[i] + std::exp(-losses_[i]);
  }

  // Valid for eps >= 0 (the cut then falls inside the positive prefix).
  double delta_hat(double eps) const {
    const auto cut = std::upper_bound(losses_.begin(), losses_.end(), eps,
                                      std::greater<double>()) -
                     losses_.begin();
    const auto idx = static_cast<std::size_t>(cut);
    return (static_cast<double>(cut) - std::exp(eps) * prefix_[idx]) /
           static_cast<double>(losses_.size());
  }

  double max_loss() const { return losses_.empty() ? 0.0 : losses_.front(); }

 private:
  std::vector<double>& losses_;
  std::vector<double> prefix_;
};

}  // namespace

double hockey_min_epsilon(std::vector<double>& fwd, std::vector<double>& rev,
                          double delta) {
  require(!fwd.empty() && !rev.empty(), "hockey_min_epsilon: empty losses");
  require(delta > 0.0 && delta < 1.0, "hockey_min_epsilon: delta ∉ (0,1)");
  const HockeyCurve cf(fwd);
  const HockeyCurve cr(rev);
  auto ok = [&](double eps) {
    return std::max(cf.delta_hat(eps), cr.delta_hat(eps)) <= delta;
  };
  if (ok(0.0)) return 0.0;
  double lo = 0.0;
  double hi = std::max({cf.max_loss(), cr.max_loss(), 1e-12});
  // delta_hat(max loss) = 0 <= delta, so the root is bracketed.
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

double loss_quantile(std::vector<double>& losses, double delta) {
  require(!losses.empty(), "loss_quantile: empty losses");
  require(delta > 0.0 && delta < 1.0, "loss_quantile: delta ∉ (0,1)");
  std::sort(losses.begin(), losses.end());
  const double R = static_cast<double>(losses.size());
  auto k = static_cast<long long>(std::ceil((1.0 - delta) * R)) - 1;
  k = std::clamp(k, 0LL, static_cast<long long>(losses.size()) - 1);
  return losses[static_cast<std::size_t>(k)];
}

namespace {

double scenario_delta(const PrivacyScenario& sc) {
  return sc.delta > 0.0 ? sc.delta : 1.0 / static_cast<double>(sc.n);
}

void check_scenario(const PrivacyScenario& sc, double delta) {
  require(sc.n >= sc.p, "privacy scenario requires n >= p, got n = ", sc.n,
          ", p = ", sc.p);
  require(sc.K >= 0, "privacy scenario: negative K");
  require(sc.reps > 0 && sc.redraws > 0,
          "privacy scenario: reps and redraws must be positive");
  require(static_cast<double>(sc.reps) * delta >= 20.0,
          "privacy scenario: reps = ", sc.reps,
          " cannot resolve the delta-quantile at delta = ", delta,
          " (need reps * delta >= 20)");
}

}  // namespace

PrivacyReplicate privacy_replicate(const PrivacyScenario& sc,
                                   std::uint64_t seed) {
  const double delta = scenario_delta(sc);
  check_scenario(sc, delta);
  Rng rng(seed);
  const NeighborInstance inst =
      sample_neighbor_instance(sc.n, sc.p, sc.c, sc.psi, sc.sigma_sq, rng);

  PrivacyReplicate rep;
  rep.c = inst.c;
  rep.r1 = inst.r1;
  rep.xi1 = inst.xi1();
  rep.xi2 = inst.xi2();
  rep.lambda_priv = inst.lambda_priv();
  const auto [fwd_bound, rev_bound] =
      epsilon_delta_bound(inst.bound_inputs(sc.K, delta));
  rep.eps_fwd_bound = fwd_bound;
  rep.eps_rev_bound = rev_bound;

  if (sc.K == 0) return rep;  // releasing nothing: all losses identically 0

  std::vector<double> fwd(static_cast<std::size_t>(sc.reps));
  std::vector<double> rev(static_cast<std::size_t>(sc.reps));
  for (auto& l : fwd) l = sample_forward_total(inst, sc.K, rng);
  for (auto& l : rev) l = sample_reverse_total(inst, sc.K, rng);
  {
    std::vector<double> f2 = fwd;
    std::vector<double> r2 = rev;
    rep.q_fwd = loss_quantile(f2, delta);
    rep.q_rev = loss_quantile(r2, delta);
  }
  rep.eps_hs = hockey_min_epsilon(fwd, rev, delta);
  return rep;
}

double mc_min_epsilon(const PrivacyScenario& sc) {
  const double delta = scenario_delta(sc);
  check_scenario(sc, delta);
  if (sc.K == 0) return 0.0;
  double sum = 0.0;
  for (int r = 0; r < sc.redraws; ++r) {
    const std::uint64_t seed = derive_seed(sc.seed, 0x70726976, r);
    sum += privacy_replicate(sc, seed).eps_hs;
  }
  return sum / static_cast<double>(sc.redraws);
}

PrivacyReport privacy_report(const PrivacyScenario& sc) {
  const double delta = scenario_delta(sc);
  check_scenario(sc, delta);
  PrivacyReport report;
  report.eps_expected = expected_epsilon_bound(sc.K, sc.c, sc.psi, delta);

  double sum_fwd = 0.0, sum_rev = 0.0, sum_hs = 0.0;
  double sum_xi2 = 0.0, sum_lambda = 0.0;
  for (int r = 0; r < sc.redraws; ++r) {
    const std::uint64_t seed = derive_seed(sc.seed, 0x70726976, r);
    const PrivacyReplicate rep = privacy_replicate(sc, seed);
    sum_fwd += rep.eps_fwd_bound;
    sum_rev += rep.eps_rev_bound;
    sum_hs += rep.eps_hs;
    sum_xi2 += rep.xi2;
    sum_lambda += rep.lambda_priv;
  }
  const double inv = 1.0 / static_cast<double>(sc.redraws);
  report.eps_forward = sum_fwd * inv;
  report.eps_reverse = sum_rev * inv;
  report.eps_mc = sc.K == 0 ? 0.0 : sum_hs * inv;
  report.params.K = sc.K;
  report.params.c = sc.c;
  report.params.xi2 = sum_xi2 * inv;
  report.params.lambda_priv = sum_lambda * inv;
  report.params.delta = delta;
  report.params.psi = sc.psi;
  return report;
}

}  // namespace cedar
