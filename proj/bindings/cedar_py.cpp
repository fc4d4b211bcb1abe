#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstdint>
#include <utility>
#include <vector>

#include "cedar/baselines.hpp"
#include "cedar/common.hpp"
#include "cedar/drivers.hpp"
#include "cedar/em.hpp"
#include "cedar/harness.hpp"
#include "cedar/inference.hpp"
#include "cedar/model.hpp"
#include "cedar/posterior.hpp"
#include "cedar/privacy.hpp"

namespace py = pybind11;

namespace {

using cedar::MatrixXd;
using cedar::VectorXd;
using XY = std::pair<MatrixXd, VectorXd>;

std::vector<cedar::SiteData> to_sites(const std::vector<XY>& xy) {
  cedar::require(!xy.empty(), "at least one (X, y) site is required");
  std::vector<cedar::SiteData> sites;
  sites.reserve(xy.size());
  for (std::size_t i = 0; i < xy.size(); ++i)
    sites.push_back({static_cast<int>(i) + 1, xy[i].first, xy[i].second});
  return sites;
}

cedar::Alternative parse_alternative(const std::string& s) {
  if (s == "two_sided") return cedar::Alternative::TwoSided;
  if (s == "greater") return cedar::Alternative::Greater;
  if (s == "less") return cedar::Alternative::Less;
  cedar::fail("unknown alternative \"", s,
              "\" (use two_sided | greater | less)");
}

}  // namespace

PYBIND11_MODULE(cedar_core, m) {
  m.doc() =
      "One-shot distributed regression: EM aggregation over "
      "privacy-preserving posterior samples, baselines, and privacy "
      "accounting";

  m.def(
      "local_fit",
      [](const MatrixXd& X, const VectorXd& y) {
        const cedar::LocalFit fit = cedar::local_mle({1, X, y});
        py::dict d;
        d["beta"] = fit.beta_hat;
        d["sigma_sq"] = fit.sigma_hat_sq;
        d["S"] = fit.S;
        d["n"] = fit.n;
        return d;
      },
      py::arg("X"), py::arg("y"),
      "Per-site least squares: beta, MLE residual variance, Gram matrix");

  m.def(
      "simulate_sites",
      [](int p, int n, int M, double sigma0_sq, std::uint64_t seed) {
        cedar::require(p >= 1 && n >= p && M >= 1,
                       "need p >= 1, n >= p, M >= 1");
        const VectorXd beta0 =
            cedar::sparse_uniform_beta0(p, cedar::derive_seed(seed, 1, 0));
        const cedar::GroundTruth truth = cedar::make_truth(
            beta0, sigma0_sq,
            cedar::mixed_feature_laws(p, cedar::derive_seed(seed, 2, 0)));
        py::list sites;
        for (int site = 1; site <= M; ++site) {
          const cedar::SiteData data = cedar::generate_site_data(
              truth, n, cedar::derive_seed(seed, 3, 0, site), site);
          sites.append(py::make_tuple(data.X, data.y));
        }
        py::dict out;
        out["beta0"] = beta0;
        out["sites"] = sites;
        return out;
      },
      py::arg("p"), py::arg("n"), py::arg("M"), py::arg("sigma0_sq") = 1.0,
      py::arg("seed") = 1,
      "Simulation-study data: sparse uniform coefficients, mixed feature "
      "laws, Gaussian noise");

  m.def("avgm", &cedar::avgm, py::arg("betas"),
        "Mean of per-site estimates");

  m.def(
      "opt",
      [](const std::vector<XY>& xy) {
        std::vector<cedar::SufficientStats> stats;
        for (const cedar::SiteData& site : to_sites(xy))
          stats.push_back(cedar::sufficient_stats(site));
        const cedar::OptFit fit = cedar::opt_fit(stats);
        py::dict d;
        d["beta"] = fit.beta;
        d["sigma_sq"] = fit.sigma_hat_sq;
        d["N"] = fit.N;
        return d;
      },
      py::arg("sites"), "Pooled least squares from sufficient statistics");

  m.def(
      "csl",
      [](const std::vector<XY>& xy, bool avgm_init) {
        const std::vector<cedar::SiteData> sites = to_sites(xy);
        std::vector<VectorXd> betas;
        for (const cedar::SiteData& site : sites)
          betas.push_back(cedar::local_mle(site).beta_hat);
        cedar::CslInputs inputs;
        inputs.beta_bar = avgm_init ? cedar::avgm(betas) : betas.front();
        inputs.central = sites.front();
        for (const cedar::SiteData& site : sites)
          inputs.gradients.push_back(
              cedar::csl_gradient(site, inputs.beta_bar));
        return cedar::csl_fit(inputs);
      },
      py::arg("sites"), py::arg("avgm_init") = false,
      "One-round surrogate-likelihood estimate (central site first)");

  m.def(
      "cedar_fit",
      [](const std::vector<XY>& xy, int K, double psi, std::uint64_t seed,
         double penalty_lambda) {
        const std::vector<cedar::SiteData> sites = to_sites(xy);
        cedar::TaskRequest request;
        if (K >= 1) {
          request.task = cedar::Task::MlePlusPosterior;
          request.K = K;
          request.psi = psi;
        } else {
          request.task = cedar::Task::MleOnly;
        }
        std::vector<cedar::SitePayload> payloads;
        for (std::size_t i = 1; i < sites.size(); ++i)
          payloads.push_back(cedar::site_respond(
              sites[i], request,
              cedar::derive_seed(seed, 4, 0, sites[i].site_id)));
        cedar::CedarOptions opts;
        opts.penalty_lambda = penalty_lambda;
        const cedar::CedarFit fit =
            cedar::cedar_fit(sites.front(), payloads, opts);
        py::dict d;
        d["beta"] = fit.beta;
        d["sigma_sq"] = fit.sigma_sq;
        d["Sigma"] = fit.Sigma;
        d["iterations"] = fit.iterations;
        d["converged"] = fit.converged;
        d["loglik"] = fit.final_loglik;
        d["N"] = fit.N;
        return d;
      },
      py::arg("sites"), py::arg("K") = 16, py::arg("psi") = 100.0,
      py::arg("seed") = 1, py::arg("penalty_lambda") = 0.0,
      "EM aggregation over remote payloads built from (X, y) per site "
      "(central site first)");

  m.def(
      "posterior_draws",
      [](const MatrixXd& X, const VectorXd& y, int K, double psi,
         std::uint64_t seed) {
        const cedar::LocalFit fit = cedar::local_mle({1, X, y});
        const cedar::PosteriorDraws draws =
            cedar::draw_posterior(fit, K, psi, seed);
        py::dict d;
        d["beta_tilde"] = draws.beta_tilde;
        d["sigma_tilde_sq"] = draws.sigma_tilde_sq;
        d["norm_cols"] = draws.norm_cols;
        return d;
      },
      py::arg("X"), py::arg("y"), py::arg("K"), py::arg("psi") = 100.0,
      py::arg("seed") = 1, "Scaled-posterior draws for one site");

  m.def(
      "epsilon_bound",
      [](int K, double c, double xi2, double lambda_priv, double delta,
         double psi) {
        cedar::PrivacyBoundInputs inputs;
        inputs.K = K;
        inputs.c = c;
        inputs.xi2 = xi2;
        inputs.lambda_priv = lambda_priv;
        inputs.delta = delta;
        inputs.psi = psi;
        const auto [fwd, rev] = cedar::epsilon_delta_bound(inputs);
        return py::make_tuple(fwd, rev);
      },
      py::arg("K"), py::arg("c"), py::arg("xi2"), py::arg("lambda_priv"),
      py::arg("delta"), py::arg("psi") = 100.0,
      "Closed-form (epsilon, delta) bound, forward and reverse directions");

  m.def("expected_epsilon_bound", &cedar::expected_epsilon_bound,
        py::arg("K"), py::arg("c"), py::arg("psi"), py::arg("delta"),
        "Expectation form of the privacy bound");

  m.def(
      "mc_min_epsilon",
      [](int n, int p, int K, double psi, double c, double delta,
         long long reps, int redraws, std::uint64_t seed, double sigma_sq) {
        cedar::PrivacyScenario sc;
        sc.n = n;
        sc.p = p;
        sc.K = K;
        sc.psi = psi;
        sc.c = c;
        sc.delta = delta;
        sc.reps = reps;
        sc.redraws = redraws;
        sc.seed = seed;
        sc.sigma_sq = sigma_sq;
        return cedar::mc_min_epsilon(sc);
      },
      py::arg("n"), py::arg("p"), py::arg("K"), py::arg("psi") = 100.0,
      py::arg("c") = 0.25, py::arg("delta") = -1.0,
      py::arg("reps") = 100000, py::arg("redraws") = 8, py::arg("seed") = 1,
      py::arg("sigma_sq") = 1.0,
      "Monte Carlo minimum epsilon of the K-draw release");

  m.def("normal_quantile", &cedar::normal_quantile, py::arg("p"),
        "Standard normal quantile");

  m.def(
      "analyze_files",
      [](const std::vector<std::filesystem::path>& files,
         const std::string& method, int K, double psi, double alpha,
         const std::string& alternative, std::uint64_t seed,
         const std::filesystem::path& drop_root) {
        cedar::AnalyzeOptions options;
        options.method = method;
        options.K = K;
        options.psi = psi;
        options.alpha = alpha;
        options.alternative = parse_alternative(alternative);
        options.seed = seed;
        options.drop_root = drop_root;
        return cedar::analyze_csv(files, options);
      },
      py::arg("files"), py::arg("method") = "cedar", py::arg("K") = 16,
      py::arg("psi") = 100.0, py::arg("alpha") = 0.05,
      py::arg("alternative") = "two_sided", py::arg("seed") = 1,
      py::arg("drop_root") = std::filesystem::path{},
      "Full pipeline over site CSV files via the file-drop protocol; "
      "returns JSON");

  m.def(
      "run_experiment_csv",
      [](const std::string& config_json) {
        const cedar::ExperimentConfig cfg =
            cedar::config_from_json(config_json);
        return cedar::results_csv(cedar::run_experiment(cfg));
      },
      py::arg("config_json"),
      "Replicated method-comparison study; returns the long-form results "
      "CSV");
}
