#include "cedar/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>
#include <tuple>
#include <utility>

#include "cedar/baselines.hpp"
#include "cedar/common.hpp"
#include "cedar/csv.hpp"
#include "cedar/drivers.hpp"
#include "cedar/em.hpp"
#include "cedar/linalg.hpp"
#include "cedar/model.hpp"
#include "cedar/privacy.hpp"
#include "cedar/protocol.hpp"

namespace cedar {

namespace fs = std::filesystem;
using nlohmann::json;

// --- configuration ------------------------------------------------------------

namespace {

const std::set<std::string>& valid_methods() {
  static const std::set<std::string> methods{"avgm", "opt", "csl1", "csla",
                                             "cedar"};
  return methods;
}

long long as_int(const json& v, const std::string& key) {
  require(v.is_number_integer(), "config: \"", key, "\" must be an integer");
  return v.get<long long>();
}

double as_double(const json& v, const std::string& key) {
  require(v.is_number(), "config: \"", key, "\" must be a number");
  return v.get<double>();
}

std::uint64_t as_seed(const json& v, const std::string& key) {
  require(v.is_number_integer() && (v.is_number_unsigned() ||
                                    v.get<long long>() >= 0),
          "config: \"", key, "\" must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

std::vector<int> as_int_list(const json& v, const std::string& key) {
  std::vector<int> out;
  if (v.is_array()) {
    require(!v.empty(), "config: \"", key, "\" must be nonempty");
    for (const json& e : v)
      out.push_back(static_cast<int>(as_int(e, key)));
  } else {
    out.push_back(static_cast<int>(as_int(v, key)));
  }
  return out;
}

std::vector<double> as_double_list(const json& v, const std::string& key) {
  std::vector<double> out;
  require(v.is_array() && !v.empty(), "config: \"", key,
          "\" must be a nonempty array of numbers");
  for (const json& e : v) out.push_back(as_double(e, key));
  return out;
}

Alternative parse_alternative(const std::string& s) {
  if (s == "two_sided") return Alternative::TwoSided;
  if (s == "greater") return Alternative::Greater;
  if (s == "less") return Alternative::Less;
  fail("config: unknown alternative \"", s,
       "\" (use two_sided | greater | less)");
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const std::exception& e) {
    fail("config: invalid JSON: ", e.what());
  }
  require(doc.is_object(), "config: top level must be a JSON object");

  ExperimentConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (key == "p") {
      cfg.p = static_cast<int>(as_int(value, key));
    } else if (key == "n" || key == "n_grid") {
      cfg.n_grid = as_int_list(value, key);
    } else if (key == "M" || key == "M_grid") {
      cfg.M_grid = as_int_list(value, key);
    } else if (key == "N_fixed") {
      cfg.N_fixed = as_int(value, key);
    } else if (key == "K" || key == "K_list") {
      cfg.K_list = as_int_list(value, key);
    } else if (key == "psi") {
      cfg.psi = as_double(value, key);
    } else if (key == "replicates") {
      cfg.replicates = static_cast<int>(as_int(value, key));
    } else if (key == "sigma0_sq") {
      cfg.sigma0_sq = as_double(value, key);
    } else if (key == "methods") {
      require(value.is_array() && !value.empty(),
              "config: \"methods\" must be a nonempty array of names");
      cfg.methods.clear();
      for (const json& e : value) {
        require(e.is_string(), "config: method names must be strings");
        cfg.methods.push_back(e.get<std::string>());
      }
    } else if (key == "sparse") {
      require(value.is_object(), "config: \"sparse\" must be an object");
      SparseConfig sp;
      for (const auto& [skey, sval] : value.items()) {
        if (skey == "lambda_grid")
          sp.lambda_grid = as_double_list(sval, "sparse.lambda_grid");
        else if (skey == "threshold_grid")
          sp.threshold_grid = as_double_list(sval, "sparse.threshold_grid");
        else
          fail("config: unknown key \"sparse.", skey, "\"");
      }
      cfg.sparse = std::move(sp);
    } else if (key == "tests") {
      require(value.is_object(), "config: \"tests\" must be an object");
      TestConfig tc;
      for (const auto& [tkey, tval] : value.items()) {
        if (tkey == "alpha") {
          tc.alpha = as_double(tval, "tests.alpha");
        } else if (tkey == "alternative") {
          require(tval.is_string(),
                  "config: \"tests.alternative\" must be a string");
          tc.alternative = parse_alternative(tval.get<std::string>());
        } else {
          fail("config: unknown key \"tests.", tkey, "\"");
        }
      }
      cfg.tests = tc;
    } else if (key == "master_seed" || key == "seed") {
      cfg.master_seed = as_seed(value, key);
    } else {
      fail("config: unknown key \"", key, "\"");
    }
  }
  return cfg;
}

ExperimentConfig config_from_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "config: cannot open ", path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

void validate_config(const ExperimentConfig& cfg) {
  require(cfg.p >= 1, "config: p must be >= 1, got ", cfg.p);
  require(cfg.replicates >= 1, "config: replicates must be >= 1, got ",
          cfg.replicates);
  require(cfg.psi > 0.0, "config: psi must be positive, got ", cfg.psi);
  require(cfg.sigma0_sq > 0.0, "config: sigma0_sq must be positive, got ",
          cfg.sigma0_sq);
  require(!cfg.K_list.empty(), "config: K_list must be nonempty");
  for (int K : cfg.K_list)
    require(K >= 0, "config: K must be nonnegative, got ", K);
  require(!cfg.methods.empty(), "config: methods must be nonempty");
  std::set<std::string> seen;
  for (const std::string& m : cfg.methods) {
    require(valid_methods().count(m) != 0, "config: unknown method \"", m,
            "\" (use avgm | opt | csl1 | csla | cedar)");
    require(seen.insert(m).second, "config: duplicate method \"", m, "\"");
  }
  if (cfg.N_fixed) {
    require(cfg.n_grid.empty(),
            "config: give either n/n_grid or N_fixed, not both");
    require(!cfg.M_grid.empty(), "config: N_fixed requires M or M_grid");
    require(*cfg.N_fixed >= 1, "config: N_fixed must be >= 1");
    for (int M : cfg.M_grid) {
      require(M >= 1, "config: M must be >= 1, got ", M);
      require(*cfg.N_fixed % M == 0, "config: N_fixed = ", *cfg.N_fixed,
              " is not divisible by M = ", M);
      require(*cfg.N_fixed / M >= cfg.p, "config: n = N_fixed/M = ",
              *cfg.N_fixed / M, " is below p = ", cfg.p);
    }
  } else {
    require(!cfg.n_grid.empty(), "config: n (or n_grid or N_fixed) is required");
    require(!cfg.M_grid.empty(), "config: M (or M_grid) is required");
    for (int n : cfg.n_grid)
      require(n >= cfg.p, "config: n = ", n, " must be at least p = ", cfg.p,
              " (per-site least squares needs an invertible Gram)");
    for (int M : cfg.M_grid)
      require(M >= 1, "config: M must be >= 1, got ", M);
  }
  if (cfg.tests)
    require(cfg.tests->alpha > 0.0 && cfg.tests->alpha < 1.0,
            "config: tests.alpha must lie in (0, 1), got ", cfg.tests->alpha);
  if (cfg.sparse) {
    require(!cfg.sparse->lambda_grid.empty() ||
                !cfg.sparse->threshold_grid.empty(),
            "config: sparse block needs lambda_grid or threshold_grid");
    for (double v : cfg.sparse->lambda_grid)
      require(std::isfinite(v) && v >= 0.0,
              "config: sparse.lambda_grid entries must be finite and >= 0");
    for (double v : cfg.sparse->threshold_grid)
      require(std::isfinite(v) && v >= 0.0,
              "config: sparse.threshold_grid entries must be finite and >= 0");
  }
}

std::vector<GridPoint> config_grid(const ExperimentConfig& cfg) {
  std::vector<GridPoint> grid;
  if (cfg.N_fixed) {
    for (int M : cfg.M_grid)
      grid.push_back({static_cast<int>(*cfg.N_fixed / M), M});
  } else {
    for (int n : cfg.n_grid)
      for (int M : cfg.M_grid) grid.push_back({n, M});
  }
  return grid;
}

// --- replicate studies ----------------------------------------------------------

namespace {

// Seed-stream labels: 1 coefficient design, 2 feature laws, 3 site data,
// 4 site responders. Streams depend only on (master_seed, replicate, site),
// never on the grid point or execution order, so reruns and regrids share
// random numbers.
struct ReplicateData {
  VectorXd beta0;
  std::vector<SiteData> sites;  // site ids 1..M
};

ReplicateData make_replicate(const ExperimentConfig& cfg, int n, int M,
                             int r) {
  ReplicateData data;
  data.beta0 =
      sparse_uniform_beta0(cfg.p, derive_seed(cfg.master_seed, 1, r));
  const GroundTruth truth =
      make_truth(data.beta0, cfg.sigma0_sq,
                 mixed_feature_laws(cfg.p, derive_seed(cfg.master_seed, 2, r)));
  data.sites.reserve(static_cast<std::size_t>(M));
  for (int m = 1; m <= M; ++m)
    data.sites.push_back(generate_site_data(
        truth, n, derive_seed(cfg.master_seed, 3, r, m), m));
  return data;
}

std::vector<int> register_remotes(InProcessTransport& transport,
                                  const ExperimentConfig& cfg,
                                  const ReplicateData& data, int r) {
  std::vector<int> remote_ids;
  for (std::size_t m = 2; m <= data.sites.size(); ++m) {
    const int id = static_cast<int>(m);
    transport.register_site(
        id, make_site_responder(data.sites[m - 1],
                                derive_seed(cfg.master_seed, 4, r, m)));
    remote_ids.push_back(id);
  }
  return remote_ids;
}

ResultRow run_one(const ExperimentConfig& cfg, const ReplicateData& data,
                  const std::string& method, int K, int n, int M, int r) {
  ResultRow row;
  row.method = method;
  row.p = cfg.p;
  row.n = n;
  row.M = M;
  row.K = K;
  row.replicate = r;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    InProcessTransport transport;
    MethodContext ctx;
    ctx.central = &data.sites.front();
    ctx.transport = &transport;
    ctx.remote_ids = register_remotes(transport, cfg, data, r);
    ctx.K = K;
    ctx.psi = cfg.psi;
    ctx.tests = cfg.tests;
    const MethodOutput out = run_method(method, ctx);
    row.l2_error = (out.beta - data.beta0).norm();
    row.comm_rounds = out.trace.rounds;
    if (cfg.tests && !out.tests.empty()) {
      const int s = beta0_support_size(cfg.p);
      int support_rejects = 0;
      int null_rejects = 0;
      for (const WaldResult& t : out.tests) {
        if (t.j < s)
          support_rejects += t.reject ? 1 : 0;
        else
          null_rejects += t.reject ? 1 : 0;
      }
      row.power = static_cast<double>(support_rejects) / s;
      if (cfg.p > s)
        row.specificity =
            1.0 - static_cast<double>(null_rejects) / (cfg.p - s);
    }
    if (!out.intervals.empty()) {
      int covered = 0;
      for (int j = 0; j < cfg.p; ++j) {
        const auto& [lo, hi] = out.intervals[static_cast<std::size_t>(j)];
        if (lo <= data.beta0[j] && data.beta0[j] <= hi) ++covered;
      }
      row.coverage = static_cast<double>(covered) / cfg.p;
    }
  } catch (const std::exception&) {
    row.failed = true;
  }
  row.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  return row;
}

}  // namespace

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  std::vector<ResultRow> rows;
  for (const GridPoint& gp : config_grid(cfg)) {
    for (int r = 0; r < cfg.replicates; ++r) {
      const ReplicateData data = make_replicate(cfg, gp.n, gp.M, r);
      for (const std::string& method : cfg.methods) {
        if (method == "cedar") {
          for (int K : cfg.K_list)
            rows.push_back(run_one(cfg, data, method, K, gp.n, gp.M, r));
        } else {
          rows.push_back(run_one(cfg, data, method, 0, gp.n, gp.M, r));
        }
      }
    }
  }
  return rows;
}

// --- aggregation ------------------------------------------------------------------

namespace {

using GroupKey = std::tuple<int, int, int, std::string, int>;  // p,n,M,method,K

struct GroupAgg {
  int ok = 0;
  int failures = 0;
  double l2_sum = 0.0;
  double l2_sumsq = 0.0;
  double power_sum = 0.0;
  int power_count = 0;
  double spec_sum = 0.0;
  int spec_count = 0;
  double cover_sum = 0.0;
  int cover_count = 0;
  double rounds_sum = 0.0;
};

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  std::map<GroupKey, GroupAgg> groups;
  for (const ResultRow& row : rows) {
    GroupAgg& g = groups[{row.p, row.n, row.M, row.method, row.K}];
    if (row.failed) {
      ++g.failures;
      continue;
    }
    ++g.ok;
    g.l2_sum += row.l2_error;
    g.l2_sumsq += row.l2_error * row.l2_error;
    if (row.power) {
      g.power_sum += *row.power;
      ++g.power_count;
    }
    if (row.specificity) {
      g.spec_sum += *row.specificity;
      ++g.spec_count;
    }
    if (row.coverage) {
      g.cover_sum += *row.coverage;
      ++g.cover_count;
    }
    g.rounds_sum += row.comm_rounds;
  }

  std::vector<SummaryRow> out;
  for (const auto& [key, g] : groups) {
    SummaryRow s;
    std::tie(s.p, s.n, s.M, s.method, s.K) = key;
    s.replicates = g.ok;
    s.failures = g.failures;
    if (g.ok > 0) {
      s.mean_l2 = g.l2_sum / g.ok;
      if (g.ok > 1) {
        const double var =
            std::max(0.0, (g.l2_sumsq - g.ok * s.mean_l2 * s.mean_l2) /
                              (g.ok - 1));
        s.se_l2 = std::sqrt(var / g.ok);
      }
      s.mean_rounds = g.rounds_sum / g.ok;
    }
    if (g.power_count > 0) s.power = g.power_sum / g.power_count;
    if (g.spec_count > 0) s.specificity = g.spec_sum / g.spec_count;
    if (g.cover_count > 0) s.coverage = g.cover_sum / g.cover_count;
    out.push_back(std::move(s));
  }

  // Flag csl1 rows whose error dwarfs opt's on the same grid point, so plots
  // skip them while the raw rows stay available.
  std::map<std::tuple<int, int, int>, double> opt_mean;
  for (const SummaryRow& s : out)
    if (s.method == "opt" && s.replicates > 0)
      opt_mean[{s.p, s.n, s.M}] = s.mean_l2;
  for (SummaryRow& s : out) {
    if (s.method != "csl1" || s.replicates == 0) continue;
    const auto it = opt_mean.find({s.p, s.n, s.M});
    if (it != opt_mean.end() && s.mean_l2 > 10.0 * it->second)
      s.plot_excluded = true;
  }
  return out;
}

std::vector<SummaryRow> run_power_study(const ExperimentConfig& cfg,
                                        std::vector<ResultRow>* raw) {
  require(cfg.tests.has_value(),
          "power study: config must include the tests block");
  std::vector<ResultRow> rows = run_experiment(cfg);
  std::vector<SummaryRow> summary = summarize(rows);
  if (raw) *raw = std::move(rows);
  return summary;
}

// --- variable-selection (ROC) study ------------------------------------------------

namespace {

struct RocAcc {
  std::string method;
  int K = 0;
  std::vector<double> levels;  // descending
  std::vector<double> tpr_sum;
  std::vector<double> fpr_sum;
  int count = 0;
};

std::vector<double> descending_levels(std::vector<double> levels) {
  std::sort(levels.begin(), levels.end(), std::greater<double>());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  return levels;
}

void add_selection(RocAcc& acc, std::size_t index, const VectorXd& beta,
                   const VectorXd& beta0) {
  int tp = 0, fp = 0, support = 0;
  for (Eigen::Index j = 0; j < beta0.size(); ++j) {
    const bool truly = beta0[j] != 0.0;
    const bool selected = beta[j] != 0.0;
    support += truly ? 1 : 0;
    if (selected && truly) ++tp;
    if (selected && !truly) ++fp;
  }
  const int nulls = static_cast<int>(beta0.size()) - support;
  acc.tpr_sum[index] += support > 0 ? static_cast<double>(tp) / support : 0.0;
  acc.fpr_sum[index] += nulls > 0 ? static_cast<double>(fp) / nulls : 0.0;
}

// Lasso-path selections for the pooled and surrogate objectives
// 1/2 b'Qb - r'b + lambda ||b||_1, swept descending with warm starts.
std::vector<VectorXd> quadratic_path(const MatrixXd& Q, const VectorXd& r,
                                     const std::vector<double>& levels) {
  const double lambda_max = r.lpNorm<Eigen::Infinity>();
  VectorXd warm = spd_solve(Q, r, "selection-path Gram");
  std::vector<VectorXd> out;
  out.reserve(levels.size());
  for (double rel : levels) {
    VectorXd beta;
    if (rel == 0.0)
      beta = spd_solve(Q, r, "selection-path Gram");
    else
      beta = lasso_quadratic(Q, r, rel * lambda_max, warm);
    out.push_back(beta);
    warm = std::move(beta);
  }
  return out;
}

}  // namespace

RocStudy run_roc_study(const ExperimentConfig& cfg) {
  validate_config(cfg);
  require(cfg.sparse.has_value(),
          "roc study: config must include the sparse block");
  const std::vector<GridPoint> grid = config_grid(cfg);
  require(grid.size() == 1,
          "roc study: config must expand to a single (n, M) grid point, got ",
          grid.size());
  const int n = grid.front().n;
  const int M = grid.front().M;

  const std::vector<double> lambda_levels =
      descending_levels(cfg.sparse->lambda_grid);
  const std::vector<double> threshold_levels =
      descending_levels(cfg.sparse->threshold_grid);

  std::vector<RocAcc> accs;
  for (const std::string& method : cfg.methods) {
    if (method == "avgm") {
      require(!threshold_levels.empty(),
              "roc study: avgm requires sparse.threshold_grid");
      RocAcc acc;
      acc.method = method;
      acc.levels = threshold_levels;
      acc.tpr_sum.assign(threshold_levels.size(), 0.0);
      acc.fpr_sum.assign(threshold_levels.size(), 0.0);
      accs.push_back(std::move(acc));
      continue;
    }
    require(!lambda_levels.empty(), "roc study: method \"", method,
            "\" requires sparse.lambda_grid");
    const std::vector<int> Ks =
        method == "cedar" ? cfg.K_list : std::vector<int>{0};
    for (int K : Ks) {
      RocAcc acc;
      acc.method = method;
      acc.K = K;
      acc.levels = lambda_levels;
      acc.tpr_sum.assign(lambda_levels.size(), 0.0);
      acc.fpr_sum.assign(lambda_levels.size(), 0.0);
      accs.push_back(std::move(acc));
    }
  }

  for (int r = 0; r < cfg.replicates; ++r) {
    const ReplicateData data = make_replicate(cfg, n, M, r);
    const LocalFit central = local_mle(data.sites.front());
    const SufficientStats central_stats = sufficient_stats(data.sites.front());

    for (RocAcc& acc : accs) {
      try {
        InProcessTransport transport;
        const std::vector<int> remote_ids =
            register_remotes(transport, cfg, data, r);
        CommTrace trace;
        auto exchange = [&](const TaskRequest& request) {
          return remote_ids.empty()
                     ? std::vector<SitePayload>{}
                     : run_round(transport, request, remote_ids, trace);
        };

        if (acc.method == "avgm") {
          TaskRequest request;
          request.task = Task::MleOnly;
          const std::vector<SitePayload> payloads = exchange(request);
          std::vector<VectorXd> betas{central.beta_hat};
          for (const SitePayload& pl : payloads) betas.push_back(pl.beta_hat);
          const VectorXd beta_A = avgm(betas);
          const double scale = beta_A.cwiseAbs().maxCoeff();
          for (std::size_t i = 0; i < acc.levels.size(); ++i) {
            VectorXd selected = VectorXd::Zero(beta_A.size());
            const double threshold = acc.levels[i] * scale;
            for (Eigen::Index j = 0; j < beta_A.size(); ++j)
              if (std::abs(beta_A[j]) > threshold) selected[j] = beta_A[j];
            add_selection(acc, i, selected, data.beta0);
          }
        } else if (acc.method == "cedar") {
          TaskRequest request;
          if (acc.K >= 1) {
            request.task = Task::MlePlusPosterior;
            request.K = acc.K;
            request.psi = cfg.psi;
          } else {
            request.task = Task::MleOnly;
          }
          const std::vector<SitePayload> payloads = exchange(request);
          CedarOptions opts;
          const CedarFit dense = cedar_fit(central, payloads, opts);
          // beta = 0 solves the penalized coefficient update exactly when
          // || sum_m S_hat_m beta_hat_m ||_inf <= lambda sigma^2.
          VectorXd score = dense.S_hat.front() * central.beta_hat;
          for (std::size_t m = 0; m < payloads.size(); ++m)
            score += dense.S_hat[m + 1] * payloads[m].beta_hat;
          const double lambda_max =
              score.lpNorm<Eigen::Infinity>() / dense.sigma_sq;
          opts.init_beta = dense.beta;
          opts.init_sigma_sq = dense.sigma_sq;
          opts.init_Sigma = dense.Sigma;
          for (std::size_t i = 0; i < acc.levels.size(); ++i) {
            opts.penalty_lambda = acc.levels[i] * lambda_max;
            const CedarFit fit = cedar_fit(central, payloads, opts);
            add_selection(acc, i, fit.beta, data.beta0);
            opts.init_beta = fit.beta;
            opts.init_sigma_sq = fit.sigma_sq;
            opts.init_Sigma = fit.Sigma;
          }
        } else if (acc.method == "opt") {
          TaskRequest request;
          request.task = Task::SufficientStatsTask;
          const std::vector<SitePayload> payloads = exchange(request);
          MatrixXd Q = central_stats.S;
          VectorXd rhs = central_stats.Xty;
          for (const SitePayload& pl : payloads) {
            require(pl.stats.has_value(), "site ", pl.site_id,
                    " returned no sufficient statistics");
            Q += pl.stats->S;
            rhs += pl.stats->Xty;
          }
          const std::vector<VectorXd> path =
              quadratic_path(Q, rhs, acc.levels);
          for (std::size_t i = 0; i < path.size(); ++i)
            add_selection(acc, i, path[i], data.beta0);
        } else {  // csl1 / csla
          VectorXd beta_bar = central.beta_hat;
          if (acc.method == "csla") {
            TaskRequest mle_request;
            mle_request.task = Task::MleOnly;
            const std::vector<SitePayload> payloads = exchange(mle_request);
            std::vector<VectorXd> betas{central.beta_hat};
            for (const SitePayload& pl : payloads)
              betas.push_back(pl.beta_hat);
            beta_bar = avgm(betas);
          }
          TaskRequest grad_request;
          grad_request.task = Task::CslGradient;
          grad_request.beta_bar = beta_bar;
          const std::vector<SitePayload> payloads = exchange(grad_request);
          const VectorXd g1 = csl_gradient(data.sites.front(), beta_bar);
          VectorXd grad_mean = g1;
          for (const SitePayload& pl : payloads) {
            require(pl.gradient.has_value(), "site ", pl.site_id,
                    " returned no gradient");
            grad_mean += *pl.gradient;
          }
          grad_mean /= static_cast<double>(payloads.size() + 1);
          const double n1 = static_cast<double>(central.n);
          // Surrogate objective: 1/2 b'(S1/n1)b - r'b with the global
          // gradient correction folded into r; lambda = 0 recovers the
          // closed-form surrogate minimizer.
          const MatrixXd Q = central.S / n1;
          const VectorXd rhs =
              data.sites.front().X.transpose() * data.sites.front().y / n1 +
              g1 - grad_mean;
          const std::vector<VectorXd> path =
              quadratic_path(Q, rhs, acc.levels);
          for (std::size_t i = 0; i < path.size(); ++i)
            add_selection(acc, i, path[i], data.beta0);
        }
        ++acc.count;
      } catch (const std::exception&) {
        // Method failure on this replicate: contribute nothing, keep going.
      }
    }
  }

  RocStudy study;
  for (const RocAcc& acc : accs) {
    std::vector<std::pair<double, double>> curve{{0.0, 0.0}, {1.0, 1.0}};
    for (std::size_t i = 0; i < acc.levels.size(); ++i) {
      RocPoint point;
      point.method = acc.method;
      point.K = acc.K;
      point.grid_index = static_cast<int>(i);
      point.level = acc.levels[i];
      if (acc.count > 0) {
        point.tpr = acc.tpr_sum[i] / acc.count;
        point.fpr = acc.fpr_sum[i] / acc.count;
      }
      curve.emplace_back(point.fpr, point.tpr);
      study.points.push_back(std::move(point));
    }
    std::sort(curve.begin(), curve.end());
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i)
      area += (curve[i].first - curve[i - 1].first) *
              (curve[i].second + curve[i - 1].second) / 2.0;
    study.areas.push_back({acc.method, acc.K, area});
  }
  return study;
}

// --- privacy table -------------------------------------------------------------------

std::vector<Table1Cell> run_table1(const Table1Grid& grid) {
  require(!grid.p_list.empty() && !grid.K_list.empty() && !grid.c_list.empty(),
          "privacy table: p, K, and c lists must be nonempty");
  require(grid.psi > 0.0, "privacy table: psi must be positive");
  require(grid.reps >= 1, "privacy table: reps must be >= 1");
  require(grid.redraws >= 1, "privacy table: redraws must be >= 1");
  std::vector<Table1Cell> cells;
  std::uint64_t index = 0;
  for (int p : grid.p_list) {
    require(p >= 1, "privacy table: p must be >= 1, got ", p);
    for (int K : grid.K_list) {
      require(K >= 0, "privacy table: K must be >= 0, got ", K);
      for (double c : grid.c_list) {
        require(c > 0.0, "privacy table: c must be positive, got ", c);
        Table1Cell cell;
        cell.p = p;
        cell.K = K;
        cell.c = c;
        cell.n = std::llround(p / c);
        PrivacyScenario sc;
        sc.n = static_cast<int>(cell.n);
        sc.p = p;
        sc.K = K;
        sc.psi = grid.psi;
        sc.c = c;
        sc.delta = -1.0;  // default 1/n
        sc.reps = grid.reps;
        sc.redraws = grid.redraws;
        sc.seed = derive_seed(grid.seed, 0x7461626cULL, index++);
        cell.eps_mc = mc_min_epsilon(sc);
        cells.push_back(cell);
      }
    }
  }
  return cells;
}

std::string table1_csv(const std::vector<Table1Cell>& cells) {
  std::string out = "p,K,c,n,eps_mc\n";
  for (const Table1Cell& cell : cells) {
    out += std::to_string(cell.p);
    out += ',';
    out += std::to_string(cell.K);
    out += ',';
    out += format_double(cell.c);
    out += ',';
    out += std::to_string(cell.n);
    out += ',';
    out += format_double(cell.eps_mc);
    out += '\n';
  }
  return out;
}

// --- multi-CSV analysis -----------------------------------------------------------------

std::string analyze_csv(const std::vector<fs::path>& files,
                        const AnalyzeOptions& options) {
  require(!files.empty(), "analyze: at least one site CSV is required");
  require(valid_methods().count(options.method) != 0,
          "analyze: unknown method \"", options.method,
          "\" (use avgm | opt | csl1 | csla | cedar)");
  require(options.K >= 0, "analyze: K must be nonnegative, got ", options.K);
  require(options.psi > 0.0, "analyze: psi must be positive");
  require(options.alpha > 0.0 && options.alpha < 1.0,
          "analyze: alpha must lie in (0, 1), got ", options.alpha);

  std::vector<SiteData> sites;
  sites.reserve(files.size());
  for (std::size_t i = 0; i < files.size(); ++i)
    sites.push_back(read_site_csv(files[i], static_cast<int>(i) + 1));
  const auto p = sites.front().X.cols();
  for (std::size_t i = 1; i < sites.size(); ++i)
    require(sites[i].X.cols() == p, "analyze: ", files[i].string(), " has ",
            sites[i].X.cols(), " feature columns but ", files.front().string(),
            " has ", p);

  fs::path root = options.drop_root;
  if (root.empty()) root = fs::temp_directory_path() / "cedar-analyze";
  FileDropTransport transport(root);
  MethodContext ctx;
  ctx.central = &sites.front();
  ctx.transport = &transport;
  for (std::size_t i = 1; i < sites.size(); ++i) {
    transport.register_site(
        sites[i].site_id,
        make_site_responder(sites[i], derive_seed(options.seed, 4, 0,
                                                  sites[i].site_id)));
    ctx.remote_ids.push_back(sites[i].site_id);
  }
  ctx.K = options.K;
  ctx.psi = options.psi;
  ctx.tests = TestConfig{options.alpha, options.alternative};
  ctx.em = options.em;
  const MethodOutput out = run_method(options.method, ctx);

  json doc;
  doc["method"] = out.method;
  doc["sites"] = files.size();
  doc["p"] = p;
  doc["N"] = out.N;
  doc["beta"] = std::vector<double>(out.beta.data(),
                                    out.beta.data() + out.beta.size());
  if (out.fit) {
    json fit;
    fit["sigma_sq"] = out.fit->sigma_sq;
    fit["iterations"] = out.fit->iterations;
    fit["converged"] = out.fit->converged;
    fit["loglik"] = out.fit->final_loglik;
    json Sigma = json::array();
    for (Eigen::Index i = 0; i < out.fit->Sigma.rows(); ++i)
      Sigma.push_back(std::vector<double>(
          out.fit->Sigma.row(i).begin(), out.fit->Sigma.row(i).end()));
    fit["Sigma"] = std::move(Sigma);
    doc["fit"] = std::move(fit);
  }
  json tests = json::array();
  for (const WaldResult& t : out.tests) {
    tests.push_back({{"j", t.j},
                     {"null_value", t.null_value},
                     {"statistic", t.statistic},
                     {"p_value", t.p_value},
                     {"reject", t.reject}});
  }
  doc["tests"] = std::move(tests);
  if (!out.intervals.empty()) {
    json intervals = json::array();
    for (std::size_t j = 0; j < out.intervals.size(); ++j)
      intervals.push_back({{"j", j},
                           {"lower", out.intervals[j].first},
                           {"upper", out.intervals[j].second}});
    doc["intervals"] = std::move(intervals);
  }
  json comm;
  comm["rounds"] = out.trace.rounds;
  comm["bytes_per_round"] = out.trace.bytes_per_round;
  json per_site = json::object();
  for (const auto& [site, bytes] : out.trace.per_site_bytes)
    per_site[std::to_string(site)] = bytes;
  comm["per_site_bytes"] = std::move(per_site);
  comm["drop_root"] = root.string();
  doc["communication"] = std::move(comm);
  return doc.dump(2) + "\n";
}

// --- serialization --------------------------------------------------------------------

namespace {

constexpr const char* kResultsHeader =
    "method,p,n,M,K,replicate,l2_error,power,specificity,coverage,"
    "comm_rounds,failed";

std::vector<const ResultRow*> sorted_rows(const std::vector<ResultRow>& rows) {
  std::vector<const ResultRow*> ptrs;
  ptrs.reserve(rows.size());
  for (const ResultRow& row : rows) ptrs.push_back(&row);
  std::sort(ptrs.begin(), ptrs.end(),
            [](const ResultRow* a, const ResultRow* b) {
              return std::tie(a->p, a->n, a->M, a->method, a->K,
                              a->replicate) <
                     std::tie(b->p, b->n, b->M, b->method, b->K,
                              b->replicate);
            });
  return ptrs;
}

std::string opt_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string{};
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

int parse_int_field(const std::string& s, std::size_t line_no,
                    const char* name) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    require(used == s.size(), "x");
    return v;
  } catch (const std::exception&) {
    fail("results CSV: row ", line_no, ": bad integer for ", name, ": \"", s,
         "\"");
  }
}

double parse_double_field(const std::string& s, std::size_t line_no,
                          const char* name) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    require(used == s.size(), "x");
    return v;
  } catch (const std::exception&) {
    fail("results CSV: row ", line_no, ": bad number for ", name, ": \"", s,
         "\"");
  }
}

}  // namespace

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out = kResultsHeader;
  out += '\n';
  for (const ResultRow* row : sorted_rows(rows)) {
    out += row->method;
    out += ',' + std::to_string(row->p);
    out += ',' + std::to_string(row->n);
    out += ',' + std::to_string(row->M);
    out += ',' + std::to_string(row->K);
    out += ',' + std::to_string(row->replicate);
    out += ',';
    if (!row->failed) out += format_double(row->l2_error);
    out += ',' + (row->failed ? std::string{} : opt_field(row->power));
    out += ',' + (row->failed ? std::string{} : opt_field(row->specificity));
    out += ',' + (row->failed ? std::string{} : opt_field(row->coverage));
    out += ',' + std::to_string(row->comm_rounds);
    out += ',' + std::string(row->failed ? "1" : "0");
    out += '\n';
  }
  return out;
}

std::string timings_csv(const std::vector<ResultRow>& rows) {
  std::string out = "method,p,n,M,K,replicate,wall_ms\n";
  char buf[64];
  for (const ResultRow* row : sorted_rows(rows)) {
    out += row->method;
    out += ',' + std::to_string(row->p);
    out += ',' + std::to_string(row->n);
    out += ',' + std::to_string(row->M);
    out += ',' + std::to_string(row->K);
    out += ',' + std::to_string(row->replicate);
    std::snprintf(buf, sizeof buf, ",%.3f", row->wall_ms);
    out += buf;
    out += '\n';
  }
  return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out =
      "method,p,n,M,K,replicates,failures,mean_l2,se_l2,power,specificity,"
      "coverage,mean_rounds,plot_excluded\n";
  for (const SummaryRow& s : rows) {
    out += s.method;
    out += ',' + std::to_string(s.p);
    out += ',' + std::to_string(s.n);
    out += ',' + std::to_string(s.M);
    out += ',' + std::to_string(s.K);
    out += ',' + std::to_string(s.replicates);
    out += ',' + std::to_string(s.failures);
    out += ',' + format_double(s.mean_l2);
    out += ',' + format_double(s.se_l2);
    out += ',' + opt_field(s.power);
    out += ',' + opt_field(s.specificity);
    out += ',' + opt_field(s.coverage);
    out += ',' + format_double(s.mean_rounds);
    out += ',' + std::string(s.plot_excluded ? "1" : "0");
    out += '\n';
  }
  return out;
}

std::string roc_points_csv(const std::vector<RocPoint>& points) {
  std::string out = "method,K,level,fpr,tpr\n";
  for (const RocPoint& pt : points) {
    out += pt.method;
    out += ',' + std::to_string(pt.K);
    out += ',' + format_double(pt.level);
    out += ',' + format_double(pt.fpr);
    out += ',' + format_double(pt.tpr);
    out += '\n';
  }
  return out;
}

std::string roc_areas_csv(const std::vector<RocArea>& areas) {
  std::string out = "method,K,area\n";
  for (const RocArea& a : areas) {
    out += a.method;
    out += ',' + std::to_string(a.K);
    out += ',' + format_double(a.area);
    out += '\n';
  }
  return out;
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "results CSV: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kResultsHeader,
          "results CSV: unexpected header \"", line, "\"");
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      require(in.peek() == std::char_traits<char>::eof(),
              "results CSV: row ", line_no, ": blank line before end of file");
      break;
    }
    const std::vector<std::string> f = split_fields(line);
    require(f.size() == 12, "results CSV: row ", line_no,
            ": expected 12 fields, got ", f.size());
    ResultRow row;
    require(!f[0].empty(), "results CSV: row ", line_no, ": empty method");
    row.method = f[0];
    row.p = parse_int_field(f[1], line_no, "p");
    row.n = parse_int_field(f[2], line_no, "n");
    row.M = parse_int_field(f[3], line_no, "M");
    row.K = parse_int_field(f[4], line_no, "K");
    row.replicate = parse_int_field(f[5], line_no, "replicate");
    if (!f[6].empty())
      row.l2_error = parse_double_field(f[6], line_no, "l2_error");
    if (!f[7].empty())
      row.power = parse_double_field(f[7], line_no, "power");
    if (!f[8].empty())
      row.specificity = parse_double_field(f[8], line_no, "specificity");
    if (!f[9].empty())
      row.coverage = parse_double_field(f[9], line_no, "coverage");
    row.comm_rounds = parse_int_field(f[10], line_no, "comm_rounds");
    const int failed = parse_int_field(f[11], line_no, "failed");
    require(failed == 0 || failed == 1, "results CSV: row ", line_no,
            ": failed must be 0 or 1, got ", failed);
    row.failed = failed == 1;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_gnuplot_files(const fs::path& dir,
                         const std::vector<SummaryRow>& summary) {
  fs::create_directories(dir);
  // Curve label per (method, K); x axis follows the varying grid dimension.
  std::set<int> n_values, M_values;
  for (const SummaryRow& s : summary) {
    n_values.insert(s.n);
    M_values.insert(s.M);
  }
  const bool x_is_M = M_values.size() > 1 || n_values.size() <= 1;

  std::map<std::string, std::vector<const SummaryRow*>> curves;
  for (const SummaryRow& s : summary) {
    if (s.plot_excluded || s.replicates == 0) continue;
    std::string label = s.method;
    if (s.method == "cedar") label += std::to_string(s.K);
    curves[label].push_back(&s);
  }

  auto num = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string("nan");
  };
  std::string script =
      "set datafile missing 'nan'\n"
      "set key outside\n";
  script += std::string("set xlabel '") +
            (x_is_M ? "sites (M)" : "per-site n") + "'\n";
  script += "set ylabel 'mean L2 error'\n";
  script += "set style data yerrorlines\n";
  std::string plot = "plot";
  bool first = true;
  for (auto& [label, rows] : curves) {
    std::sort(rows.begin(), rows.end(),
              [&](const SummaryRow* a, const SummaryRow* b) {
                return (x_is_M ? a->M : a->n) < (x_is_M ? b->M : b->n);
              });
    std::string data = "# x mean_l2 se_l2 power specificity coverage\n";
    for (const SummaryRow* s : rows) {
      data += std::to_string(x_is_M ? s->M : s->n);
      data += ' ' + format_double(s->mean_l2);
      data += ' ' + format_double(s->se_l2);
      data += ' ' + num(s->power);
      data += ' ' + num(s->specificity);
      data += ' ' + num(s->coverage);
      data += '\n';
    }
    const std::string file = "curve_" + label + ".dat";
    write_text_file(dir / file, data);
    plot += first ? " " : ", ";
    plot += "'" + file + "' using 1:2:3 title '" + label + "'";
    first = false;
  }
  if (first) plot += " 0 title 'no data'";
  script += plot + "\n";
  write_text_file(dir / "plot.gp", script);
}

}  // namespace cedar
