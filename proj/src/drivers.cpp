#include "cedar/drivers.hpp"

#include <cmath>

#include "cedar/baselines.hpp"
#include "cedar/common.hpp"
#include "cedar/em.hpp"
#include "cedar/inference.hpp"
#include "cedar/linalg.hpp"
#include "cedar/model.hpp"
#include "cedar/posterior.hpp"

namespace cedar {

SitePayload site_respond(const SiteData& data, const TaskRequest& request,
                         std::uint64_t seed) {
  validate_request(request);
  const LocalFit fit = local_mle(data);
  SitePayload payload;
  payload.site_id = fit.site_id;
  payload.n = fit.n;
  payload.p = fit.p;
  payload.beta_hat = fit.beta_hat;
  payload.sigma_hat_sq = fit.sigma_hat_sq;
  switch (request.task) {
    case Task::MleOnly:
      break;
    case Task::MlePlusPosterior: {
      const PosteriorDraws draws =
          draw_posterior(fit, request.K, request.psi, seed);
      payload.block = build_block(draws, fit);
      break;
    }
    case Task::CslGradient:
      payload.gradient = csl_gradient(data, *request.beta_bar);
      break;
    case Task::WaldStats:
      payload.wald = site_wald_statistics(fit, request.hypotheses);
      break;
    case Task::SufficientStatsTask:
      payload.stats = sufficient_stats(data);
      break;
  }
  return payload;
}

SiteResponder make_site_responder(SiteData data, std::uint64_t seed) {
  return [data = std::move(data), seed](const TaskRequest& request) {
    return encode_payload(site_respond(data, request, seed));
  };
}

namespace {

std::vector<Hypothesis> all_null_hypotheses(int p) {
  std::vector<Hypothesis> hyps(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) hyps[static_cast<std::size_t>(j)] = {j, 0.0};
  return hyps;
}

void check_context(const MethodContext& ctx) {
  require(ctx.central != nullptr, "method run: missing central data");
  require(ctx.remote_ids.empty() || ctx.transport != nullptr,
          "method run: remote sites listed but no transport given");
}

std::vector<SitePayload> exchange_if_remote(const MethodContext& ctx,
                                            const TaskRequest& request,
                                            CommTrace& trace) {
  if (ctx.remote_ids.empty()) return {};
  return run_round(*ctx.transport, request, ctx.remote_ids, trace);
}

long long total_n(const LocalFit& central,
                  const std::vector<SitePayload>& payloads) {
  long long N = central.n;
  for (const SitePayload& p : payloads) N += p.n;
  return N;
}

}  // namespace

MethodOutput run_avgm(const MethodContext& ctx) {
  check_context(ctx);
  MethodOutput out;
  out.method = "avgm";
  const LocalFit central = local_mle(*ctx.central);

  TaskRequest request;
  request.task = ctx.tests ? Task::WaldStats : Task::MleOnly;
  if (ctx.tests) {
    request.hypotheses = all_null_hypotheses(central.p);
    request.alpha = ctx.tests->alpha;
    request.alternative = ctx.tests->alternative;
  }
  const std::vector<SitePayload> payloads =
      exchange_if_remote(ctx, request, out.trace);
  out.N = total_n(central, payloads);

  std::vector<VectorXd> betas{central.beta_hat};
  for (const SitePayload& p : payloads) betas.push_back(p.beta_hat);
  out.beta = avgm(betas);

  if (ctx.tests) {
    const std::vector<double> central_walds =
        site_wald_statistics(central, request.hypotheses);
    for (std::size_t h = 0; h < request.hypotheses.size(); ++h) {
      std::vector<double> walds{central_walds[h]};
      for (const SitePayload& p : payloads) {
        require(p.wald && p.wald->size() == request.hypotheses.size(),
                "site ", p.site_id, " returned ",
                p.wald ? p.wald->size() : 0, " Wald statistics, expected ",
                request.hypotheses.size());
        walds.push_back((*p.wald)[h]);
      }
      out.tests.push_back(wald_decision(
          avgm_wald(walds), request.hypotheses[h].j, request.hypotheses[h].b0,
          ctx.tests->alpha, ctx.tests->alternative));
    }
  }
  return out;
}

MethodOutput run_opt(const MethodContext& ctx) {
  check_context(ctx);
  MethodOutput out;
  out.method = "opt";
  TaskRequest request;
  request.task = Task::SufficientStatsTask;
  const std::vector<SitePayload> payloads =
      exchange_if_remote(ctx, request, out.trace);

  std::vector<SufficientStats> stats{sufficient_stats(*ctx.central)};
  for (const SitePayload& p : payloads) {
    require(p.stats.has_value(), "site ", p.site_id,
            " returned no sufficient statistics");
    stats.push_back(*p.stats);
  }
  const OptFit fit = opt_fit(stats);
  out.beta = fit.beta;
  out.N = fit.N;

  if (ctx.tests) {
    for (int j = 0; j < out.beta.size(); ++j) {
      const double se = std::sqrt(fit.var_scale(j, j));
      require(se > 0.0, "pooled fit has zero standard error at coefficient ",
              j);
      out.tests.push_back(wald_decision(out.beta(j) / se, j, 0.0,
                                        ctx.tests->alpha,
                                        ctx.tests->alternative));
    }
  }
  return out;
}

MethodOutput run_csl(const MethodContext& ctx, bool avgm_init) {
  check_context(ctx);
  MethodOutput out;
  out.method = avgm_init ? "csla" : "csl1";
  const LocalFit central = local_mle(*ctx.central);

  VectorXd beta_bar;
  if (avgm_init) {
    TaskRequest mle_request;
    mle_request.task = Task::MleOnly;
    const std::vector<SitePayload> mle_payloads =
        exchange_if_remote(ctx, mle_request, out.trace);
    std::vector<VectorXd> betas{central.beta_hat};
    for (const SitePayload& p : mle_payloads) betas.push_back(p.beta_hat);
    beta_bar = avgm(betas);
  } else {
    beta_bar = central.beta_hat;
  }

  TaskRequest grad_request;
  grad_request.task = Task::CslGradient;
  grad_request.beta_bar = beta_bar;
  const std::vector<SitePayload> payloads =
      exchange_if_remote(ctx, grad_request, out.trace);
  out.N = total_n(central, payloads);

  CslInputs inputs;
  inputs.beta_bar = beta_bar;
  inputs.central = *ctx.central;
  inputs.gradients.push_back(csl_gradient(*ctx.central, beta_bar));
  for (const SitePayload& p : payloads) {
    require(p.gradient.has_value(), "site ", p.site_id,
            " returned no gradient");
    inputs.gradients.push_back(*p.gradient);
  }
  out.beta = csl_fit(inputs);

  if (ctx.tests) {
    // Central-site Fisher information at the final estimate: the test uses
    // Var(beta) ~ n sigma^2 S1^{-1} / N with sigma^2 from central residuals.
    const double n1 = static_cast<double>(central.n);
    const double sigma_sq =
        (ctx.central->y - ctx.central->X * out.beta).squaredNorm() / n1;
    require(sigma_sq > 0.0, "surrogate fit has zero residual variance");
    const MatrixXd S1_inv = spd_inverse(central.S, "central Gram");
    for (int j = 0; j < out.beta.size(); ++j) {
      const double se = std::sqrt(n1 * sigma_sq * S1_inv(j, j) /
                                  static_cast<double>(out.N));
      out.tests.push_back(wald_decision(out.beta(j) / se, j, 0.0,
                                        ctx.tests->alpha,
                                        ctx.tests->alternative));
    }
  }
  return out;
}

MethodOutput run_cedar(const MethodContext& ctx) {
  check_context(ctx);
  MethodOutput out;
  out.method = "cedar";
  TaskRequest request;
  if (ctx.K >= 1) {
    request.task = Task::MlePlusPosterior;
    request.K = ctx.K;
    request.psi = ctx.psi;
  } else {
    request.task = Task::MleOnly;
  }
  const std::vector<SitePayload> payloads =
      exchange_if_remote(ctx, request, out.trace);

  const LocalFit central = local_mle(*ctx.central);
  CedarFit fit = cedar_fit(central, payloads, ctx.em);
  out.beta = fit.beta;
  out.N = fit.N;

  if (ctx.tests) {
    for (int j = 0; j < out.beta.size(); ++j) {
      out.tests.push_back(wald_statistic(fit, j, 0.0, ctx.tests->alpha,
                                         ctx.tests->alternative));
      out.intervals.push_back(confidence_interval(fit, j, ctx.tests->alpha));
    }
  }
  out.fit = std::move(fit);
  return out;
}

MethodOutput run_method(const std::string& name, const MethodContext& ctx) {
  if (name == "avgm") return run_avgm(ctx);
  if (name == "opt") return run_opt(ctx);
  if (name == "csl1") return run_csl(ctx, false);
  if (name == "csla") return run_csl(ctx, true);
  if (name == "cedar") return run_cedar(ctx);
  fail("unknown method '", name, "' (use avgm|opt|csl1|csla|cedar)");
}

}  // namespace cedar
