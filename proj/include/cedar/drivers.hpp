#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cedar/protocol.hpp"
#include "cedar/types.hpp"

namespace cedar {

// Site-side handler: fit the local model and attach exactly the extras the
// request asks for. `seed` feeds the posterior draws (the only stochastic
// task); everything else is deterministic in the data.
SitePayload site_respond(const SiteData& data, const TaskRequest& request,
                         std::uint64_t seed);

// Responder closure over owned data, emitting encoded payloads.
SiteResponder make_site_responder(SiteData data, std::uint64_t seed);

// One method executed end to end through the protocol layer.
struct MethodOutput {
  std::string method;
  VectorXd beta;
  CommTrace trace;
  long long N = 0;
  std::optional<CedarFit> fit;                       // cedar only
  std::vector<WaldResult> tests;                     // when tests requested
  std::vector<std::pair<double, double>> intervals;  // cedar CIs, same alpha
};

// Everything a method run needs. The central site's raw data stays local;
// remote sites are reachable only through the transport. With no remote
// sites the exchange is skipped entirely (trace.rounds stays 0) and every
// method degrades to its single-site form.
struct MethodContext {
  const SiteData* central = nullptr;
  Transport* transport = nullptr;
  std::vector<int> remote_ids;
  int K = 0;
  double psi = 100.0;
  std::optional<TestConfig> tests;  // all-coefficient tests of beta_j = 0
  CedarOptions em;
};

MethodOutput run_avgm(const MethodContext& ctx);
MethodOutput run_opt(const MethodContext& ctx);
MethodOutput run_csl(const MethodContext& ctx, bool avgm_init);
MethodOutput run_cedar(const MethodContext& ctx);

// Dispatch by harness method name: avgm | opt | csl1 | csla | cedar.
MethodOutput run_method(const std::string& name, const MethodContext& ctx);

}  // namespace cedar
