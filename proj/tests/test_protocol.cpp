#include <doctest.h>

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cedar/baselines.hpp"
#include "cedar/drivers.hpp"
#include "cedar/em.hpp"
#include "cedar/model.hpp"
#include "cedar/posterior.hpp"
#include "cedar/protocol.hpp"
#include "test_support.hpp"

using namespace cedar;
using test_support::gaussian_site;
using test_support::mentions;
using test_support::payload_from;
using test_support::thrown_message;

namespace {

// Exact (bit-level) payload comparison. Gram blocks travel as a packed upper
// triangle, so the decoded matrix is the symmetrized upper part of the input.
void expect_payload_equal(const SitePayload& a, const SitePayload& b) {
  CHECK(a.schema_version == b.schema_version);
  CHECK(a.site_id == b.site_id);
  CHECK(a.n == b.n);
  CHECK(a.p == b.p);
  CHECK(a.sigma_hat_sq == b.sigma_hat_sq);
  REQUIRE(a.beta_hat.size() == b.beta_hat.size());
  for (Eigen::Index j = 0; j < a.beta_hat.size(); ++j)
    CHECK(a.beta_hat(j) == b.beta_hat(j));

  REQUIRE(a.block.has_value() == b.block.has_value());
  if (a.block) {
    CHECK(a.block->form == b.block->form);
    CHECK(a.block->K == b.block->K);
    CHECK(a.block->psi == b.block->psi);
    if (a.block->form == BlockForm::Columns) {
      CHECK((a.block->B - b.block->B).norm() == 0.0);
    } else {
      CHECK((b.block->BBt - b.block->BBt.transpose()).norm() == 0.0);
      for (int i = 0; i < a.p; ++i)
        for (int j = i; j < a.p; ++j)
          CHECK(a.block->BBt(i, j) == b.block->BBt(i, j));
    }
  }
  REQUIRE(a.gradient.has_value() == b.gradient.has_value());
  if (a.gradient) CHECK((*a.gradient - *b.gradient).norm() == 0.0);
  REQUIRE(a.wald.has_value() == b.wald.has_value());
  if (a.wald) {
    REQUIRE(a.wald->size() == b.wald->size());
    for (std::size_t i = 0; i < a.wald->size(); ++i)
      CHECK((*a.wald)[i] == (*b.wald)[i]);
  }
  REQUIRE(a.stats.has_value() == b.stats.has_value());
  if (a.stats) {
    CHECK(a.stats->n == b.stats->n);
    for (int i = 0; i < a.p; ++i)
      for (int j = i; j < a.p; ++j)
        CHECK(a.stats->S(i, j) == b.stats->S(i, j));
    CHECK((a.stats->Xty - b.stats->Xty).norm() == 0.0);
    CHECK(a.stats->yty == b.stats->yty);
  }
}

SitePayload base_payload(int extras_mask) {
  const SiteData data = gaussian_site(25, 3, 601, 4);
  const LocalFit fit = local_mle(data);
  SitePayload pl = payload_from(fit, 0, 100.0, 0);
  if (extras_mask & 1)
    pl.block = build_block(draw_posterior(fit, 2, 50.0, 602), fit);
  if (extras_mask & 2) pl.gradient = csl_gradient(data, VectorXd::Zero(3));
  if (extras_mask & 4) pl.wald = std::vector<double>{1.25, -0.75};
  if (extras_mask & 8) pl.stats = sufficient_stats(data);
  return pl;
}

}  // namespace

TEST_CASE("payload frames round trip bit for bit under every flag set") {
  for (int mask = 0; mask < 16; ++mask) {
    CAPTURE(mask);
    const SitePayload pl = base_payload(mask);
    expect_payload_equal(pl, decode_payload(encode_payload(pl)));
  }
  // gram-form block (K > p) takes the packed-triangle path
  const SiteData data = gaussian_site(30, 3, 603, 2);
  const LocalFit fit = local_mle(data);
  SitePayload pl = payload_from(fit, 7, 80.0, 604);
  REQUIRE(pl.block->form == BlockForm::Gram);
  expect_payload_equal(pl, decode_payload(encode_payload(pl)));
}

TEST_CASE("every strict prefix of a frame is rejected as truncated") {
  const Bytes full = encode_payload(base_payload(15));
  bool all_truncated = true;
  for (std::size_t len = 0; len < full.size(); ++len) {
    const Bytes cut(full.begin(), full.begin() + static_cast<long>(len));
    const std::string msg = thrown_message([&] { decode_payload(cut); });
    if (!mentions(msg, "payload truncated at byte")) {
      CAPTURE(len);
      CAPTURE(msg);
      all_truncated = false;
      break;
    }
  }
  CHECK(all_truncated);
  CHECK(full.size() ==
        24 + 8 + 24 + (13 + 48) + 24 + (4 + 16) + (4 + 48 + 24 + 8));
}

TEST_CASE("corrupted frames name the defect") {
  const SitePayload pl = base_payload(1);  // block flag only, p = 3, K = 2
  const Bytes good = encode_payload(pl);

  Bytes magic = good;
  magic[0] = 'X';
  CHECK(mentions(thrown_message([&] { decode_payload(magic); }),
                 "bad magic bytes"));

  Bytes version = good;
  version[4] = 2;
  CHECK(mentions(thrown_message([&] { decode_payload(version); }),
                 "schema version 2 unsupported"));

  Bytes hugep = good;  // p field lives at offset 16
  hugep[16] = 0x80;
  hugep[17] = 0x84;
  hugep[18] = 0x1e;
  hugep[19] = 0x00;
  CHECK(mentions(thrown_message([&] { decode_payload(hugep); }),
                 "implausible p = 2000000"));

  Bytes flags = good;  // flag word lives at offset 20
  flags[20] |= 0x10;
  CHECK(mentions(thrown_message([&] { decode_payload(flags); }),
                 "unknown flag bits"));

  Bytes nan_sigma = good;  // sigma_hat_sq is the f64 at offset 24
  for (int i = 0; i < 8; ++i) nan_sigma[24 + i] = 0xff;
  CHECK(mentions(thrown_message([&] { decode_payload(nan_sigma); }),
                 "non-finite value in sigma_hat_sq"));

  Bytes form = good;  // block form byte follows the 3 beta doubles
  form[56] = 7;
  CHECK(mentions(thrown_message([&] { decode_payload(form); }),
                 "unknown block form 7"));

  Bytes trailing = good;
  trailing.push_back(0);
  CHECK(mentions(thrown_message([&] { decode_payload(trailing); }),
                 "trailing bytes after decode"));

  SitePayload zero_k = pl;
  zero_k.block->K = 0;
  CHECK(mentions(thrown_message([&] { encode_payload(zero_k); }),
                 "block with K < 1"));
  SitePayload flat_psi = pl;
  flat_psi.block->psi = 0.0;
  CHECK(mentions(thrown_message([&] { encode_payload(flat_psi); }),
                 "block psi <= 0"));
  SitePayload short_beta = pl;
  short_beta.beta_hat = VectorXd::Zero(2);
  CHECK(mentions(thrown_message([&] { encode_payload(short_beta); }),
                 "beta_hat has length 2, header says p = 3"));
}

TEST_CASE("the JSON mirror reproduces the binary payload bit for bit") {
  for (int mask : {0, 1, 15}) {
    CAPTURE(mask);
    const SitePayload pl = base_payload(mask);
    expect_payload_equal(pl, payload_from_json(payload_to_json(pl)));
  }
  // gram form in JSON
  const LocalFit fit = local_mle(gaussian_site(30, 3, 605));
  const SitePayload gram = payload_from(fit, 9, 60.0, 606);
  REQUIRE(gram.block->form == BlockForm::Gram);
  expect_payload_equal(gram, payload_from_json(payload_to_json(gram)));

  CHECK(mentions(thrown_message([] { payload_from_json("{nope"); }),
                 "parse error"));
  CHECK(mentions(thrown_message([] { payload_from_json(R"({"n": 3})"); }),
                 "missing or mistyped field"));
}

TEST_CASE("task requests round trip through JSON and are validated") {
  TaskRequest csl;
  csl.task = Task::CslGradient;
  csl.beta_bar = (VectorXd(2) << 0.25, -1.5).finished();
  const TaskRequest csl_back = request_from_json(request_to_json(csl));
  CHECK(csl_back.task == Task::CslGradient);
  CHECK((*csl_back.beta_bar - *csl.beta_bar).norm() == 0.0);

  TaskRequest wald;
  wald.task = Task::WaldStats;
  wald.hypotheses = {{0, 0.0}, {2, 1.5}};
  wald.alpha = 0.01;
  wald.alternative = Alternative::Greater;
  const TaskRequest wald_back = request_from_json(request_to_json(wald));
  REQUIRE(wald_back.hypotheses.size() == 2);
  CHECK(wald_back.hypotheses[1].j == 2);
  CHECK(wald_back.hypotheses[1].b0 == 1.5);
  CHECK(wald_back.alpha == 0.01);
  CHECK(wald_back.alternative == Alternative::Greater);

  TaskRequest posterior;
  posterior.task = Task::MlePlusPosterior;
  posterior.K = 16;
  posterior.psi = 75.0;
  const TaskRequest post_back = request_from_json(request_to_json(posterior));
  CHECK(post_back.K == 16);
  CHECK(post_back.psi == 75.0);

  TaskRequest bad_k = posterior;
  bad_k.K = 0;
  CHECK(mentions(thrown_message([&] { validate_request(bad_k); }),
                 "requires K >= 1"));
  TaskRequest bad_psi = posterior;
  bad_psi.psi = 0.0;
  CHECK(mentions(thrown_message([&] { validate_request(bad_psi); }),
                 "requires psi > 0"));
  TaskRequest no_center;
  no_center.task = Task::CslGradient;
  CHECK(mentions(thrown_message([&] { validate_request(no_center); }),
                 "requires beta_bar"));
  TaskRequest bad_alpha;
  bad_alpha.alpha = 1.0;
  CHECK(mentions(thrown_message([&] { validate_request(bad_alpha); }),
                 "alpha must lie in (0,1)"));
  CHECK(mentions(thrown_message([] { request_from_json(R"({"task":"bogus"})"); }),
                 "unknown task 'bogus'"));
  CHECK(mentions(thrown_message([] {
                   request_from_json(
                       R"({"task":"wald_stats","hypotheses":[{"j":0,"b0":0.0}],)"
                       R"("alternative":"sideways"})");
                 }),
                 "unknown alternative 'sideways'"));
}

TEST_CASE("the gram form is the smaller frame once draws outnumber features") {
  const int p = 32, K = 64;
  const LocalFit fit = local_mle(gaussian_site(80, p, 607));
  const SitePayload gram = payload_from(fit, K, 100.0, 608);
  REQUIRE(gram.block->form == BlockForm::Gram);
  const std::size_t gram_bytes = encode_payload(gram).size();

  SitePayload columns = gram;
  columns.block->form = BlockForm::Columns;
  columns.block->B = MatrixXd::Zero(p, K);
  const std::size_t column_bytes = encode_payload(columns).size();

  const std::size_t header = 24 + 8 + 8 * p;
  CHECK(gram_bytes == header + 13 + 8 * (p * (p + 1) / 2));
  CHECK(column_bytes == header + 13 + 8 * p * K);
  CHECK(gram_bytes < column_bytes);
}

TEST_CASE("the in-process transport answers rounds and charges the trace") {
  InProcessTransport transport;
  std::vector<SiteData> sites;
  for (int id : {2, 5, 9}) {
    sites.push_back(gaussian_site(20, 2, 610 + id, id));
    transport.register_site(id, make_site_responder(sites.back(), 700 + id));
  }
  CHECK(transport.site_ids() == std::vector<int>{2, 5, 9});
  CHECK(mentions(thrown_message([&] {
                   transport.register_site(5, make_site_responder(sites[0], 1));
                 }),
                 "site 5 registered twice"));

  TaskRequest request;  // plain local-fit round
  CommTrace trace;
  const std::vector<SitePayload> got =
      run_round(transport, request, {2, 5, 9}, trace);
  REQUIRE(got.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    expect_payload_equal(got[i], site_respond(sites[i], request, 0));
  }
  CHECK(trace.rounds == 1);
  REQUIRE(trace.bytes_per_round.size() == 1);
  CHECK(trace.bytes_per_round[0] == 3 * (24 + 8 + 16));
  CHECK(trace.per_site_bytes.at(2) == 24 + 8 + 16);

  CHECK(mentions(
      thrown_message([&] { run_round(transport, request, {}, trace); }),
      "run_round: empty site list"));
  CHECK(mentions(
      thrown_message([&] { run_round(transport, request, {2, 5, 9, 11}, trace); }),
      "incomplete round: no response from site(s) 11"));

  InProcessTransport liars;
  liars.register_site(7, [&](const TaskRequest& r) {
    return encode_payload(site_respond(sites[0], r, 0));  // labeled 2, not 7
  });
  CommTrace ignore;
  CHECK(mentions(
      thrown_message([&] { run_round(liars, request, {7}, ignore); }),
      "site 7 answered with payload labeled 2"));

  InProcessTransport garbled;
  garbled.register_site(4, [](const TaskRequest&) { return Bytes{1, 2, 3, 4}; });
  const std::string msg =
      thrown_message([&] { run_round(garbled, request, {4}, ignore); });
  CHECK(mentions(msg, "site 4: "));
  CHECK(mentions(msg, "bad magic bytes"));
}

TEST_CASE("the file-drop transport reproduces the in-process exchange") {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "cedar-protocol-test";
  fs::remove_all(root);

  InProcessTransport direct;
  FileDropTransport dropped(root);
  for (int id : {1, 2}) {
    const SiteData data = gaussian_site(18, 2, 620 + id, id);
    direct.register_site(id, make_site_responder(data, 800 + id));
    dropped.register_site(id, make_site_responder(data, 800 + id));
  }

  TaskRequest round1;  // plain fits
  TaskRequest round2;  // posterior draws ride along
  round2.task = Task::MlePlusPosterior;
  round2.K = 2;
  round2.psi = 50.0;

  CommTrace trace_direct, trace_dropped;
  for (const TaskRequest& request : {round1, round2}) {
    const auto a = run_round(direct, request, {1, 2}, trace_direct);
    const auto b = run_round(dropped, request, {1, 2}, trace_dropped);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) expect_payload_equal(a[i], b[i]);
  }
  CHECK(trace_direct.rounds == trace_dropped.rounds);
  CHECK(trace_direct.bytes_per_round == trace_dropped.bytes_per_round);
  CHECK(trace_direct.per_site_bytes == trace_dropped.per_site_bytes);

  // on-disk layout: per-round directory, request.json, payloads, marker
  for (int r : {1, 2}) {
    const fs::path dir = root / ("round" + std::to_string(r));
    CHECK(fs::exists(dir / "request.json"));
    CHECK(fs::exists(dir / ("round" + std::to_string(r) + "_site1.payload")));
    CHECK(fs::exists(dir / ("round" + std::to_string(r) + "_site2.payload")));
    CHECK(fs::exists(dir / "complete"));
  }
  std::ifstream req(root / "round2" / "request.json");
  const std::string text((std::istreambuf_iterator<char>(req)),
                         std::istreambuf_iterator<char>());
  CHECK(text == request_to_json(round2));
  fs::remove_all(root);
}

TEST_CASE("driver methods spend the advertised communication rounds") {
  const int p = 2;
  const SiteData central = gaussian_site(40, p, 630, 1);
  std::vector<SiteData> remotes;
  InProcessTransport transport;
  for (int id : {2, 3, 4}) {
    remotes.push_back(gaussian_site(40, p, 630 + id, id));
    transport.register_site(id, make_site_responder(remotes.back(), 900 + id));
  }

  MethodContext ctx;
  ctx.central = &central;
  ctx.transport = &transport;
  ctx.remote_ids = {2, 3, 4};
  ctx.K = 2;
  ctx.psi = 100.0;

  const MethodOutput avgm_out = run_method("avgm", ctx);
  const MethodOutput opt_out = run_method("opt", ctx);
  const MethodOutput csl1_out = run_method("csl1", ctx);
  const MethodOutput csla_out = run_method("csla", ctx);
  const MethodOutput cedar_out = run_method("cedar", ctx);
  CHECK(avgm_out.trace.rounds == 1);
  CHECK(opt_out.trace.rounds == 1);
  CHECK(csl1_out.trace.rounds == 1);
  CHECK(csla_out.trace.rounds == 2);
  CHECK(cedar_out.trace.rounds == 1);
  CHECK(csla_out.trace.bytes_per_round.size() == 2);
  for (const MethodOutput* out :
       {&avgm_out, &opt_out, &csl1_out, &csla_out, &cedar_out}) {
    CHECK(out->N == 160);
    CHECK(out->beta.size() == p);
  }

  // each estimate matches the aggregation rebuilt outside the protocol layer
  std::vector<VectorXd> betas{local_mle(central).beta_hat};
  std::vector<SufficientStats> stats{sufficient_stats(central)};
  for (const SiteData& site : remotes) {
    betas.push_back(local_mle(site).beta_hat);
    stats.push_back(sufficient_stats(site));
  }
  CHECK((avgm_out.beta - avgm(betas)).norm() == 0.0);
  CHECK((opt_out.beta - opt_fit(stats).beta).norm() == 0.0);

  CslInputs direct_csl;
  direct_csl.beta_bar = local_mle(central).beta_hat;
  direct_csl.central = central;
  direct_csl.gradients.push_back(csl_gradient(central, direct_csl.beta_bar));
  for (const SiteData& site : remotes)
    direct_csl.gradients.push_back(csl_gradient(site, direct_csl.beta_bar));
  CHECK((csl1_out.beta - csl_fit(direct_csl)).norm() == 0.0);

  CslInputs anchored = direct_csl;
  anchored.beta_bar = avgm(betas);
  anchored.gradients.clear();
  anchored.gradients.push_back(csl_gradient(central, anchored.beta_bar));
  for (const SiteData& site : remotes)
    anchored.gradients.push_back(csl_gradient(site, anchored.beta_bar));
  CHECK((csla_out.beta - csl_fit(anchored)).norm() == 0.0);

  std::vector<SitePayload> cedar_payloads;
  for (std::size_t i = 0; i < remotes.size(); ++i) {
    cedar_payloads.push_back(payload_from(local_mle(remotes[i]), 2, 100.0,
                                          900 + ctx.remote_ids[i]));
  }
  const CedarFit direct_fit = cedar_fit(local_mle(central), cedar_payloads);
  REQUIRE(cedar_out.fit.has_value());
  CHECK((cedar_out.beta - direct_fit.beta).norm() == 0.0);
  CHECK(cedar_out.fit->sigma_sq == direct_fit.sigma_sq);

  // cedar without draws falls back to a plain fit round
  MethodContext plain = ctx;
  plain.K = 0;
  const MethodOutput cedar0 = run_method("cedar", plain);
  CHECK(cedar0.trace.rounds == 1);
  CHECK(cedar0.fit.has_value());

  CHECK(mentions(thrown_message([&] { run_method("swag", ctx); }),
                 "unknown method 'swag'"));
}

TEST_CASE("test wiring reaches every method and matches direct recomputation") {
  const int p = 2;
  const SiteData central = gaussian_site(50, p, 640, 1);
  const SiteData remote = gaussian_site(50, p, 641, 2);
  InProcessTransport transport;
  transport.register_site(2, make_site_responder(remote, 901));

  MethodContext ctx;
  ctx.central = &central;
  ctx.transport = &transport;
  ctx.remote_ids = {2};
  ctx.K = 2;
  ctx.tests = TestConfig{0.05, Alternative::Greater};

  for (const char* name : {"avgm", "opt", "csl1", "csla", "cedar"}) {
    CAPTURE(name);
    const MethodOutput out = run_method(name, ctx);
    CHECK(out.tests.size() == static_cast<std::size_t>(p));
    for (int j = 0; j < p; ++j) {
      CHECK(out.tests[static_cast<std::size_t>(j)].j == j);
      CHECK(out.tests[static_cast<std::size_t>(j)].null_value == 0.0);
    }
    if (std::string(name) == "cedar") {
      CHECK(out.intervals.size() == static_cast<std::size_t>(p));
    } else {
      CHECK(out.intervals.empty());
    }
  }

  // avgm's combined statistic is the scaled mean of per-site statistics
  const MethodOutput avgm_out = run_avgm(ctx);
  const std::vector<Hypothesis> hyps{{0, 0.0}, {1, 0.0}};
  const std::vector<double> w1 = site_wald_statistics(local_mle(central), hyps);
  const std::vector<double> w2 = site_wald_statistics(local_mle(remote), hyps);
  for (int j = 0; j < p; ++j) {
    const double expect =
        avgm_wald({w1[static_cast<std::size_t>(j)], w2[static_cast<std::size_t>(j)]});
    CHECK(avgm_out.tests[static_cast<std::size_t>(j)].statistic == expect);
  }

  // with no remote sites every method degrades to its single-site form
  MethodContext solo;
  solo.central = &central;
  const LocalFit central_fit = local_mle(central);
  for (const char* name : {"avgm", "opt", "csl1", "csla", "cedar"}) {
    CAPTURE(name);
    const MethodOutput out = run_method(name, solo);
    CHECK(out.trace.rounds == 0);
    CHECK(out.trace.bytes_per_round.empty());
    CHECK(out.N == 50);
    CHECK((out.beta - central_fit.beta_hat).norm() <=
          1e-10 * central_fit.beta_hat.norm());
  }
}
