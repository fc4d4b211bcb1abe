#include "cedar/protocol.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cedar/common.hpp"
#include "cedar/linalg.hpp"
#include "cedar/posterior.hpp"

namespace cedar {

namespace {

constexpr std::uint8_t kMagic[4] = {'C', 'D', 'R', 'P'};
constexpr std::uint32_t kFlagBlock = 1u << 0;
constexpr std::uint32_t kFlagGradient = 1u << 1;
constexpr std::uint32_t kFlagWald = 1u << 2;
constexpr std::uint32_t kFlagStats = 1u << 3;

void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(Bytes& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void require_finite(double v, const char* field, int site_id) {
  require(std::isfinite(v), "payload for site ", site_id,
          ": non-finite value in ", field);
}

class Reader {
 public:
  explicit Reader(const Bytes& bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1, "byte");
    return bytes_[pos_++];
  }

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8, "f64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  bool exhausted() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t k, const char* what) {
    require(pos_ + k <= bytes_.size(), "payload truncated at byte ", pos_,
            " while reading ", what, " (buffer holds ", bytes_.size(),
            " bytes)");
  }

  const Bytes& bytes_;
  std::size_t pos_ = 0;
};

void validate_payload(const SitePayload& p) {
  require(p.site_id >= 0, "payload: negative site id");
  require(p.n >= 0 && p.p >= 0, "payload for site ", p.site_id,
          ": negative dimensions");
  require(p.beta_hat.size() == p.p, "payload for site ", p.site_id,
          ": beta_hat has length ", p.beta_hat.size(), ", header says p = ",
          p.p);
  require_finite(p.sigma_hat_sq, "sigma_hat_sq", p.site_id);
  for (Eigen::Index j = 0; j < p.beta_hat.size(); ++j)
    require_finite(p.beta_hat(j), "beta_hat", p.site_id);
  if (p.block) {
    const PosteriorBlock& b = *p.block;
    require(b.p == p.p, "payload for site ", p.site_id,
            ": block dimension disagrees with p");
    require(b.K >= 1, "payload for site ", p.site_id, ": block with K < 1");
    require_finite(b.psi, "block psi", p.site_id);
    require(b.psi > 0.0, "payload for site ", p.site_id, ": block psi <= 0");
    if (b.form == BlockForm::Columns) {
      require(b.B.rows() == p.p && b.B.cols() == b.K, "payload for site ",
              p.site_id, ": block column shape mismatch");
      for (Eigen::Index i = 0; i < b.B.size(); ++i)
        require_finite(b.B.data()[i], "block columns", p.site_id);
    } else {
      require(b.BBt.rows() == p.p && b.BBt.cols() == p.p, "payload for site ",
              p.site_id, ": block gram shape mismatch");
      for (Eigen::Index i = 0; i < b.BBt.size(); ++i)
        require_finite(b.BBt.data()[i], "block gram", p.site_id);
    }
  }
  if (p.gradient) {
    require(p.gradient->size() == p.p, "payload for site ", p.site_id,
            ": gradient has length ", p.gradient->size(), ", expected ", p.p);
    for (Eigen::Index j = 0; j < p.gradient->size(); ++j)
      require_finite((*p.gradient)(j), "gradient", p.site_id);
  }
  if (p.wald) {
    for (double w : *p.wald) require_finite(w, "wald", p.site_id);
  }
  if (p.stats) {
    const SufficientStats& st = *p.stats;
    require(st.S.rows() == p.p && st.S.cols() == p.p &&
                st.Xty.size() == p.p,
            "payload for site ", p.site_id, ": statistics shape mismatch");
    for (Eigen::Index i = 0; i < st.S.size(); ++i)
      require_finite(st.S.data()[i], "stats S", p.site_id);
    for (Eigen::Index j = 0; j < st.Xty.size(); ++j)
      require_finite(st.Xty(j), "stats Xty", p.site_id);
    require_finite(st.yty, "stats yty", p.site_id);
  }
}

}  // namespace

Bytes encode_payload(const SitePayload& p) {
  validate_payload(p);
  Bytes out;
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, p.schema_version);
  put_u32(out, static_cast<std::uint32_t>(p.site_id));
  put_u32(out, static_cast<std::uint32_t>(p.n));
  put_u32(out, static_cast<std::uint32_t>(p.p));
  std::uint32_t flags = 0;
  if (p.block) flags |= kFlagBlock;
  if (p.gradient) flags |= kFlagGradient;
  if (p.wald) flags |= kFlagWald;
  if (p.stats) flags |= kFlagStats;
  put_u32(out, flags);
  put_f64(out, p.sigma_hat_sq);
  for (Eigen::Index j = 0; j < p.beta_hat.size(); ++j)
    put_f64(out, p.beta_hat(j));
  if (p.block) {
    const PosteriorBlock& b = *p.block;
    put_u8(out, b.form == BlockForm::Gram ? 1 : 0);
    put_u32(out, static_cast<std::uint32_t>(b.K));
    put_f64(out, b.psi);
    if (b.form == BlockForm::Columns) {
      for (int k = 0; k < b.K; ++k)
        for (int i = 0; i < b.p; ++i) put_f64(out, b.B(i, k));
    } else {
      for (double v : pack_upper(b.BBt)) put_f64(out, v);
    }
  }
  if (p.gradient) {
    for (Eigen::Index j = 0; j < p.gradient->size(); ++j)
      put_f64(out, (*p.gradient)(j));
  }
  if (p.wald) {
    put_u32(out, static_cast<std::uint32_t>(p.wald->size()));
    for (double w : *p.wald) put_f64(out, w);
  }
  if (p.stats) {
    put_u32(out, static_cast<std::uint32_t>(p.stats->n));
    for (double v : pack_upper(p.stats->S)) put_f64(out, v);
    for (Eigen::Index j = 0; j < p.stats->Xty.size(); ++j)
      put_f64(out, p.stats->Xty(j));
    put_f64(out, p.stats->yty);
  }
  return out;
}

SitePayload decode_payload(const Bytes& bytes) {
  Reader r(bytes);
  for (std::uint8_t expected : kMagic) {
    require(r.u8() == expected, "payload: bad magic bytes");
  }
  SitePayload p;
  p.schema_version = r.u32();
  require(p.schema_version == kSchemaVersion, "payload: schema version ",
          p.schema_version, " unsupported (expected ", kSchemaVersion, ")");
  p.site_id = static_cast<int>(r.u32());
  p.n = static_cast<int>(r.u32());
  p.p = static_cast<int>(r.u32());
  require(p.p >= 0 && p.p <= 1'000'000, "payload: implausible p = ", p.p);
  const std::uint32_t flags = r.u32();
  require((flags & ~(kFlagBlock | kFlagGradient | kFlagWald | kFlagStats)) ==
              0,
          "payload: unknown flag bits");
  p.sigma_hat_sq = r.f64();
  p.beta_hat.resize(p.p);
  for (int j = 0; j < p.p; ++j) p.beta_hat(j) = r.f64();
  if (flags & kFlagBlock) {
    PosteriorBlock b;
    const std::uint8_t form = r.u8();
    require(form <= 1, "payload: unknown block form ",
            static_cast<int>(form));
    b.form = form == 1 ? BlockForm::Gram : BlockForm::Columns;
    b.K = static_cast<int>(r.u32());
    b.p = p.p;
    b.psi = r.f64();
    if (b.form == BlockForm::Columns) {
      b.B.resize(p.p, b.K);
      for (int k = 0; k < b.K; ++k)
        for (int i = 0; i < p.p; ++i) b.B(i, k) = r.f64();
    } else {
      std::vector<double> packed(static_cast<std::size_t>(p.p) * (p.p + 1) /
                                 2);
      for (double& v : packed) v = r.f64();
      b.BBt = unpack_upper(p.p, packed.data());
    }
    p.block = std::move(b);
  }
  if (flags & kFlagGradient) {
    VectorXd g(p.p);
    for (int j = 0; j < p.p; ++j) g(j) = r.f64();
    p.gradient = std::move(g);
  }
  if (flags & kFlagWald) {
    const std::uint32_t count = r.u32();
    std::vector<double> w(count);
    for (double& v : w) v = r.f64();
    p.wald = std::move(w);
  }
  if (flags & kFlagStats) {
    SufficientStats st;
    st.n = static_cast<int>(r.u32());
    std::vector<double> packed(static_cast<std::size_t>(p.p) * (p.p + 1) / 2);
    for (double& v : packed) v = r.f64();
    st.S = unpack_upper(p.p, packed.data());
    st.Xty.resize(p.p);
    for (int j = 0; j < p.p; ++j) st.Xty(j) = r.f64();
    st.yty = r.f64();
    p.stats = std::move(st);
  }
  require(r.exhausted(), "payload: ", bytes.size() - r.pos(),
          " trailing bytes after decode");
  validate_payload(p);
  return p;
}

// --- JSON mirrors ----------------------------------------------------------

namespace {

using nlohmann::json;

json vector_to_json(const VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index j = 0; j < v.size(); ++j) arr.push_back(v(j));
  return arr;
}

VectorXd vector_from_json(const json& arr, const char* field) {
  require(arr.is_array(), "json payload: ", field, " must be an array");
  VectorXd v(arr.size());
  for (std::size_t j = 0; j < arr.size(); ++j)
    v(static_cast<Eigen::Index>(j)) = arr[j].get<double>();
  return v;
}

json matrix_to_json(const MatrixXd& A) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < A.cols(); ++j) row.push_back(A(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const json& rows, const char* field) {
  require(rows.is_array() && !rows.empty(), "json payload: ", field,
          " must be a nonempty array of rows");
  const std::size_t ncols = rows[0].size();
  MatrixXd A(rows.size(), ncols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].is_array() && rows[i].size() == ncols, "json payload: ",
            field, " rows have unequal lengths");
    for (std::size_t j = 0; j < ncols; ++j)
      A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j].get<double>();
  }
  return A;
}

const std::map<std::string, Task>& task_names() {
  static const std::map<std::string, Task> names = {
      {"mle_only", Task::MleOnly},
      {"mle_plus_posterior", Task::MlePlusPosterior},
      {"csl_gradient", Task::CslGradient},
      {"wald_stats", Task::WaldStats},
      {"sufficient_stats", Task::SufficientStatsTask},
  };
  return names;
}

std::string task_to_name(Task t) {
  for (const auto& [name, task] : task_names()) {
    if (task == t) return name;
  }
  fail("unknown task enum value");
}

std::string alternative_to_name(Alternative a) {
  switch (a) {
    case Alternative::TwoSided: return "two_sided";
    case Alternative::Greater: return "greater";
    case Alternative::Less: return "less";
  }
  fail("unknown alternative enum value");
}

Alternative alternative_from_name(const std::string& s) {
  if (s == "two_sided") return Alternative::TwoSided;
  if (s == "greater") return Alternative::Greater;
  if (s == "less") return Alternative::Less;
  fail("unknown alternative '", s, "' (use two_sided|greater|less)");
}

}  // namespace

std::string payload_to_json(const SitePayload& p) {
  validate_payload(p);
  json j;
  j["schema_version"] = p.schema_version;
  j["site_id"] = p.site_id;
  j["n"] = p.n;
  j["p"] = p.p;
  j["beta_hat"] = vector_to_json(p.beta_hat);
  j["sigma_hat_sq"] = p.sigma_hat_sq;
  if (p.block) {
    json b;
    b["form"] = p.block->form == BlockForm::Gram ? "gram" : "columns";
    b["K"] = p.block->K;
    b["psi"] = p.block->psi;
    if (p.block->form == BlockForm::Columns) {
      b["B"] = matrix_to_json(p.block->B);
    } else {
      b["BBt"] = matrix_to_json(p.block->BBt);
    }
    j["block"] = std::move(b);
  }
  if (p.gradient) j["gradient"] = vector_to_json(*p.gradient);
  if (p.wald) j["wald"] = *p.wald;
  if (p.stats) {
    json st;
    st["n"] = p.stats->n;
    st["S"] = matrix_to_json(p.stats->S);
    st["Xty"] = vector_to_json(p.stats->Xty);
    st["yty"] = p.stats->yty;
    j["stats"] = std::move(st);
  }
  return j.dump(2);
}

SitePayload payload_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail("json payload: parse error: ", e.what());
  }
  SitePayload p;
  try {
    p.schema_version = j.at("schema_version").get<std::uint32_t>();
    require(p.schema_version == kSchemaVersion, "json payload: schema version ",
            p.schema_version, " unsupported");
    p.site_id = j.at("site_id").get<int>();
    p.n = j.at("n").get<int>();
    p.p = j.at("p").get<int>();
    p.beta_hat = vector_from_json(j.at("beta_hat"), "beta_hat");
    p.sigma_hat_sq = j.at("sigma_hat_sq").get<double>();
    if (j.contains("block")) {
      const json& b = j.at("block");
      PosteriorBlock blk;
      const std::string form = b.at("form").get<std::string>();
      require(form == "gram" || form == "columns",
              "json payload: unknown block form '", form, "'");
      blk.form = form == "gram" ? BlockForm::Gram : BlockForm::Columns;
      blk.K = b.at("K").get<int>();
      blk.p = p.p;
      blk.psi = b.at("psi").get<double>();
      if (blk.form == BlockForm::Columns) {
        blk.B = matrix_from_json(b.at("B"), "block B");
      } else {
        blk.BBt = matrix_from_json(b.at("BBt"), "block BBt");
      }
      p.block = std::move(blk);
    }
    if (j.contains("gradient"))
      p.gradient = vector_from_json(j.at("gradient"), "gradient");
    if (j.contains("wald")) p.wald = j.at("wald").get<std::vector<double>>();
    if (j.contains("stats")) {
      const json& s = j.at("stats");
      SufficientStats st;
      st.n = s.at("n").get<int>();
      st.S = matrix_from_json(s.at("S"), "stats S");
      st.Xty = vector_from_json(s.at("Xty"), "stats Xty");
      st.yty = s.at("yty").get<double>();
      p.stats = std::move(st);
    }
  } catch (const json::exception& e) {
    fail("json payload: missing or mistyped field: ", e.what());
  }
  validate_payload(p);
  return p;
}

void validate_request(const TaskRequest& request) {
  if (request.task == Task::CslGradient) {
    require(request.beta_bar.has_value(),
            "csl_gradient request requires beta_bar");
  }
  if (request.task == Task::MlePlusPosterior) {
    require(request.K >= 1, "mle_plus_posterior request requires K >= 1");
    require(request.psi > 0.0, "mle_plus_posterior request requires psi > 0");
  }
  require(request.alpha > 0.0 && request.alpha < 1.0,
          "request alpha must lie in (0,1)");
}

std::string request_to_json(const TaskRequest& request) {
  validate_request(request);
  json j;
  j["task"] = task_to_name(request.task);
  j["K"] = request.K;
  j["psi"] = request.psi;
  if (request.beta_bar) j["beta_bar"] = vector_to_json(*request.beta_bar);
  if (!request.hypotheses.empty()) {
    json hyps = json::array();
    for (const Hypothesis& h : request.hypotheses) {
      hyps.push_back(json{{"j", h.j}, {"b0", h.b0}});
    }
    j["hypotheses"] = std::move(hyps);
    j["alpha"] = request.alpha;
    j["alternative"] = alternative_to_name(request.alternative);
  }
  return j.dump(2);
}

TaskRequest request_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail("request json: parse error: ", e.what());
  }
  TaskRequest request;
  try {
    const std::string name = j.at("task").get<std::string>();
    const auto it = task_names().find(name);
    require(it != task_names().end(), "request json: unknown task '", name,
            "'");
    request.task = it->second;
    request.K = j.value("K", 0);
    request.psi = j.value("psi", 100.0);
    if (j.contains("beta_bar"))
      request.beta_bar = vector_from_json(j.at("beta_bar"), "beta_bar");
    if (j.contains("hypotheses")) {
      for (const json& h : j.at("hypotheses")) {
        request.hypotheses.push_back(
            Hypothesis{h.at("j").get<int>(), h.at("b0").get<double>()});
      }
      request.alpha = j.value("alpha", 0.05);
      if (j.contains("alternative"))
        request.alternative =
            alternative_from_name(j.at("alternative").get<std::string>());
    }
  } catch (const json::exception& e) {
    fail("request json: missing or mistyped field: ", e.what());
  }
  validate_request(request);
  return request;
}

// --- transports -------------------------------------------------------------

void InProcessTransport::register_site(int site_id, SiteResponder responder) {
  require(sites_.emplace(site_id, std::move(responder)).second,
          "site ", site_id, " registered twice");
}

std::map<int, Bytes> InProcessTransport::exchange(const TaskRequest& request) {
  validate_request(request);
  std::map<int, Bytes> out;
  for (const auto& [id, responder] : sites_) out.emplace(id, responder(request));
  return out;
}

std::vector<int> InProcessTransport::site_ids() const {
  std::vector<int> ids;
  ids.reserve(sites_.size());
  for (const auto& [id, _] : sites_) ids.push_back(id);
  return ids;
}

FileDropTransport::FileDropTransport(std::filesystem::path root)
    : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

void FileDropTransport::register_site(int site_id, SiteResponder responder) {
  require(sites_.emplace(site_id, std::move(responder)).second,
          "site ", site_id, " registered twice");
}

namespace {

void write_file(const std::filesystem::path& path, const void* data,
                std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot open ", path.string(), " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  require(out.good(), "write failed for ", path.string());
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  require(in.good(), "cannot open ", path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  Bytes bytes(static_cast<std::size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  require(in.good(), "read failed for ", path.string());
  return bytes;
}

}  // namespace

std::map<int, Bytes> FileDropTransport::exchange(const TaskRequest& request) {
  validate_request(request);
  const int round = next_round_++;
  const std::filesystem::path dir =
      root_ / ("round" + std::to_string(round));
  std::filesystem::create_directories(dir);

  const std::string req = request_to_json(request);
  write_file(dir / "request.json", req.data(), req.size());

  // Each registered site reads the request and drops its payload file.
  for (const auto& [id, responder] : sites_) {
    const TaskRequest parsed =
        request_from_json(std::string(req.begin(), req.end()));
    const Bytes bytes = responder(parsed);
    const std::string name =
        "round" + std::to_string(round) + "_site" + std::to_string(id) +
        ".payload";
    write_file(dir / name, bytes.data(), bytes.size());
  }
  write_file(dir / "complete", "", 0);

  // Central collection: marker first, then every expected file must exist.
  require(std::filesystem::exists(dir / "complete"),
          "round ", round, " incomplete: completion marker missing in ",
          dir.string());
  std::map<int, Bytes> out;
  for (const auto& [id, _] : sites_) {
    const std::filesystem::path file =
        dir / ("round" + std::to_string(round) + "_site" + std::to_string(id) +
               ".payload");
    require(std::filesystem::exists(file), "round ", round,
            " marked complete but payload file is missing: ", file.string());
    out.emplace(id, read_file(file));
  }
  return out;
}

std::vector<int> FileDropTransport::site_ids() const {
  std::vector<int> ids;
  ids.reserve(sites_.size());
  for (const auto& [id, _] : sites_) ids.push_back(id);
  return ids;
}

std::vector<SitePayload> run_round(Transport& transport,
                                   const TaskRequest& request,
                                   const std::vector<int>& sites,
                                   CommTrace& trace) {
  require(!sites.empty(), "run_round: empty site list");
  const std::map<int, Bytes> responses = transport.exchange(request);

  std::string missing;
  for (int id : sites) {
    if (!responses.count(id)) {
      if (!missing.empty()) missing += ", ";
      missing += std::to_string(id);
    }
  }
  require(missing.empty(), "incomplete round: no response from site(s) ",
          missing);

  trace.rounds += 1;
  std::uint64_t round_bytes = 0;
  std::vector<SitePayload> payloads;
  payloads.reserve(sites.size());
  for (int id : sites) {
    const Bytes& bytes = responses.at(id);
    SitePayload p;
    try {
      p = decode_payload(bytes);
    } catch (const std::runtime_error& e) {
      fail("site ", id, ": ", e.what());
    }
    require(p.site_id == id, "site ", id, " answered with payload labeled ",
            p.site_id);
    round_bytes += bytes.size();
    trace.per_site_bytes[id] += bytes.size();
    payloads.push_back(std::move(p));
  }
  trace.bytes_per_round.push_back(round_bytes);
  return payloads;
}

}  // namespace cedar
