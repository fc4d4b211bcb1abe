#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cedar/types.hpp"

namespace cedar {

using Bytes = std::vector<std::uint8_t>;

// --- wire format ---------------------------------------------------------
// Self-describing binary frame, little-endian throughout:
//   magic "CDRP" | schema_version u32 | site_id u32 | n u32 | p u32 |
//   flags u32 (bit0 block, bit1 gradient, bit2 wald, bit3 stats) |
//   sigma_hat_sq f64 | beta_hat p*f64 |
//   [block: form u8 (0 columns, 1 gram) | K u32 | psi f64 |
//           p*K f64 (columns) or p(p+1)/2 f64 (packed upper gram)]
//   [gradient: p*f64]
//   [wald: count u32 | count*f64]
//   [stats: n u32 | p(p+1)/2 f64 (S upper) | p*f64 (Xty) | f64 (yty)]
// All floats must be finite; decode rejects bad magic, version mismatch,
// truncation, trailing bytes, and non-finite values.
Bytes encode_payload(const SitePayload& payload);
SitePayload decode_payload(const Bytes& bytes);

// JSON mirrors (debugging / request format). Request JSON is the on-disk
// format for the file-drop transport's request.json.
std::string payload_to_json(const SitePayload& payload);
SitePayload payload_from_json(const std::string& text);
std::string request_to_json(const TaskRequest& request);
TaskRequest request_from_json(const std::string& text);

void validate_request(const TaskRequest& request);

// --- transports ----------------------------------------------------------

// A site's response logic: encoded payload for a broadcast request. Handlers
// are stateless between rounds; any randomness must derive from seeds fixed
// at handler construction.
using SiteResponder = std::function<Bytes(const TaskRequest&)>;

class Transport {
 public:
  virtual ~Transport() = default;
  // Broadcast one request to every registered site and collect the encoded
  // responses, keyed by site id. One call = one communication round.
  virtual std::map<int, Bytes> exchange(const TaskRequest& request) = 0;
  virtual std::vector<int> site_ids() const = 0;
};

class InProcessTransport : public Transport {
 public:
  void register_site(int site_id, SiteResponder responder);
  std::map<int, Bytes> exchange(const TaskRequest& request) override;
  std::vector<int> site_ids() const override;

 private:
  std::map<int, SiteResponder> sites_;
};

// Exchanges through a directory tree: round R creates <root>/round<R>/ with
// request.json, one round<R>_site<ID>.payload per site, and a `complete`
// marker written last. Collection requires the marker and then every site
// file; a missing file after the marker is a hard error.
class FileDropTransport : public Transport {
 public:
  explicit FileDropTransport(std::filesystem::path root);
  void register_site(int site_id, SiteResponder responder);
  std::map<int, Bytes> exchange(const TaskRequest& request) override;
  std::vector<int> site_ids() const override;

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::map<int, SiteResponder> sites_;
  int next_round_ = 1;
};

// One broadcast/collect exchange: decodes every response, enforces that the
// expected sites all answered, and charges the round to `trace`.
std::vector<SitePayload> run_round(Transport& transport,
                                   const TaskRequest& request,
                                   const std::vector<int>& sites,
                                   CommTrace& trace);

}  // namespace cedar
