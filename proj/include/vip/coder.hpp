#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vip/ctml.hpp"
#include "vip/error.hpp"
#include "vip/io.hpp"

namespace vip::coder {

using io::ojson;

// One video moment to code against the rubric, together with whatever
// modality payloads the caller extracted for it.  Frame payloads are opaque
// strings: either externally hosted URLs or data: URIs.
struct CodingRequest {
  std::string video_id;
  int t = 0;
  // Rubric subset to code; empty means the full table.  A subset request
  // yields a partial record, which the records file format does not accept
  // until the remaining features are filled in.
  std::vector<std::string> features;
  std::optional<std::string> transcript;    // spoken text over [t-10, t+10]
  std::optional<std::string> slide_text;    // OCR of the slide, optional context
  std::optional<std::string> center_frame;  // the frame at second t
  std::vector<std::string> frames;          // one per second over [t-10, t+10]
};

// A chat-completion endpoint.  base_url is scheme://host[:port]; the client
// posts to /v1/chat/completions beneath it.  The bearer token is read from
// the environment variable named by auth_env (empty or unset: no auth
// header), so tokens never appear in config files.
struct EndpointConfig {
  std::string base_url;
  std::string model;
  std::string auth_env;
  int max_concurrency = 4;
  int retry_budget = 3;  // retries after the first attempt, parse or transport
  double timeout_seconds = 60.0;
  double backoff_initial_ms = 250.0;  // doubles per 429/5xx/transport retry
};

// Chat messages for one moment: a system turn holding the rubric for exactly
// the requested features (table order, deduplicated, verbatim descriptions
// and scales, judging only the central five seconds) and a user turn with
// the payload parts.  Pure function of the request; byte-identical for equal
// requests.  Missing payloads for a requested feature's modality throw
// IncompletePayload; unknown feature keys throw ConfigError.
ojson build_prompt(const CodingRequest& req);

// One wire exchange, kept for the audit trail.
struct Attempt {
  std::uint64_t request_fnv1a = 0;  // digest of the posted body
  int http_status = 0;              // 0 when the transport itself failed
  std::string response;             // raw body, or the transport error text
  std::string problem;              // why the attempt was rejected; empty if accepted
};

struct CodedMoment {
  ctml::CTMLRecord record;  // coder = Machine, ratings range-validated
  std::vector<Attempt> attempts;
};

class Client {
 public:
  // Validates the config (ConfigError) and resolves the auth token once.
  explicit Client(EndpointConfig cfg);

  const EndpointConfig& config() const { return cfg_; }

  // Codes one moment.  Invalid replies are answered with an error-explaining
  // follow-up and retried within the budget; 429/5xx and transport failures
  // back off exponentially on the same budget.  Exhaustion throws DataError
  // ("CodingFailed" with the raw exchange, or the transport failure).
  CodedMoment code_moment(const CodingRequest& req) const;

  // Same protocol, but endpoint failure lands in `error` instead of a throw,
  // keeping the exchange transcript for audit.  Malformed requests (unknown
  // feature, missing payload) still throw.
  struct Outcome {
    std::optional<ctml::CTMLRecord> record;
    std::vector<Attempt> attempts;
    std::string error;  // empty when record is set
  };
  Outcome try_code_moment(const CodingRequest& req) const;

 private:
  EndpointConfig cfg_;
  std::string token_;
};

struct BatchFailure {
  std::size_t index = 0;  // position in the input vector
  std::string video_id;
  int t = 0;
  std::string message;
};

struct BatchResult {
  std::vector<CodedMoment> coded;      // successes, input order
  std::vector<BatchFailure> failures;  // input order
};

// Codes every request with at most config().max_concurrency in flight.
// Output order equals input order regardless of completion order.  When
// audit_path is given, one JSON line per request is written, again in input
// order, carrying the pinned sampling controls and every raw exchange.
BatchResult code_moments(const Client& client, const std::vector<CodingRequest>& requests,
                         const std::optional<std::filesystem::path>& audit_path = {});

// Per-feature agreement of machine ratings against the adjudicated human
// ratings over their shared moments.  No shared moment on any feature throws
// DataError ("EmptyJoin").
std::vector<ctml::FeatureAgreement> agreement_vs_humans(
    const std::vector<ctml::CTMLRecord>& machine,
    const std::vector<ctml::CTMLRecord>& adjudicated);

}  // namespace vip::coder
