#include "vip/coder.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <set>
#include <thread>
#include <utility>

#include "vip/threading.hpp"

namespace vip::coder {

namespace {

// Requested features resolved against the table, deduplicated, in table
// order.  The prompt is therefore insensitive to the order the caller listed
// them in.
std::vector<const ctml::FeatureSpec*> canonical_features(const CodingRequest& req) {
  std::set<std::string> want;
  for (const auto& key : req.features) {
    ctml::feature(key);  // unknown key -> ConfigError
    want.insert(key);
  }
  std::vector<const ctml::FeatureSpec*> out;
  for (const auto& spec : ctml::feature_table())
    if (want.empty() || want.count(spec.key)) out.push_back(&spec);
  return out;
}

void require_payloads(const CodingRequest& req,
                      const std::vector<const ctml::FeatureSpec*>& specs) {
  for (const auto* s : specs) {
    if (s->modality.center_frame && !req.center_frame) throw IncompletePayload(s->key);
    if (s->modality.frame_window && req.frames.empty()) throw IncompletePayload(s->key);
    if (s->modality.transcript && !req.transcript) throw IncompletePayload(s->key);
  }
}

std::string scale_text(const ctml::FeatureSpec& s) {
  return s.type == ctml::FeatureType::Binary ? "0 or 1"
                                             : "integer 1 to " + std::to_string(s.levels);
}

std::string rubric_text(const std::vector<const ctml::FeatureSpec*>& specs) {
  std::string out =
      "You are coding five-second moments of lecture videos against a fixed "
      "rubric. Judge only the central five seconds of the moment; surrounding "
      "frames and transcript are context. Reply with exactly one JSON object "
      "and nothing else: one key per rubric item below, each value an integer "
      "on the item's scale.\n\nRubric:\n";
  for (const auto* s : specs)
    out += "- \"" + s->key + "\" (" + scale_text(*s) + "): " + s->description + "\n";
  return out;
}

std::string key_list(const std::vector<const ctml::FeatureSpec*>& specs) {
  std::string out;
  for (const auto* s : specs) {
    if (!out.empty()) out += ", ";
    out += "\"" + s->key + "\"";
  }
  return out;
}

ojson text_part(const std::string& text) {
  return ojson{{"type", "text"}, {"text", text}};
}

ojson image_part(const std::string& url) {
  return ojson{{"type", "image_url"}, {"image_url", ojson{{"url", url}}}};
}

// First defect found in a candidate reply object, or empty if it is a valid
// rating set for exactly the requested features.
std::string check_reply(const ojson& obj, const std::vector<const ctml::FeatureSpec*>& specs,
                        std::map<std::string, int>& values) {
  if (!obj.is_object()) return "reply was not a JSON object";
  for (const auto* s : specs) {
    auto it = obj.find(s->key);
    if (it == obj.end()) return "missing key \"" + s->key + "\"";
    if (!it->is_number_integer()) return "value for \"" + s->key + "\" is not an integer";
    const int v = it->get<int>();
    const int lo = s->type == ctml::FeatureType::Binary ? 0 : 1;
    const int hi = s->type == ctml::FeatureType::Binary ? 1 : s->levels;
    if (v < lo || v > hi)
      return "value " + std::to_string(v) + " for \"" + s->key + "\" is out of range (" +
             scale_text(*s) + ")";
    values[s->key] = v;
  }
  for (const auto& [key, v] : obj.items())
    if (!values.count(key)) return "unexpected key \"" + key + "\"";
  return {};
}

struct ParsedReply {
  std::string content;  // assistant text, when the envelope was readable
  std::map<std::string, int> values;
  std::string problem;  // empty on success
};

ParsedReply parse_reply(const std::string& body,
                        const std::vector<const ctml::FeatureSpec*>& specs) {
  ParsedReply out;
  ojson envelope = ojson::parse(body, nullptr, false);
  if (envelope.is_discarded() || !envelope.contains("choices") || envelope["choices"].empty() ||
      !envelope["choices"][0].contains("message") ||
      !envelope["choices"][0]["message"].contains("content") ||
      !envelope["choices"][0]["message"]["content"].is_string()) {
    out.content = body;
    out.problem = "response was not a chat completion envelope";
    return out;
  }
  out.content = envelope["choices"][0]["message"]["content"].get<std::string>();
  ojson obj = ojson::parse(out.content, nullptr, false);
  if (obj.is_discarded()) {
    out.problem = "reply was not valid JSON";
    return out;
  }
  out.problem = check_reply(obj, specs, out.values);
  return out;
}

}  // namespace

ojson build_prompt(const CodingRequest& req) {
  auto specs = canonical_features(req);
  require_payloads(req, specs);

  ojson parts = ojson::array();
  if (req.transcript)
    parts.push_back(text_part("Transcript over [t-10, t+10]:\n" + *req.transcript));
  if (req.slide_text) parts.push_back(text_part("Slide text at the moment:\n" + *req.slide_text));
  if (req.center_frame) {
    parts.push_back(text_part("Center frame (the rated second):"));
    parts.push_back(image_part(*req.center_frame));
  }
  if (!req.frames.empty()) {
    parts.push_back(text_part("Frames at one per second over [t-10, t+10]:"));
    for (const auto& f : req.frames) parts.push_back(image_part(f));
  }
  parts.push_back(text_part("Code the rubric for the central five seconds now."));

  ojson messages = ojson::array();
  messages.push_back(ojson{{"role", "system"}, {"content", rubric_text(specs)}});
  messages.push_back(ojson{{"role", "user"}, {"content", std::move(parts)}});
  return messages;
}

Client::Client(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.base_url.empty()) throw ConfigError("endpoint base_url is empty");
  if (cfg_.model.empty()) throw ConfigError("endpoint model name is empty");
  if (cfg_.max_concurrency < 1) throw ConfigError("endpoint max_concurrency must be >= 1");
  if (cfg_.retry_budget < 0) throw ConfigError("endpoint retry_budget must be >= 0");
  if (!(cfg_.timeout_seconds > 0.0)) throw ConfigError("endpoint timeout must be positive");
  if (cfg_.backoff_initial_ms < 0.0) throw ConfigError("endpoint backoff must be >= 0");
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (cfg_.base_url.rfind("https://", 0) == 0)
    throw ConfigError("https endpoint requires a TLS-enabled build");
#endif
  if (!cfg_.auth_env.empty()) {
    const char* tok = std::getenv(cfg_.auth_env.c_str());
    if (tok != nullptr) token_ = tok;
  }
}

Client::Outcome Client::try_code_moment(const CodingRequest& req) const {
  auto specs = canonical_features(req);
  Outcome out;
  ojson conversation = build_prompt(req);
  const int attempts_allowed = cfg_.retry_budget + 1;
  const auto timeout =
      std::chrono::milliseconds(std::llround(cfg_.timeout_seconds * 1000.0));
  double backoff_ms = cfg_.backoff_initial_ms;
  double slept_ms = 0.0;

  for (int attempt = 0; attempt < attempts_allowed; ++attempt) {
    const bool last = attempt + 1 == attempts_allowed;
    // Determinism controls the wire format exposes; they ride in every body
    // and therefore in the audit digest.
    ojson body{{"model", cfg_.model},
               {"temperature", 0.0},
               {"top_p", 1.0},
               {"seed", 0},
               {"messages", conversation}};
    const std::string posted = body.dump();

    Attempt a;
    a.request_fnv1a = io::fnv1a64(posted);

    httplib::Client http(cfg_.base_url);
    http.set_connection_timeout(timeout);
    http.set_read_timeout(timeout);
    http.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = http.Post("/v1/chat/completions", headers, posted, "application/json");

    if (!res) {
      a.response = httplib::to_string(res.error());
      a.problem = "transport failure";
      out.attempts.push_back(std::move(a));
      if (last) {
        out.error = "Transport: " + cfg_.base_url + " unreachable after " +
                    std::to_string(attempts_allowed) + " attempts (" +
                    out.attempts.back().response + "; backed off " +
                    std::to_string(std::llround(slept_ms)) + "ms)";
        return out;
      }
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff_ms));
      slept_ms += backoff_ms;
      backoff_ms *= 2.0;
      continue;
    }

    a.http_status = res->status;
    a.response = res->body;

    if (res->status == 429 || res->status >= 500) {
      a.problem = "http " + std::to_string(res->status);
      out.attempts.push_back(std::move(a));
      if (last) {
        out.error = "Transport: " + cfg_.base_url + " kept failing (last http " +
                    std::to_string(res->status) + ") after " + std::to_string(attempts_allowed) +
                    " attempts (backed off " + std::to_string(std::llround(slept_ms)) + "ms)";
        return out;
      }
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff_ms));
      slept_ms += backoff_ms;
      backoff_ms *= 2.0;
      continue;
    }

    if (res->status != 200) {
      // 4xx other than 429 will not improve with retries.
      a.problem = "http " + std::to_string(res->status);
      out.attempts.push_back(std::move(a));
      out.error = "HTTP " + std::to_string(res->status) + " from " + cfg_.base_url + ": " +
                  out.attempts.back().response;
      return out;
    }

    ParsedReply parsed = parse_reply(res->body, specs);
    a.problem = parsed.problem;
    out.attempts.push_back(std::move(a));

    if (parsed.problem.empty()) {
      ctml::CTMLRecord rec;
      rec.video_id = req.video_id;
      rec.t = req.t;
      rec.coder = ctml::Coder::Machine;
      rec.values = std::move(parsed.values);
      if (rec.values.size() == ctml::feature_table().size()) ctml::validate_record(rec);
      out.record = std::move(rec);
      return out;
    }

    if (last) {
      out.error = "CodingFailed: " + req.video_id + " t=" + std::to_string(req.t) + " after " +
                  std::to_string(attempts_allowed) + " attempts (" + parsed.problem +
                  "); last reply: " + parsed.content;
      return out;
    }
    conversation.push_back(ojson{{"role", "assistant"}, {"content", parsed.content}});
    conversation.push_back(
        ojson{{"role", "user"},
              {"content", "Your previous reply was not accepted: " + parsed.problem +
                              ". Reply again with exactly one JSON object, keys " +
                              key_list(specs) +
                              " only, integer values on the stated scales, and no other text."}});
  }
  out.error = "CodingFailed: retry loop exhausted";  // unreachable
  return out;
}

CodedMoment Client::code_moment(const CodingRequest& req) const {
  Outcome o = try_code_moment(req);
  if (!o.record) throw DataError(o.error);
  return CodedMoment{std::move(*o.record), std::move(o.attempts)};
}

BatchResult code_moments(const Client& client, const std::vector<CodingRequest>& requests,
                         const std::optional<std::filesystem::path>& audit_path) {
  struct Slot {
    std::optional<Client::Outcome> outcome;
    std::string error;  // request-shape errors thrown before any exchange
  };
  std::vector<Slot> slots(requests.size());
  parallel_for(requests.size(), client.config().max_concurrency, [&](std::size_t i) {
    try {
      slots[i].outcome = client.try_code_moment(requests[i]);
    } catch (const Error& e) {
      slots[i].error = e.what();
    }
  });

  BatchResult out;
  std::string audit;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& req = requests[i];
    const Slot& slot = slots[i];
    const bool ok = slot.outcome && slot.outcome->record;
    const std::string error = slot.outcome ? slot.outcome->error : slot.error;
    if (ok)
      out.coded.push_back(CodedMoment{*slot.outcome->record, slot.outcome->attempts});
    else
      out.failures.push_back(BatchFailure{i, req.video_id, req.t, error});

    if (audit_path) {
      ojson line{{"video_id", req.video_id},
                 {"t", req.t},
                 {"model", client.config().model},
                 {"temperature", 0.0},
                 {"top_p", 1.0},
                 {"seed", 0},
                 {"ok", ok}};
      if (ok) {
        ojson vals = ojson::object();
        for (const auto& spec : ctml::feature_table()) {
          auto it = slot.outcome->record->values.find(spec.key);
          if (it != slot.outcome->record->values.end()) vals[spec.key] = it->second;
        }
        line["record"] = std::move(vals);
      } else {
        line["error"] = error;
      }
      ojson attempts = ojson::array();
      if (slot.outcome)
        for (const auto& a : slot.outcome->attempts)
          attempts.push_back(ojson{{"request_fnv1a", io::hash_hex(a.request_fnv1a)},
                                   {"status", a.http_status},
                                   {"response", a.response},
                                   {"problem", a.problem}});
      line["attempts"] = std::move(attempts);
      audit += line.dump();
      audit += '\n';
    }
  }
  if (audit_path) io::write_file(*audit_path, audit);
  return out;
}

std::vector<ctml::FeatureAgreement> agreement_vs_humans(
    const std::vector<ctml::CTMLRecord>& machine,
    const std::vector<ctml::CTMLRecord>& adjudicated) {
  std::vector<ctml::CTMLRecord> all = machine;
  all.insert(all.end(), adjudicated.begin(), adjudicated.end());
  auto report = ctml::agreement_summary(all, ctml::Coder::Machine, ctml::Coder::Adjudicated);
  bool any = false;
  for (const auto& r : report) any = any || r.n > 0;
  if (!any) throw DataError("EmptyJoin: machine and adjudicated ratings share no moments");
  return report;
}

}  // namespace vip::coder
