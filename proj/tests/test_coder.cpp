#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// Eigen must precede httplib: the resolver headers httplib drags in define a
// macro that collides with Eigen internals.
#include "vip/coder.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "vip/rng.hpp"

using namespace vip;
using coder::CodingRequest;
using coder::EndpointConfig;
using io::ojson;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("vip_coder_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

// In-process chat endpoint; each case installs its own handler.
struct MockServer {
  httplib::Server svr;
  int port = 0;
  std::thread th;
  std::atomic<int> hits{0};

  explicit MockServer(
      const std::function<void(const httplib::Request&, httplib::Response&, int)>& handler) {
    svr.Post("/v1/chat/completions", [this, handler](const httplib::Request& req,
                                                     httplib::Response& res) {
      handler(req, res, hits.fetch_add(1));
    });
    port = svr.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    th = std::thread([this] { svr.listen_after_bind(); });
    svr.wait_until_ready();
  }
  ~MockServer() {
    svr.stop();
    th.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

std::string envelope(const std::string& content) {
  ojson e{{"choices", ojson::array({ojson{{"message", ojson{{"role", "assistant"},
                                                            {"content", content}}}}})}};
  return e.dump();
}

// A full valid rating object: binaries 0, ordinals 1, with a couple of
// non-default entries so round-trips are meaningful.
ojson base_values() {
  ojson v = ojson::object();
  for (const auto& f : ctml::feature_table())
    v[f.key] = f.type == ctml::FeatureType::Binary ? 0 : 1;
  v["formula"] = 1;
  v["visual_complexity"] = 3;
  return v;
}

CodingRequest full_request() {
  CodingRequest r;
  r.video_id = "v1";
  r.t = 120;
  r.transcript = "we now prove the main lemma";
  r.slide_text = "Lemma 2";
  r.center_frame = "data:image/png;base64,AAAA";
  r.frames = {"frame://1", "frame://2", "frame://3"};
  return r;
}

EndpointConfig quick_config(const std::string& url) {
  EndpointConfig c;
  c.base_url = url;
  c.model = "rater-1";
  c.retry_budget = 2;
  c.timeout_seconds = 5.0;
  c.backoff_initial_ms = 1.0;
  return c;
}

}  // namespace

// ---------------------------------------------------------------- prompting

TEST_CASE("prompt embeds the rubric verbatim and the five-second focus") {
  auto msgs = coder::build_prompt(full_request());
  REQUIRE(msgs.size() == 2);
  CHECK(msgs[0].at("role") == "system");
  const std::string sys = msgs[0].at("content").get<std::string>();
  CHECK(sys.find("Math notation beyond single symbols is visible.") != std::string::npos);
  CHECK(sys.find("\"formula\" (0 or 1)") != std::string::npos);
  CHECK(sys.find("\"visual_complexity\" (integer 1 to 5)") != std::string::npos);
  CHECK(sys.find("central five seconds") != std::string::npos);

  CHECK(msgs[1].at("role") == "user");
  const auto& parts = msgs[1].at("content");
  // transcript, slide, center label+image, window label+3 images, closing
  REQUIRE(parts.size() == 9);
  CHECK(parts[0].at("text").get<std::string>().find("we now prove") != std::string::npos);
  CHECK(parts[3].at("type") == "image_url");
  CHECK(parts[3].at("image_url").at("url") == "data:image/png;base64,AAAA");
  CHECK(parts[8].at("text").get<std::string>().find("central five seconds") != std::string::npos);
}

TEST_CASE("prompt is a pure function of the request") {
  auto a = coder::build_prompt(full_request());
  auto b = coder::build_prompt(full_request());
  CHECK(a.dump() == b.dump());

  // listing features in any order yields the same canonical prompt
  auto r1 = full_request();
  r1.features = {"formula", "redundancy", "signaling"};
  auto r2 = full_request();
  r2.features = {"signaling", "formula", "redundancy", "formula"};
  CHECK(coder::build_prompt(r1).dump() == coder::build_prompt(r2).dump());
}

TEST_CASE("subset prompts carry only the requested rubric lines") {
  CodingRequest r;
  r.video_id = "v1";
  r.t = 60;
  r.features = {"formula"};
  r.center_frame = "frame://center";
  auto msgs = coder::build_prompt(r);
  const std::string sys = msgs[0].at("content").get<std::string>();
  CHECK(sys.find("\"formula\"") != std::string::npos);
  CHECK(sys.find("\"instructor\"") == std::string::npos);
  for (const auto& part : msgs[1].at("content"))
    if (part.at("type") == "text")
      CHECK(part.at("text").get<std::string>().find("Transcript") == std::string::npos);
}

TEST_CASE("missing modality payloads name the feature that needs them") {
  CodingRequest r;
  r.video_id = "v1";
  r.t = 60;
  r.features = {"redundancy"};  // transcript + frame window
  r.frames = {"frame://1"};
  try {
    coder::build_prompt(r);
    FAIL("expected IncompletePayload");
  } catch (const IncompletePayload& e) {
    CHECK(e.feature() == "redundancy");
  }

  CodingRequest f;
  f.video_id = "v1";
  f.t = 60;
  f.features = {"formula"};  // center frame
  CHECK_THROWS_AS(coder::build_prompt(f), IncompletePayload);

  CodingRequest u;
  u.video_id = "v1";
  u.t = 60;
  u.features = {"charisma"};
  CHECK_THROWS_AS(coder::build_prompt(u), ConfigError);
}

// ------------------------------------------------------------------- client

TEST_CASE("endpoint config is validated up front") {
  EndpointConfig c = quick_config("http://127.0.0.1:9");
  c.max_concurrency = 0;
  CHECK_THROWS_AS(coder::Client{c}, ConfigError);
  c = quick_config("http://127.0.0.1:9");
  c.retry_budget = -1;
  CHECK_THROWS_AS(coder::Client{c}, ConfigError);
  c = quick_config("http://127.0.0.1:9");
  c.timeout_seconds = 0.0;
  CHECK_THROWS_AS(coder::Client{c}, ConfigError);
  c = quick_config("");
  CHECK_THROWS_AS(coder::Client{c}, ConfigError);
  c = quick_config("http://127.0.0.1:9");
  c.model = "";
  CHECK_THROWS_AS(coder::Client{c}, ConfigError);
}

TEST_CASE("a valid reply round-trips into a machine record") {
  MockServer srv([](const httplib::Request&, httplib::Response& res, int) {
    res.set_content(envelope(base_values().dump()), "application/json");
  });
  coder::Client client(quick_config(srv.url()));
  auto coded = client.code_moment(full_request());
  CHECK(coded.record.video_id == "v1");
  CHECK(coded.record.t == 120);
  CHECK(coded.record.coder == ctml::Coder::Machine);
  CHECK(coded.record.values.at("formula") == 1);
  CHECK(coded.record.values.at("visual_complexity") == 3);
  CHECK(coded.record.values.size() == 15);
  REQUIRE(coded.attempts.size() == 1);
  CHECK(coded.attempts[0].http_status == 200);
  CHECK(coded.attempts[0].problem.empty());
  CHECK(coded.attempts[0].request_fnv1a != 0);
  CHECK(srv.hits.load() == 1);
}

TEST_CASE("an out-of-range rating triggers one explained retry then succeeds") {
  std::string second_request_body;
  MockServer srv([&](const httplib::Request& req, httplib::Response& res, int hit) {
    if (hit == 0) {
      ojson bad = base_values();
      bad["visual_complexity"] = 7;
      res.set_content(envelope(bad.dump()), "application/json");
    } else {
      second_request_body = req.body;
      res.set_content(envelope(base_values().dump()), "application/json");
    }
  });
  coder::Client client(quick_config(srv.url()));
  auto coded = client.code_moment(full_request());
  CHECK(coded.record.values.at("visual_complexity") == 3);
  REQUIRE(coded.attempts.size() == 2);
  CHECK(coded.attempts[0].problem.find("out of range") != std::string::npos);
  CHECK(coded.attempts[1].problem.empty());
  // the follow-up conversation carries the rejected reply and the reason
  CHECK(second_request_body.find("\"role\":\"assistant\"") != std::string::npos);
  CHECK(second_request_body.find("out of range") != std::string::npos);
  CHECK(srv.hits.load() == 2);
}

TEST_CASE("replies that never parse exhaust the budget into CodingFailed") {
  MockServer srv([](const httplib::Request&, httplib::Response& res, int) {
    res.set_content(envelope("I would rate this moment a solid seven."), "application/json");
  });
  coder::Client client(quick_config(srv.url()));  // budget 2 -> 3 attempts
  try {
    client.code_moment(full_request());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string what = e.what();
    CHECK(what.find("CodingFailed") != std::string::npos);
    CHECK(what.find("solid seven") != std::string::npos);
  }
  CHECK(srv.hits.load() == 3);
}

TEST_CASE("rate limits and server errors back off and then recover") {
  MockServer srv([](const httplib::Request&, httplib::Response& res, int hit) {
    if (hit == 0) {
      res.status = 429;
      res.set_content("slow down", "text/plain");
    } else if (hit == 1) {
      res.status = 503;
      res.set_content("warming up", "text/plain");
    } else {
      res.set_content(envelope(base_values().dump()), "application/json");
    }
  });
  coder::Client client(quick_config(srv.url()));
  auto coded = client.code_moment(full_request());
  REQUIRE(coded.attempts.size() == 3);
  CHECK(coded.attempts[0].http_status == 429);
  CHECK(coded.attempts[1].http_status == 503);
  CHECK(coded.attempts[2].http_status == 200);
}

TEST_CASE("a persistently failing endpoint reports transport exhaustion") {
  MockServer srv([](const httplib::Request&, httplib::Response& res, int) {
    res.status = 500;
    res.set_content("boom", "text/plain");
  });
  coder::Client client(quick_config(srv.url()));
  try {
    client.code_moment(full_request());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string what = e.what();
    CHECK(what.find("Transport") != std::string::npos);
    CHECK(what.find("3 attempts") != std::string::npos);
  }
  CHECK(srv.hits.load() == 3);
}

TEST_CASE("hard client errors fail fast without retries") {
  MockServer srv([](const httplib::Request&, httplib::Response& res, int) {
    res.status = 401;
    res.set_content("bad token", "text/plain");
  });
  coder::Client client(quick_config(srv.url()));
  try {
    client.code_moment(full_request());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("HTTP 401") != std::string::npos);
  }
  CHECK(srv.hits.load() == 1);
}

TEST_CASE("the bearer token rides in from the named environment variable") {
  std::string auth_seen;
  MockServer srv([&](const httplib::Request& req, httplib::Response& res, int) {
    auth_seen = req.get_header_value("Authorization");
    res.set_content(envelope(base_values().dump()), "application/json");
  });
  ::setenv("VIP_CODER_TEST_TOKEN", "sekrit", 1);
  EndpointConfig c = quick_config(srv.url());
  c.auth_env = "VIP_CODER_TEST_TOKEN";
  coder::Client client(c);
  client.code_moment(full_request());
  CHECK(auth_seen == "Bearer sekrit");
}

TEST_CASE("a body that is not a chat envelope is retried like any bad reply") {
  MockServer srv([](const httplib::Request&, httplib::Response& res, int hit) {
    if (hit == 0)
      res.set_content("<html>proxy error</html>", "text/html");
    else
      res.set_content(envelope(base_values().dump()), "application/json");
  });
  coder::Client client(quick_config(srv.url()));
  auto coded = client.code_moment(full_request());
  REQUIRE(coded.attempts.size() == 2);
  CHECK(coded.attempts[0].problem.find("envelope") != std::string::npos);
  CHECK(coded.record.values.size() == 15);
}

// -------------------------------------------------------------------- batch

TEST_CASE("batches keep input order, collect failures, and audit every exchange") {
  // moment i announces itself in the transcript; the server answers moment 2
  // with prose every time and delays early moments so completion order is
  // scrambled
  MockServer srv([](const httplib::Request& req, httplib::Response& res, int) {
    const bool doomed = req.body.find("moment-2") != std::string::npos;
    const bool slow = req.body.find("moment-0") != std::string::npos;
    if (slow) std::this_thread::sleep_for(std::chrono::milliseconds(30));
    if (doomed) {
      res.set_content(envelope("no structured output from me"), "application/json");
    } else {
      ojson v = base_values();
      v["visual_complexity"] = int(req.body.find("moment-4") != std::string::npos ? 5 : 2);
      res.set_content(envelope(v.dump()), "application/json");
    }
  });
  EndpointConfig c = quick_config(srv.url());
  c.max_concurrency = 3;
  c.retry_budget = 1;
  coder::Client client(c);

  std::vector<CodingRequest> reqs;
  for (int i = 0; i < 6; ++i) {
    auto r = full_request();
    r.video_id = "v" + std::to_string(i);
    r.t = 30 + i;
    r.transcript = "moment-" + std::to_string(i);
    if (i == 5) r.center_frame.reset();  // client-side payload failure
    reqs.push_back(std::move(r));
  }

  TempDir dir;
  auto audit = dir.path / "audit.jsonl";
  auto batch = coder::code_moments(client, reqs, audit);

  REQUIRE(batch.coded.size() == 4);
  CHECK(batch.coded[0].record.video_id == "v0");
  CHECK(batch.coded[1].record.video_id == "v1");
  CHECK(batch.coded[2].record.video_id == "v3");
  CHECK(batch.coded[3].record.video_id == "v4");
  CHECK(batch.coded[3].record.values.at("visual_complexity") == 5);

  REQUIRE(batch.failures.size() == 2);
  CHECK(batch.failures[0].index == 2);
  CHECK(batch.failures[0].message.find("CodingFailed") != std::string::npos);
  CHECK(batch.failures[1].index == 5);
  CHECK(batch.failures[1].message.find("formula") != std::string::npos);

  // audit is one line per request, in input order, with the exchanges
  std::vector<ojson> lines;
  io::for_each_line(audit, [&](std::size_t, std::string_view line) {
    lines.push_back(ojson::parse(line));
  });
  REQUIRE(lines.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(lines[i].at("video_id") == "v" + std::to_string(i));
    CHECK(lines[i].at("temperature") == 0.0);
    CHECK(lines[i].at("model") == "rater-1");
  }
  CHECK(lines[0].at("ok") == true);
  CHECK(lines[0].at("record").at("visual_complexity") == 2);
  CHECK(lines[2].at("ok") == false);
  CHECK(lines[2].at("attempts").size() == 2);  // budget 1 -> two exchanges
  CHECK(std::string(lines[2].at("error")).find("CodingFailed") != std::string::npos);
  CHECK(lines[5].at("ok") == false);
  CHECK(lines[5].at("attempts").size() == 0);  // failed before any exchange
}

// ---------------------------------------------------------------- agreement

namespace {

std::vector<ctml::CTMLRecord> ratings(ctml::Coder who, int n,
                                      const std::function<int(const ctml::FeatureSpec&, int)>& rate) {
  std::vector<ctml::CTMLRecord> out;
  for (int i = 0; i < n; ++i) {
    ctml::CTMLRecord r;
    r.video_id = "v" + std::to_string(i / 50);
    r.t = 30 + 5 * (i % 50);
    r.coder = who;
    for (const auto& f : ctml::feature_table()) r.values[f.key] = rate(f, i);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

TEST_CASE("perfect machine agreement scores kappa one on every feature") {
  auto rate = [](const ctml::FeatureSpec& f, int i) {
    return f.type == ctml::FeatureType::Binary ? i % 2 : i % f.levels + 1;
  };
  auto rep = coder::agreement_vs_humans(ratings(ctml::Coder::Machine, 40, rate),
                                        ratings(ctml::Coder::Adjudicated, 40, rate));
  REQUIRE(rep.size() == 15);
  for (const auto& r : rep) {
    CHECK(r.n == 40);
    CHECK(r.kappa == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("coin-flip machine ratings hover near zero kappa") {
  Rng rng(2);
  auto human = [](const ctml::FeatureSpec& f, int i) {
    return f.type == ctml::FeatureType::Binary ? i % 2 : i % f.levels + 1;
  };
  auto coin = [&](const ctml::FeatureSpec& f, int) {
    return f.type == ctml::FeatureType::Binary ? int(rng.bernoulli(0.5))
                                               : 1 + int(rng.uniform_int(5));
  };
  auto rep = coder::agreement_vs_humans(ratings(ctml::Coder::Machine, 200, coin),
                                        ratings(ctml::Coder::Adjudicated, 200, human));
  for (const auto& r : rep) {
    CHECK(r.n == 200);
    CHECK(std::abs(r.kappa) <= 0.15);
  }
}

TEST_CASE("no shared moments is an empty join") {
  auto rate = [](const ctml::FeatureSpec& f, int) {
    return f.type == ctml::FeatureType::Binary ? 0 : 1;
  };
  auto machine = ratings(ctml::Coder::Machine, 10, rate);
  auto humans = ratings(ctml::Coder::Adjudicated, 10, rate);
  for (auto& r : humans) r.video_id += "x";
  try {
    coder::agreement_vs_humans(machine, humans);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("EmptyJoin") != std::string::npos);
  }
}
