#pragma once

// Live HTTP harness and the recorded client script shared by the service
// suite and the acceptance runner.

#include <regex>
#include <thread>

#include "polyglot/service.hpp"
#include "support.hpp"

namespace testsupport {

using polyglot::service::HttpServer;
using polyglot::service::ServiceConfig;
using polyglot::service::TutorService;

inline ServiceConfig config_in(const std::filesystem::path& dir, std::optional<std::string> token = std::nullopt) {
  ServiceConfig c;
  c.data_dir = dir;
  c.api_token = std::move(token);
  return c;
}

inline json sub_json(const engine::Submission& s) { return {{"submission", engine::submission_to_json(s)}}; }

class LiveServer {
 public:
  explicit LiveServer(TutorService& svc) : http_(svc) {
    port_ = http_.bind_any_port();
    if (port_ <= 0) throw std::runtime_error("bind failed");
    thread_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
  }
  ~LiveServer() {
    http_.stop();
    thread_.join();
  }
  int port() const { return port_; }

 private:
  HttpServer http_;
  int port_ = 0;
  std::thread thread_;
};

struct Exchange {
  std::string method;
  std::string path;
  json body;
};

// Ids and timestamps vary across runs; everything else must not.
inline std::string normalize(std::string text, const std::string& session_id) {
  if (!session_id.empty()) {
    for (std::size_t at = text.find(session_id); at != std::string::npos; at = text.find(session_id, at)) {
      text.replace(at, session_id.size(), "<session-id>");
    }
  }
  static const std::regex stamp(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\.\d{3}Z)");
  return std::regex_replace(text, stamp, "<timestamp>");
}

inline json run_recorded_script(const std::optional<std::string>& token = std::nullopt) {
  TempDir dir;
  TutorService svc(config_in(dir.path(), token));
  LiveServer server(svc);
  httplib::Client client("127.0.0.1", server.port());
  httplib::Headers headers;
  if (token) headers.emplace("Authorization", "Bearer " + *token);

  std::string session_id;
  json log = json::array();
  auto send = [&](const std::string& method, const std::string& path, const std::string& body) {
    auto res = method == "GET" ? client.Get(path, headers) : client.Post(path, headers, body, "application/json");
    if (!res) throw std::runtime_error("request failed: " + httplib::to_string(res.error()));
    const json parsed = io::parse_document(res->body);
    if (session_id.empty() && path == "/sessions") session_id = parsed.at("id").get<std::string>();
    log.push_back({{"request", {{"method", method}, {"path", normalize(path, session_id)}}},
                   {"status", res->status},
                   {"content_type", res->get_header_value("Content-Type")},
                   {"body", io::parse_document(normalize(res->body, session_id))}});
    return parsed;
  };

  send("POST", "/fragments", fixture_text());
  send("POST", "/fragments/stats-avg-median/validate", "");
  send("POST", "/rulepacks", read_text(config_path("reference-pack.json")));
  send("POST", "/sessions",
       io::dump({{"fragment_id", "stats-avg-median"}, {"learner_id", "ada"}, {"capabilities", {"text", "code"}}}));
  for (const auto& s : script_all_correct()) {
    send("POST", "/sessions/" + session_id + "/submissions", io::dump(sub_json(s)));
  }
  send("GET", "/sessions/" + session_id, "");
  send("GET", "/fragments/stats-avg-median?version=1", "");
  return log;
}

}  // namespace testsupport
