#pragma once

// Tutor service: REST routes over fragments, catalogs, rule packs and
// sessions, backed by the document store. TutorService::handle is the whole
// API surface; HttpServer only adapts cpp-httplib requests onto it.

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

// JSON bodies sent as form-encoded (curl -d) up to 64 MiB.
#ifndef CPPHTTPLIB_FORM_URL_ENCODED_PAYLOAD_MAX_LENGTH
#define CPPHTTPLIB_FORM_URL_ENCODED_PAYLOAD_MAX_LENGTH (64 * 1024 * 1024)
#endif
#include <httplib.h>

#include "polyglot/engine.hpp"
#include "polyglot/fragment.hpp"
#include "polyglot/gamification.hpp"
#include "polyglot/ids.hpp"
#include "polyglot/planner.hpp"
#include "polyglot/store.hpp"

namespace polyglot::service {

using store::Collection;

inline int http_status(Errc c) {
  switch (c) {
    case Errc::MalformedDocument:
    case Errc::BadRequest:
      return 400;
    case Errc::Unauthorized:
      return 401;
    case Errc::NotFound:
    case Errc::UnknownNode:
      return 404;
    case Errc::VersionConflict:
    case Errc::ConcurrentSubmission:
    case Errc::SessionNotActive:
      return 409;
    case Errc::IoError:
      return 500;
    case Errc::SchemaViolation:
    case Errc::InvalidFragment:
    case Errc::SyntaxError:
    case Errc::UnknownVariable:
    case Errc::TypeMismatch:
    case Errc::UnknownBuiltin:
    case Errc::UnrefinedFragment:
    case Errc::CapabilityMismatch:
    case Errc::KindMismatch:
    case Errc::ShapeMismatch:
    case Errc::UncoverableGoal:
    case Errc::PrerequisiteCycle:
    case Errc::ChainTooLong:
    case Errc::DepthExceeded:
    case Errc::ResultInvalid:
    case Errc::NotAbsorbing:
    case Errc::UnsupportedModel:
      return 422;
  }
  return 500;
}

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
  std::string authorization;
};

struct Response {
  int status = 200;
  json body = json::object();
  std::string text() const { return io::dump(body); }
};

inline Response error_response(const Error& e) {
  const int status = http_status(e.code());
  return {status,
          {{"status", status}, {"code", std::string(e.code_name())}, {"message", e.what()}, {"detail", e.detail()}}};
}

struct ServiceConfig {
  std::filesystem::path data_dir = "data/store";
  int step_cap = engine::kDefaultStepCap;
  planner::RefinementLimits limits;
  std::optional<std::string> api_token;
};

class TutorService {
 public:
  explicit TutorService(ServiceConfig config, UlidGenerator::Clock clock = unix_millis)
      : config_(std::move(config)), store_(config_.data_dir), clock_(clock), ids_(clock) {}

  store::DocumentStore& store() { return store_; }
  const ServiceConfig& config() const { return config_; }

  // Runs while a submission holds its session lock (race tests park here).
  std::function<void(const std::string& session_id)> on_submission_locked;

  Response handle(const Request& req) {
    try {
      if (config_.api_token && req.authorization != "Bearer " + *config_.api_token) {
        throw Error(Errc::Unauthorized, "missing or invalid bearer token");
      }
      return route(req);
    } catch (const Error& e) {
      return error_response(e);
    } catch (const json::exception& e) {
      return error_response(Error(Errc::BadRequest, std::string("bad request body: ") + e.what()));
    }
  }

  Response handle(const std::string& method, const std::string& path, const std::string& body = "") {
    Request req{method, path, {}, body, config_.api_token ? "Bearer " + *config_.api_token : ""};
    if (auto q = path.find('?'); q != std::string::npos) {
      req.path = path.substr(0, q);
      std::string query = path.substr(q + 1);
      std::size_t start = 0;
      while (start <= query.size()) {
        const std::size_t amp = std::min(query.find('&', start), query.size());
        const std::string pair = query.substr(start, amp - start);
        if (const auto eq = pair.find('='); eq != std::string::npos) {
          req.query[pair.substr(0, eq)] = pair.substr(eq + 1);
        } else if (!pair.empty()) {
          req.query[pair] = "";
        }
        start = amp + 1;
      }
    }
    return handle(req);
  }

  // -------------------------------------------------------------------------
  // Fragments

  Response create_fragment(const std::string& body) {
    LearningFragment f = load_fragment(body);
    ValidationReport report = validate_fragment(f);
    if (!report.ok()) throw Error(Errc::InvalidFragment, "fragment failed validation", report_to_json(report));
    auto result = store_.persist(Collection::Fragments, f.id, f.version, serialize_fragment(f));
    return {result.created ? 201 : 200,
            {{"id", f.id}, {"version", f.version}, {"validation", report_to_json(report)}}};
  }

  Response list_fragments() {
    json out = json::array();
    for (const auto& doc : store_.list(Collection::Fragments)) {
      LearningFragment f = load_fragment(doc.body);
      out.push_back({{"id", f.id},
                     {"version", f.version},
                     {"title", f.title},
                     {"versions", store_.versions(Collection::Fragments, f.id)},
                     {"abstract", has_abstract_nodes(f)}});
    }
    return {200, {{"fragments", out}}};
  }

  Response get_fragment(const std::string& id, std::optional<int> version) {
    return {200, io::parse_document(store_.fetch(Collection::Fragments, id, version).body)};
  }

  // Body: empty (validate the stored fragment), a draft fragment document, or
  // {"condition": "<source>"} to check a single edge condition.
  Response validate(const std::string& id, const std::string& body, std::optional<int> version) {
    if (is_blank(body)) {
      LearningFragment f = load_fragment(store_.fetch(Collection::Fragments, id, version).body);
      return {200, report_body(f, validate_fragment(f))};
    }
    json doc = io::parse_document(body);
    if (doc.is_object() && doc.size() == 1 && doc.contains("condition")) return {200, check_condition(doc)};
    LearningFragment draft = io::fragment_from_json(doc);
    if (draft.id != id) {
      throw Error(Errc::BadRequest, "draft id '" + draft.id + "' does not match path id '" + id + "'",
                  {{"id", draft.id}, {"path_id", id}});
    }
    return {200, report_body(draft, validate_fragment(draft))};
  }

  Response negotiate(const std::string& id, const std::string& body, std::optional<int> version) {
    const json doc = io::parse_document(body);
    io::ObjectReader r(doc, "$");
    const ModalitySet caps = read_capabilities(r);
    r.finish();
    LearningFragment f = load_fragment(store_.fetch(Collection::Fragments, id, version).body);
    json report = engine::negotiation_to_json(engine::negotiate(caps, f));
    report["fragment"] = {{"id", f.id}, {"version", f.version}};
    return {200, report};
  }

  // -------------------------------------------------------------------------
  // Catalogs and planning

  Response create_catalog(const std::string& body) {
    const json doc = io::parse_document(body);
    io::ObjectReader r(doc, "$");
    const std::string id = r.string("id");
    const int version = static_cast<int>(r.optional_integer("version").value_or(1));
    const planner::FragmentCatalog catalog = planner::catalog_from_json(json{{"entries", r.raw("entries")}});
    r.finish();
    const json canonical = {{"id", id}, {"version", version}, {"entries", planner::catalog_to_json(catalog)}};
    auto result = store_.persist(Collection::Catalogs, id, version, io::dump(canonical));
    return {result.created ? 201 : 200,
            {{"id", id}, {"version", version}, {"entries", static_cast<int>(catalog.entries.size())}}};
  }

  Response list_collection(Collection c) {
    json out = json::array();
    for (const auto& doc : store_.list(c)) out.push_back(io::parse_document(doc.body));
    return {200, {{std::string(store::to_string(c)), out}}};
  }

  Response get_document(Collection c, const std::string& id, std::optional<int> version) {
    return {200, io::parse_document(store_.fetch(c, id, version).body)};
  }

  // Union of the latest version of every stored catalog; first occurrence of a ref wins.
  planner::FragmentCatalog union_catalog() {
    planner::FragmentCatalog out;
    std::set<FragmentRef> seen;
    for (const auto& doc : store_.list(Collection::Catalogs)) {
      for (auto& e : planner::catalog_from_json(io::parse_document(doc.body)).entries) {
        if (seen.insert(e.ref).second) out.entries.push_back(std::move(e));
      }
    }
    return out;
  }

  planner::FragmentResolver store_resolver() {
    return [this](const FragmentRef& ref) { return load_fragment(store_.fetch(Collection::Fragments, ref.id, ref.version).body); };
  }

  Response plan(const std::string& body) {
    const json doc = io::parse_document(body);
    io::ObjectReader r(doc, "$");
    const ConceptSet goal = r.string_set("goal", true);
    const ConceptSet known = r.string_set("known");
    AbstractConstraints constraints;
    if (r.has("constraints")) {
      const KindData parsed = io::kind_data_from_json(
          ActivityKind::Abstract, json{{"goal", json::array({"_"})}, {"constraints", r.raw("constraints")}}, "$");
      constraints = std::get<AbstractData>(parsed).constraints;
    } else {
      r.skip("constraints");
    }
    std::optional<ModalitySet> caps;
    if (r.has("capabilities")) {
      caps = read_capabilities(r);
    } else {
      r.skip("capabilities");
    }
    r.finish();
    const planner::Plan p =
        planner::plan_goal(goal, known, union_catalog(), constraints, caps, config_.limits.max_chain_length);
    return {200, planner::plan_to_json(p)};
  }

  // -------------------------------------------------------------------------
  // Rule packs

  Response create_rulepack(const std::string& body) {
    const gamification::RulePack pack = gamification::load_pack(body);
    auto result = store_.persist(Collection::Rulepacks, pack.id, 1, io::dump(gamification::pack_to_json(pack)));
    return {result.created ? 201 : 200, {{"id", pack.id}, {"rules", static_cast<int>(pack.rules.size())}}};
  }

  std::vector<gamification::RulePack> all_packs() {
    std::vector<gamification::RulePack> out;
    for (const auto& doc : store_.list(Collection::Rulepacks)) out.push_back(gamification::load_pack(doc.body));
    return out;
  }

  // -------------------------------------------------------------------------
  // Sessions

  struct SessionRecord {
    engine::Session session;
    LearningFragment fragment;  // refined snapshot the session runs on
    json refinement = json::array();
    std::vector<std::string> warnings;
  };

  Response create_session(const std::string& body) {
    const json doc = io::parse_document(body);
    io::ObjectReader r(doc, "$");
    const std::string fragment_id = r.string("fragment_id");
    const std::optional<long long> fragment_version = r.optional_integer("fragment_version");
    const std::string learner = r.string("learner_id");
    const ModalitySet caps = read_capabilities(r);
    r.finish();

    const LearningFragment source = load_fragment(
        store_.fetch(Collection::Fragments, fragment_id,
                     fragment_version ? std::optional<int>(static_cast<int>(*fragment_version)) : std::nullopt)
            .body);

    SessionRecord rec;
    rec.fragment = source;
    if (has_abstract_nodes(source)) {
      std::vector<planner::Splice> trace;
      rec.fragment = planner::refine(source, union_catalog(), store_resolver(), caps, config_.limits, &trace);
      for (const auto& s : trace) {
        rec.refinement.push_back({{"abstract_node", s.abstract_node},
                                  {"depth", s.depth},
                                  {"known", io::set_to_json(s.known)},
                                  {"plan", planner::plan_to_json(s.plan)}});
      }
    }
    planner::GamificationAttachment attachment = planner::attach_gamification(rec.fragment, all_packs());
    rec.warnings = attachment.warnings;

    const std::uint64_t now = clock_();
    rec.session = engine::start_session(rec.fragment, learner, caps,
                                        {ids_.next(), iso8601_utc(now), attachment.rules, config_.step_cap});
    persist_session(rec);

    json out = session_view(rec);
    json packs = json::array();
    for (const auto& p : attachment.packs) packs.push_back(p.id);
    out["rule_packs"] = packs;
    out["refinement"] = rec.refinement;
    out["warnings"] = rec.warnings;
    return {201, out};
  }

  Response get_session(const std::string& id) {
    SessionRecord rec = load_session(id);
    json out = engine::session_to_json(rec.session);
    out["current_activity"] = current_or_null(rec);
    return {200, out};
  }

  Response get_current(const std::string& id) {
    SessionRecord rec = load_session(id);
    return {200,
            {{"session", rec.session.id},
             {"status", std::string(engine::to_string(rec.session.status))},
             {"activity", current_or_null(rec)}}};
  }

  Response submit(const std::string& id, const std::string& body) {
    store::check_id(id);
    std::shared_ptr<std::mutex> mu = session_mutex(id);
    std::unique_lock lock(*mu, std::try_to_lock);
    if (!lock.owns_lock()) {
      throw Error(Errc::ConcurrentSubmission, "another submission for session '" + id + "' is in progress",
                  {{"session", id}});
    }
    if (on_submission_locked) on_submission_locked(id);

    const json doc = io::parse_document(body);
    io::ObjectReader r(doc, "$");
    const engine::Submission submission = engine::submission_from_json(r.raw("submission"));
    r.finish();

    SessionRecord rec = load_session(id);
    engine::StepResult step = engine::submit(rec.session, rec.fragment, submission);
    rec.session = std::move(step.session);
    persist_session(rec);

    json awards = json::array();
    for (const auto& a : step.awards) awards.push_back(gamification::award_to_json(a));
    return {200,
            {{"session", rec.session.id},
             {"outcome", engine::outcome_to_json(step.outcome)},
             {"next", engine::next_to_json(step.next)},
             {"awards", awards},
             {"gamification", gamification::state_to_json(rec.session.gamification)},
             {"status", std::string(engine::to_string(rec.session.status))},
             {"steps", rec.session.steps},
             {"current_activity", current_or_null(rec)}}};
  }

 private:
  static bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  }

  static std::optional<int> version_param(const Request& req) {
    auto it = req.query.find("version");
    if (it == req.query.end()) return std::nullopt;
    try {
      std::size_t used = 0;
      const int v = std::stoi(it->second, &used);
      if (used == it->second.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(Errc::BadRequest, "version must be an integer", {{"version", it->second}});
  }

  static ModalitySet read_capabilities(io::ObjectReader& r) {
    ModalitySet caps;
    for (const auto& m : r.strings("capabilities")) caps.insert(io::read_modality(m, r.at("capabilities")));
    return caps;
  }

  static json report_body(const LearningFragment& f, const ValidationReport& report) {
    json out = report_to_json(report);
    out["fragment"] = {{"id", f.id}, {"version", f.version}};
    return out;
  }

  static json check_condition(const json& doc) {
    if (!doc.at("condition").is_string()) io::schema_error("$.condition", "expected string");
    const std::string source = doc.at("condition").get<std::string>();
    try {
      condition::ExprPtr expr = condition::parse_condition(source);
      condition::check_types(*expr, condition::context_variables());
      return {{"ok", true}, {"printed", condition::print_condition(*expr)}};
    } catch (const Error& e) {
      if (e.code() == Errc::MalformedDocument || e.code() == Errc::SchemaViolation) throw;
      return {{"ok", false}, {"code", std::string(e.code_name())}, {"message", e.what()}, {"detail", e.detail()}};
    }
  }

  std::shared_ptr<std::mutex> session_mutex(const std::string& id) {
    std::lock_guard lock(registry_mu_);
    auto& slot = session_locks_[id];
    if (!slot) slot = std::make_shared<std::mutex>();
    return slot;
  }

  void persist_session(const SessionRecord& rec) {
    json warnings = rec.warnings;
    const json doc = {{"session", engine::session_to_json(rec.session)},
                      {"fragment", io::fragment_to_json(rec.fragment)},
                      {"refinement", rec.refinement},
                      {"warnings", warnings}};
    store_.persist(Collection::Sessions, rec.session.id, 1, io::dump(doc));
  }

  SessionRecord load_session(const std::string& id) {
    const json doc = io::parse_document(store_.fetch(Collection::Sessions, id, 1).body);
    SessionRecord rec;
    rec.session = engine::session_from_json(doc.at("session"));
    rec.fragment = io::fragment_from_json(doc.at("fragment"));
    rec.refinement = doc.at("refinement");
    rec.warnings = doc.at("warnings").get<std::vector<std::string>>();
    return rec;
  }

  static json current_or_null(const SessionRecord& rec) {
    if (rec.session.status != engine::SessionStatus::Active) return nullptr;
    return engine::rendered_to_json(engine::current_activity(rec.session, rec.fragment));
  }

  static json session_view(const SessionRecord& rec) {
    const auto& s = rec.session;
    return {{"id", s.id},
            {"learner_id", s.learner_id},
            {"fragment", {{"id", s.fragment.id}, {"version", s.fragment.version}}},
            {"refined_fragment", {{"id", rec.fragment.id}, {"nodes", rec.fragment.nodes.size()}}},
            {"status", std::string(engine::to_string(s.status))},
            {"created_at", s.created_at},
            {"current", s.current},
            {"current_activity", current_or_null(rec)},
            {"gamification", gamification::state_to_json(s.gamification)}};
  }

  Response route(const Request& req) {
    std::vector<std::string> seg;
    for (std::size_t start = 0; start < req.path.size();) {
      const std::size_t slash = std::min(req.path.find('/', start), req.path.size());
      if (slash > start) seg.push_back(req.path.substr(start, slash - start));
      start = slash + 1;
    }
    const std::string& m = req.method;
    const auto n = seg.size();
    const auto is = [&](std::size_t count, std::string_view first) { return n == count && seg[0] == first; };

    if (is(1, "fragments") && m == "POST") return create_fragment(req.body);
    if (is(1, "fragments") && m == "GET") return list_fragments();
    if (is(2, "fragments") && m == "GET") return get_fragment(seg[1], version_param(req));
    if (is(3, "fragments") && seg[2] == "validate" && m == "POST") return validate(seg[1], req.body, version_param(req));
    if (is(3, "fragments") && seg[2] == "negotiate" && m == "POST") {
      return negotiate(seg[1], req.body, version_param(req));
    }
    if (is(1, "catalogs") && m == "POST") return create_catalog(req.body);
    if (is(1, "catalogs") && m == "GET") return list_collection(Collection::Catalogs);
    if (is(2, "catalogs") && m == "GET") return get_document(Collection::Catalogs, seg[1], version_param(req));
    if (is(1, "plan") && m == "POST") return plan(req.body);
    if (is(1, "rulepacks") && m == "POST") return create_rulepack(req.body);
    if (is(1, "rulepacks") && m == "GET") return list_collection(Collection::Rulepacks);
    if (is(2, "rulepacks") && m == "GET") return get_document(Collection::Rulepacks, seg[1], std::nullopt);
    if (is(1, "sessions") && m == "POST") return create_session(req.body);
    if (is(2, "sessions") && m == "GET") return get_session(seg[1]);
    if (is(3, "sessions") && seg[2] == "current" && m == "GET") return get_current(seg[1]);
    if (is(3, "sessions") && seg[2] == "submissions" && m == "POST") return submit(seg[1], req.body);
    throw Error(Errc::NotFound, "no route for " + m + " " + req.path, {{"method", m}, {"path", req.path}});
  }

  ServiceConfig config_;
  store::DocumentStore store_;
  UlidGenerator::Clock clock_;
  UlidGenerator ids_;
  std::mutex registry_mu_;
  std::map<std::string, std::shared_ptr<std::mutex>> session_locks_;
};

// ---------------------------------------------------------------------------
// HTTP transport

class HttpServer {
 public:
  explicit HttpServer(TutorService& service) : service_(service) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      Request r{req.method, req.path, {}, req.body, req.get_header_value("Authorization")};
      // Query parameters from the target only, never from a form-encoded body.
      if (const auto q = req.target.find('?'); q != std::string::npos) {
        httplib::Params query;
        httplib::detail::parse_query_text(req.target.substr(q + 1), query);
        for (const auto& [k, v] : query) r.query.emplace(k, v);
      }
      const Response out = service_.handle(r);
      res.status = out.status;
      res.set_content(out.text(), "application/json; charset=utf-8");
    };
    server_.Get(".*", handler);
    server_.Post(".*", handler);
    server_.Put(".*", handler);
    server_.Delete(".*", handler);
    server_.Patch(".*", handler);
  }

  int bind_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  void wait_until_ready() { server_.wait_until_ready(); }
  void stop() { server_.stop(); }
  bool running() const { return server_.is_running(); }

 private:
  TutorService& service_;
  httplib::Server server_;
};

}  // namespace polyglot::service
