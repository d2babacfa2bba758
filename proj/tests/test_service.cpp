#include <gtest/gtest.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <future>
#include <random>
#include <regex>
#include <thread>

#include "polyglot/service.hpp"
#include "service_support.hpp"

using namespace polyglot;
using namespace polyglot::service;
using namespace testsupport;

namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kNow = 1792108800000ULL;  // 2026-10-16T00:00:00Z

struct Harness {
  TempDir dir;
  TutorService service;

  explicit Harness(std::optional<std::string> token = std::nullopt, int step_cap = engine::kDefaultStepCap)
      : service(ServiceConfig{dir.path() / "store", step_cap, {}, std::move(token)}, [] { return kNow; }) {}

  Response call(const std::string& method, const std::string& path, const std::string& body = "") {
    return service.handle(method, path, body);
  }
  Response post(const std::string& path, const json& body) { return call("POST", path, io::dump(body)); }

  std::string start(const ModalitySet& caps = {Modality::Text, Modality::Code},
                    const std::string& fragment = "stats-avg-median") {
    json c = json::array();
    for (auto m : caps) c.push_back(std::string(to_string(m)));
    Response r = post("/sessions", {{"fragment_id", fragment}, {"learner_id", "ada"}, {"capabilities", c}});
    if (r.status != 201) throw std::runtime_error("session create failed: " + r.text());
    return r.body.at("id").get<std::string>();
  }
};

void expect_error(const Response& r, int status, const std::string& code) {
  EXPECT_EQ(r.status, status) << r.text();
  EXPECT_EQ(r.body.value("code", ""), code) << r.text();
  EXPECT_EQ(r.body.value("status", 0), status);
  EXPECT_TRUE(r.body.contains("message"));
  EXPECT_TRUE(r.body.contains("detail"));
}

void load_catalog(Harness& h) {
  for (const char* name : {"median-basics", "median-recap", "median-code"}) {
    ASSERT_EQ(h.call("POST", "/fragments", read_text(data_path(std::string("catalog/") + name + ".json"))).status, 201);
  }
  ASSERT_EQ(h.call("POST", "/catalogs", read_text(data_path("catalog/catalog.json"))).status, 201);
}

}  // namespace

// ---------------------------------------------------------------------------
// Status table

TEST(ServiceErrors, EveryCodeHasOneStatusAndName) {
  std::set<std::string> names;
  for (int i = 0; i <= static_cast<int>(Errc::IoError); ++i) {
    const auto c = static_cast<Errc>(i);
    const int status = http_status(c);
    EXPECT_TRUE(status == 400 || status == 401 || status == 404 || status == 409 || status == 422 || status == 500);
    EXPECT_TRUE(names.insert(std::string(errc_name(c))).second) << errc_name(c);
  }
  EXPECT_EQ(http_status(Errc::ConcurrentSubmission), 409);
  EXPECT_EQ(http_status(Errc::KindMismatch), 422);
  EXPECT_EQ(http_status(Errc::NotFound), 404);
}

// ---------------------------------------------------------------------------
// Fragments

TEST(ServiceFragments, CreateListGet) {
  Harness h;
  Response created = h.call("POST", "/fragments", fixture_text());
  EXPECT_EQ(created.status, 201);
  EXPECT_EQ(created.body["id"], "stats-avg-median");
  EXPECT_EQ(created.body["version"], 1);
  EXPECT_EQ(created.body["validation"]["ok"], true);

  // Same bytes again: idempotent.
  EXPECT_EQ(h.call("POST", "/fragments", fixture_text()).status, 200);

  Response list = h.call("GET", "/fragments");
  ASSERT_EQ(list.status, 200);
  ASSERT_EQ(list.body["fragments"].size(), 1u);
  EXPECT_EQ(list.body["fragments"][0]["versions"], json::array({1}));
  EXPECT_EQ(list.body["fragments"][0]["abstract"], false);

  Response got = h.call("GET", "/fragments/stats-avg-median");
  ASSERT_EQ(got.status, 200);
  EXPECT_EQ(got.text(), serialize_fragment(fixture()));
  EXPECT_EQ(h.call("GET", "/fragments/stats-avg-median?version=1").text(), got.text());
}

TEST(ServiceFragments, NewVersionAndConflict) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  json doc = io::parse_document(fixture_text());
  doc["title"] = "changed";
  expect_error(h.post("/fragments", doc), 409, "VERSION_CONFLICT");
  doc["version"] = 2;
  EXPECT_EQ(h.post("/fragments", doc).status, 201);
  EXPECT_EQ(h.call("GET", "/fragments/stats-avg-median").body["title"], "changed");
  EXPECT_NE(h.call("GET", "/fragments/stats-avg-median?version=1").body["title"], "changed");
  EXPECT_EQ(h.call("GET", "/fragments").body["fragments"][0]["versions"], json::array({1, 2}));
}

TEST(ServiceFragments, RejectsBadDocuments) {
  Harness h;
  expect_error(h.call("POST", "/fragments", "{not json"), 400, "MALFORMED_DOCUMENT");
  expect_error(h.post("/fragments", {{"id", "x"}}), 422, "SCHEMA_VIOLATION");

  json doc = io::parse_document(fixture_text());
  doc["edges"][0]["target"] = "X9";
  Response r = h.post("/fragments", doc);
  expect_error(r, 422, "INVALID_FRAGMENT");
  EXPECT_EQ(r.body["detail"]["errors"][0]["code"], "DANGLING_EDGE");
  expect_error(h.call("GET", "/fragments/stats-avg-median"), 404, "NOT_FOUND");
}

TEST(ServiceFragments, LookupErrors) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  expect_error(h.call("GET", "/fragments/stats-avg-median?version=7"), 404, "NOT_FOUND");
  expect_error(h.call("GET", "/fragments/stats-avg-median?version=one"), 400, "BAD_REQUEST");
  expect_error(h.call("GET", "/fragments/..hidden"), 400, "BAD_REQUEST");
  expect_error(h.call("DELETE", "/fragments/stats-avg-median"), 404, "NOT_FOUND");
  expect_error(h.call("GET", "/nowhere"), 404, "NOT_FOUND");
}

TEST(ServiceFragments, UiMetadataSurvivesStorage) {
  Harness h;
  json doc = io::parse_document(fixture_text());
  doc["ui_metadata"] = {{"layout", {{"L1", {{"x", 40}, {"y", 80}}}, {"Q1", {{"x", 200}, {"y", 80}}}}}};
  ASSERT_EQ(h.post("/fragments", doc).status, 201);
  Response got = h.call("GET", "/fragments/stats-avg-median");
  EXPECT_EQ(got.body["ui_metadata"], doc["ui_metadata"]);
  // Save, reload, save: identical bytes.
  EXPECT_EQ(h.call("POST", "/fragments", got.text()).status, 200);
  EXPECT_EQ(h.call("GET", "/fragments/stats-avg-median").text(), got.text());
  EXPECT_EQ(h.call("POST", "/fragments/stats-avg-median/validate").body["ok"], true);
}

TEST(ServiceFragments, WriteFailureIsIoError) {
  Harness h;
  h.service.store().set_fault_hook([](store::WritePhase p, const fs::path&) {
    if (p == store::WritePhase::PartialWrite) throw Error(Errc::IoError, "disk full");
  });
  expect_error(h.call("POST", "/fragments", fixture_text()), 500, "IO_ERROR");
  h.service.store().set_fault_hook(nullptr);
  expect_error(h.call("GET", "/fragments/stats-avg-median"), 404, "NOT_FOUND");
}

// ---------------------------------------------------------------------------
// Validate endpoint

TEST(ServiceValidate, StoredFragment) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  Response r = h.call("POST", "/fragments/stats-avg-median/validate");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["ok"], true);
  EXPECT_EQ(r.body["errors"], json::array());
  EXPECT_EQ(r.body["warnings"], json::array());
  EXPECT_EQ(r.body["fragment"]["version"], 1);
  expect_error(h.call("POST", "/fragments/missing/validate"), 404, "NOT_FOUND");
}

TEST(ServiceValidate, DraftReportsPerElement) {
  Harness h;
  json doc = io::parse_document(fixture_text());
  doc["edges"][3]["condition"] = {{"expr", "score >"}};
  Response r = h.post("/fragments/stats-avg-median/validate", doc);
  ASSERT_EQ(r.status, 200) << r.text();
  EXPECT_EQ(r.body["ok"], false);
  ASSERT_EQ(r.body["errors"].size(), 1u);
  EXPECT_EQ(r.body["errors"][0]["element"], doc["edges"][3]["id"]);
  // Drafts are not stored.
  expect_error(h.call("GET", "/fragments/stats-avg-median"), 404, "NOT_FOUND");
  expect_error(h.post("/fragments/other-id/validate", doc), 400, "BAD_REQUEST");
}

TEST(ServiceValidate, SingleCondition) {
  Harness h;
  Response ok = h.post("/fragments/any/validate", {{"condition", "label == \"average_value\""}});
  ASSERT_EQ(ok.status, 200);
  EXPECT_EQ(ok.body["ok"], true);
  EXPECT_EQ(ok.body["printed"], "label == \"average_value\"");

  Response bad = h.post("/fragments/any/validate", {{"condition", "score >"}});
  ASSERT_EQ(bad.status, 200);
  EXPECT_EQ(bad.body["ok"], false);
  EXPECT_EQ(bad.body["code"], "SYNTAX_ERROR");
  EXPECT_EQ(bad.body["detail"]["position"], 8);

  EXPECT_EQ(h.post("/fragments/any/validate", {{"condition", "grade > 1"}}).body["code"], "UNKNOWN_VARIABLE");
  EXPECT_EQ(h.post("/fragments/any/validate", {{"condition", "passed < 1"}}).body["code"], "TYPE_MISMATCH");
  expect_error(h.post("/fragments/any/validate", {{"condition", 3}}), 422, "SCHEMA_VIOLATION");
}

// ---------------------------------------------------------------------------
// Negotiation

TEST(ServiceNegotiate, AudioOnlyLosesCodingNodes) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  Response r = h.post("/fragments/stats-avg-median/negotiate", json::object({{"capabilities", json::array({"audio"})}}));
  ASSERT_EQ(r.status, 200) << r.text();
  EXPECT_EQ(r.body["satisfiable"], false);
  EXPECT_EQ(r.body["unsatisfiable"], json::array({"C1", "C2"}));
  EXPECT_EQ(r.body["nodes"]["C1"]["missing"], json::array({"code"}));
  EXPECT_EQ(r.body["nodes"]["L1"]["modality"], "audio");

  Response all = h.post("/fragments/stats-avg-median/negotiate", json::object({{"capabilities", {"text", "audio", "rich", "code"}}}));
  EXPECT_EQ(all.body["satisfiable"], true);
  EXPECT_EQ(all.body["unsatisfiable"], json::array());

  Response none = h.post("/fragments/stats-avg-median/negotiate", json::object({{"capabilities", json::array()}}));
  EXPECT_EQ(none.body["unsatisfiable"].size(), fixture().nodes.size());
  expect_error(h.post("/fragments/stats-avg-median/negotiate", {{"capabilities", json::array({"smell"})}}), 422, "SCHEMA_VIOLATION");
}

// ---------------------------------------------------------------------------
// Catalogs, planning, rule packs

TEST(ServiceCatalogs, StoreListAndPlan) {
  Harness h;
  load_catalog(h);
  Response list = h.call("GET", "/catalogs");
  ASSERT_EQ(list.body["catalogs"].size(), 1u);
  EXPECT_EQ(list.body["catalogs"][0]["entries"].size(), 3u);
  EXPECT_EQ(h.call("GET", "/catalogs/stats").body["id"], "stats");
  expect_error(h.call("GET", "/catalogs/other"), 404, "NOT_FOUND");

  Response p = h.post("/plan", {{"goal", json::array({"median"})}});
  ASSERT_EQ(p.status, 200) << p.text();
  ASSERT_EQ(p.body["fragments"].size(), 1u);
  EXPECT_EQ(p.body["fragments"][0]["id"], "median-basics");

  // text-only frontends cannot take the coding entry; the lesson recap still qualifies.
  Response text = h.post("/plan", {{"goal", json::array({"median"})},
                                    {"capabilities", json::array({"text"})},
                                    {"constraints", {{"max_nodes", 2}, {"allowed_kinds", nullptr}, {"required_modality", nullptr}}}});
  ASSERT_EQ(text.status, 200) << text.text();
  EXPECT_EQ(text.body["fragments"], json::array({{{"id", "median-recap"}, {"version", 1}}}));

  expect_error(h.post("/plan", {{"goal", json::array({"quantiles"})}}), 422, "UNCOVERABLE_GOAL");
  expect_error(h.post("/plan", {{"goal", json::array()}}), 400, "BAD_REQUEST");
  expect_error(h.post("/plan", {{"goal", json::array({"median"})}, {"extra", 1}}), 422, "SCHEMA_VIOLATION");
}

TEST(ServiceCatalogs, PlannerErrorsSurface) {
  Harness h;
  const json entry = {{"id", "a"}, {"version", 1}, {"provides", json::array({"x"})}, {"requires", json::array({"y"})}, {"cost", 1.0},
                      {"kinds_present", json::array({"lesson"})}, {"modalities_required", json::array()}, {"node_count", 1},
                      {"gamification_tags", json::array()}};
  json other = entry;
  other["id"] = "b";
  other["provides"] = {"y"};
  other["requires"] = {"x"};
  ASSERT_EQ(h.post("/catalogs", {{"id", "cyc"}, {"entries", {entry, other}}}).status, 201);
  expect_error(h.post("/plan", {{"goal", json::array({"x"})}}), 422, "PREREQUISITE_CYCLE");
  expect_error(h.post("/catalogs", {{"id", "cyc"}, {"entries", {entry}}}), 409, "VERSION_CONFLICT");
}

TEST(ServiceRulepacks, StoreAndList) {
  Harness h;
  const std::string pack = read_text(config_path("reference-pack.json"));
  Response r = h.call("POST", "/rulepacks", pack);
  EXPECT_EQ(r.status, 201);
  EXPECT_EQ(r.body["rules"], 5);
  EXPECT_EQ(h.call("POST", "/rulepacks", pack).status, 200);
  EXPECT_EQ(h.call("GET", "/rulepacks/reference").text(), pack);
  EXPECT_EQ(h.call("GET", "/rulepacks").body["rulepacks"].size(), 1u);
  expect_error(h.call("POST", "/rulepacks", R"({"id": "p", "applies_to": [], "rules": [{"id": "r"}]})"), 422,
               "SCHEMA_VIOLATION");
}

// ---------------------------------------------------------------------------
// Sessions

TEST(ServiceSessions, CreateStartsAtEntry) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  h.call("POST", "/rulepacks", read_text(config_path("reference-pack.json")));
  Response r = h.post("/sessions", {{"fragment_id", "stats-avg-median"}, {"learner_id", "ada"}, {"capabilities", {"text", "code"}}});
  ASSERT_EQ(r.status, 201) << r.text();
  EXPECT_EQ(r.body["current"], "L1");
  EXPECT_EQ(r.body["status"], "active");
  EXPECT_EQ(r.body["created_at"], "2026-10-16T00:00:00.000Z");
  EXPECT_EQ(r.body["rule_packs"], json::array({"reference"}));
  EXPECT_EQ(r.body["current_activity"]["node"], "L1");
  EXPECT_EQ(r.body["current_activity"]["modality"], "text");
  EXPECT_EQ(r.body["id"].get<std::string>().size(), 26u);

  const std::string id = r.body["id"];
  Response got = h.call("GET", "/sessions/" + id);
  EXPECT_EQ(got.body["current"], "L1");
  EXPECT_EQ(got.body["steps"], 0);
  Response cur = h.call("GET", "/sessions/" + id + "/current");
  EXPECT_EQ(cur.body["activity"]["node"], "L1");
}

TEST(ServiceSessions, CreateErrors) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  Response audio = h.post("/sessions", {{"fragment_id", "stats-avg-median"}, {"learner_id", "a"}, {"capabilities", json::array({"audio"})}});
  expect_error(audio, 422, "CAPABILITY_MISMATCH");
  EXPECT_EQ(audio.body["detail"]["nodes"]["C1"], json::array({"code"}));
  expect_error(h.post("/sessions", {{"fragment_id", "nope"}, {"learner_id", "a"}, {"capabilities", json::array({"text"})}}), 404,
               "NOT_FOUND");
  expect_error(h.post("/sessions", {{"fragment_id", "stats-avg-median"}, {"capabilities", json::array({"text"})}}), 422,
               "SCHEMA_VIOLATION");
  expect_error(h.call("GET", "/sessions/01ARZ3NDEKTSV4RRFFQ69G5FAV"), 404, "NOT_FOUND");
  expect_error(h.call("POST", "/sessions/../x/submissions", "{}"), 404, "NOT_FOUND");
  expect_error(h.call("POST", "/sessions/.x/submissions", io::dump(sub_json(ack()))), 400, "BAD_REQUEST");
}

TEST(ServiceSessions, UnknownNodeInStoredSession) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  const std::string id = h.start();
  auto doc = io::parse_document(h.service.store().fetch(store::Collection::Sessions, id).body);
  doc["session"]["current"] = "GONE";
  h.service.store().persist(store::Collection::Sessions, id, 1, io::dump(doc));
  expect_error(h.call("GET", "/sessions/" + id + "/current"), 404, "UNKNOWN_NODE");
}

TEST(ServiceSessions, AllCorrectRunCompletes) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  h.call("POST", "/rulepacks", read_text(config_path("reference-pack.json")));
  const std::string id = h.start();
  std::vector<std::string> nodes;
  Response last;
  for (const auto& s : script_all_correct()) {
    nodes.push_back(h.call("GET", "/sessions/" + id + "/current").body["activity"]["node"]);
    last = h.post("/sessions/" + id + "/submissions", sub_json(s));
    ASSERT_EQ(last.status, 200) << last.text();
  }
  EXPECT_EQ(nodes, (std::vector<std::string>{"L1", "Q1", "L2", "Q2", "M", "C1", "C2"}));
  EXPECT_EQ(last.body["status"], "completed");
  EXPECT_EQ(last.body["next"]["kind"], "completed");
  EXPECT_EQ(last.body["current_activity"], nullptr);
  EXPECT_EQ(last.body["gamification"]["points"], 186);
  EXPECT_EQ(last.body["gamification"]["badges"], json::array({"finisher", "on-a-roll"}));
  EXPECT_EQ(last.body["steps"], 7);

  expect_error(h.post("/sessions/" + id + "/submissions", sub_json(ack())), 409, "SESSION_NOT_ACTIVE");
  Response got = h.call("GET", "/sessions/" + id);
  EXPECT_EQ(got.body["transcript"].size(), 7u);
  EXPECT_EQ(got.body["current_activity"], nullptr);
}

TEST(ServiceSessions, SubmissionErrorsLeaveSessionUntouched) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  const std::string id = h.start();
  const std::string before = h.service.store().fetch(store::Collection::Sessions, id).body;
  expect_error(h.post("/sessions/" + id + "/submissions", sub_json(answer("4"))), 422, "KIND_MISMATCH");
  expect_error(h.post("/sessions/" + id + "/submissions", json{{"submission", {{"kind", "lesson"}}}, {"x", 1}}), 422,
               "SCHEMA_VIOLATION");
  expect_error(h.call("POST", "/sessions/" + id + "/submissions", "[1,"), 400, "MALFORMED_DOCUMENT");
  expect_error(h.post("/sessions/" + id + "/submissions", json::array({1})), 422, "SCHEMA_VIOLATION");
  EXPECT_EQ(h.service.store().fetch(store::Collection::Sessions, id).body, before);

  h.post("/sessions/" + id + "/submissions", sub_json(ack()));
  expect_error(h.post("/sessions/" + id + "/submissions", sub_json(choices({0}))), 422, "KIND_MISMATCH");
}

TEST(ServiceSessions, QuizShapeMismatch) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  const std::string id = h.start();
  for (const auto& s : {ack(), answer("5"), ack()}) ASSERT_EQ(h.post("/sessions/" + id + "/submissions", sub_json(s)).status, 200);
  EXPECT_EQ(h.call("GET", "/sessions/" + id + "/current").body["activity"]["node"], "Z1");
  expect_error(h.post("/sessions/" + id + "/submissions", sub_json(choices({0}))), 422, "SHAPE_MISMATCH");
}

TEST(ServiceSessions, StepCapFailsSession) {
  Harness h(std::nullopt, 3);
  h.call("POST", "/fragments", fixture_text());
  const std::string id = h.start();
  Response r;
  for (int i = 0; i < 3; ++i) r = h.post("/sessions/" + id + "/submissions", sub_json(i == 1 ? answer("4") : ack()));
  EXPECT_EQ(r.body["status"], "failed");
  EXPECT_EQ(r.body["next"]["reason"], "step_cap_exceeded");
}

TEST(ServiceSessions, AbstractFragmentIsRefinedAtCreation) {
  Harness h;
  load_catalog(h);
  ASSERT_EQ(h.call("POST", "/fragments", read_text(data_path("fixtures/stats-avg-median-abstract.json"))).status, 201);
  for (const auto& f : h.call("GET", "/fragments").body["fragments"]) {
    EXPECT_EQ(f["abstract"], f["id"] == "stats-avg-median-abstract") << f;
  }

  Response r = h.post("/sessions",
                      {{"fragment_id", "stats-avg-median-abstract"}, {"learner_id", "b"}, {"capabilities", {"text", "code"}}});
  ASSERT_EQ(r.status, 201) << r.text();
  ASSERT_EQ(r.body["refinement"].size(), 1u);
  EXPECT_EQ(r.body["refinement"][0]["abstract_node"], "A");
  EXPECT_EQ(r.body["refinement"][0]["plan"]["fragments"][0]["id"], "median-basics");
  EXPECT_EQ(r.body["refined_fragment"]["nodes"], 12);

  // The all-correct run goes through the spliced median lesson.
  const std::string id = r.body["id"];
  std::vector<std::string> nodes;
  Response last;
  for (const auto& s : script_all_correct()) {
    nodes.push_back(h.call("GET", "/sessions/" + id + "/current").body["activity"]["node"]);
    last = h.post("/sessions/" + id + "/submissions", sub_json(s));
  }
  EXPECT_EQ(nodes, (std::vector<std::string>{"L1", "Q1", "A.0.L2", "A.0.Q2", "A.0.M", "C1", "C2"}));
  EXPECT_EQ(last.body["status"], "completed");

  // Without a catalog the goal cannot be covered.
  Harness bare;
  bare.call("POST", "/fragments", read_text(data_path("fixtures/stats-avg-median-abstract.json")));
  expect_error(bare.post("/sessions", {{"fragment_id", "stats-avg-median-abstract"},
                                       {"learner_id", "b"},
                                       {"capabilities", {"text", "code"}}}),
               422, "UNCOVERABLE_GOAL");
}

TEST(ServiceSessions, RefinementDepthLimit) {
  TempDir dir;
  planner::RefinementLimits limits;
  limits.max_depth = 1;
  TutorService svc(ServiceConfig{dir.path(), engine::kDefaultStepCap, limits, std::nullopt}, [] { return kNow; });
  // The only catalog entry for "median" is itself abstract, so refinement needs two levels.
  LearningFragment nested = load_fragment(read_text(data_path("fixtures/stats-avg-median-abstract.json")));
  nested.id = "median-nested";
  nested.provides = {"median"};
  svc.handle("POST", "/fragments", serialize_fragment(nested));
  svc.handle("POST", "/catalogs",
             io::dump({{"id", "nested"}, {"entries", json::array({planner::entry_to_json(planner::catalog_entry_for(nested))})}}));
  svc.handle("POST", "/fragments", read_text(data_path("fixtures/stats-avg-median-abstract.json")));
  const std::string body =
      io::dump({{"fragment_id", "stats-avg-median-abstract"}, {"learner_id", "b"}, {"capabilities", {"text", "code"}}});
  expect_error(svc.handle("POST", "/sessions", body), 422, "DEPTH_EXCEEDED");

  limits.max_depth = 0;
  TempDir other;
  TutorService zero(ServiceConfig{other.path(), engine::kDefaultStepCap, limits, std::nullopt});
  zero.handle("POST", "/fragments", read_text(data_path("fixtures/stats-avg-median-abstract.json")));
  expect_error(zero.handle("POST", "/sessions", body), 400, "BAD_REQUEST");
}

// ---------------------------------------------------------------------------
// Auth

TEST(ServiceAuth, BearerTokenRequired) {
  Harness h("s3cret");
  Request req{"GET", "/fragments", {}, "", ""};
  expect_error(h.service.handle(req), 401, "UNAUTHORIZED");
  req.authorization = "Bearer wrong";
  expect_error(h.service.handle(req), 401, "UNAUTHORIZED");
  req.authorization = "Bearer s3cret";
  EXPECT_EQ(h.service.handle(req).status, 200);
}

// ---------------------------------------------------------------------------
// Races

// The first submission parks inside the session lock; a second arrives and
// must be turned away. Exactly one 409, and the session advanced once.
TEST(ServiceRace, ParkedSubmissionRejectsSecond) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  const std::string id = h.start();

  std::promise<void> parked, release;
  std::shared_future<void> release_f = release.get_future().share();
  std::atomic<int> entered{0};
  h.service.on_submission_locked = [&](const std::string&) {
    if (entered++ == 0) {
      parked.set_value();
      release_f.wait();
    }
  };
  auto first = std::async(std::launch::async, [&] { return h.post("/sessions/" + id + "/submissions", sub_json(ack())); });
  parked.get_future().wait();
  Response second = h.post("/sessions/" + id + "/submissions", sub_json(ack()));
  release.set_value();
  Response a = first.get();

  EXPECT_EQ(a.status, 200);
  expect_error(second, 409, "CONCURRENT_SUBMISSION");
  EXPECT_EQ(second.body["detail"]["session"], id);
  EXPECT_EQ(h.call("GET", "/sessions/" + id).body["steps"], 1);
  // The lock is released afterwards.
  EXPECT_EQ(h.post("/sessions/" + id + "/submissions", sub_json(answer("4"))).status, 200);
}

// Unsynchronised burst of lesson acks at L1: one wins, the rest are either
// turned away while it runs (409) or arrive after it and hit Q1 (422).
TEST(ServiceRace, BurstAccountsForEveryRequest) {
  Harness h;
  h.call("POST", "/fragments", fixture_text());
  for (int round = 0; round < 20; ++round) {
    const std::string id = h.start();
    std::atomic<bool> go{false};
    std::vector<std::future<int>> out;
    for (int t = 0; t < 6; ++t) {
      out.push_back(std::async(std::launch::async, [&] {
        while (!go) std::this_thread::yield();
        return h.post("/sessions/" + id + "/submissions", sub_json(ack())).status;
      }));
    }
    go = true;
    int ok = 0, conflict = 0, late = 0;
    for (auto& f : out) {
      const int s = f.get();
      ok += s == 200;
      conflict += s == 409;
      late += s == 422;
    }
    ASSERT_EQ(ok, 1);
    ASSERT_EQ(ok + conflict + late, 6);
    const json session = h.call("GET", "/sessions/" + id).body;
    ASSERT_EQ(session["steps"], 1);
    ASSERT_EQ(session["transcript"].size(), 1u);
  }
}

// ---------------------------------------------------------------------------
// HTTP transport


TEST(ServiceHttp, RecordedScriptReplaysIdentically) {
  const json first = run_recorded_script();
  const json second = run_recorded_script();
  EXPECT_EQ(io::dump(first), io::dump(second));

  ASSERT_EQ(first.size(), 13u);
  EXPECT_EQ(first[0]["status"], 201);
  EXPECT_EQ(first[1]["body"]["ok"], true);
  EXPECT_EQ(first[3]["status"], 201);
  for (int i = 4; i < 11; ++i) EXPECT_EQ(first[i]["status"], 200) << i;
  EXPECT_EQ(first[10]["body"]["status"], "completed");
  EXPECT_EQ(first[11]["body"]["status"], "completed");
  EXPECT_EQ(first[0]["content_type"], "application/json; charset=utf-8");

  const fs::path golden = data_path("golden/http-script.json");
  if (std::getenv("POLYGLOT_UPDATE_GOLDEN")) {
    std::ofstream(golden, std::ios::binary) << io::dump(first);
    GTEST_SKIP() << "golden rewritten";
  }
  EXPECT_EQ(io::dump(first), read_text(golden));
}

TEST(ServiceHttp, TokenAndUnknownRoutesOverTheWire) {
  TempDir dir;
  TutorService svc(config_in(dir.path(), "tok"));
  LiveServer server(svc);
  httplib::Client client("127.0.0.1", server.port());
  auto res = client.Get("/fragments");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 401);
  EXPECT_EQ(io::parse_document(res->body)["code"], "UNAUTHORIZED");
  res = client.Get("/fragments", {{"Authorization", "Bearer tok"}});
  EXPECT_EQ(res->status, 200);
  res = client.Put("/fragments", {{"Authorization", "Bearer tok"}}, "{}", "application/json");
  EXPECT_EQ(res->status, 404);
  EXPECT_EQ(io::dump(json(run_recorded_script("tok").size())), io::dump(json(13)));
}

// curl -d labels the body form-encoded; it is still the JSON document.
TEST(ServiceHttp, FormEncodedBodiesAreJson) {
  TempDir dir;
  TutorService svc(config_in(dir.path()));
  LiveServer server(svc);
  httplib::Client client("127.0.0.1", server.port());
  const std::string form = "application/x-www-form-urlencoded";
  auto res = client.Post("/fragments", fixture_text(), form);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201) << res->body;
  res = client.Post("/fragments/stats-avg-median/validate", R"({"condition": "passed"})", form);
  EXPECT_EQ(io::parse_document(res->body)["printed"], "passed");
  // A body that looks like a query string does not become one.
  res = client.Post("/fragments/stats-avg-median/negotiate", "version=9", form);
  EXPECT_EQ(io::parse_document(res->body)["code"], "MALFORMED_DOCUMENT");
  res = client.Get("/fragments/stats-avg-median?version=1");
  EXPECT_EQ(res->status, 200);
  res = client.Get("/fragments/stats-avg-median?version=2");
  EXPECT_EQ(res->status, 404);
}

TEST(ServiceHttp, RacingSubmissionsOverTheWire) {
  TempDir dir;
  TutorService svc(config_in(dir.path()));
  svc.handle("POST", "/fragments", fixture_text());
  const json created = svc.handle("POST", "/sessions",
                                  io::dump({{"fragment_id", "stats-avg-median"},
                                            {"learner_id", "ada"},
                                            {"capabilities", {"text", "code"}}}))
                           .body;
  const std::string id = created.at("id");

  std::promise<void> parked, release;
  std::shared_future<void> release_f = release.get_future().share();
  std::atomic<int> entered{0};
  svc.on_submission_locked = [&](const std::string&) {
    if (entered++ == 0) {
      parked.set_value();
      release_f.wait();
    }
  };
  LiveServer server(svc);
  const std::string path = "/sessions/" + id + "/submissions";
  const std::string body = io::dump(sub_json(ack()));
  auto first = std::async(std::launch::async, [&] {
    httplib::Client c("127.0.0.1", server.port());
    return c.Post(path, body, "application/json")->status;
  });
  parked.get_future().wait();
  httplib::Client c("127.0.0.1", server.port());
  auto second = c.Post(path, body, "application/json");
  release.set_value();
  ASSERT_TRUE(second);
  const int statuses[] = {first.get(), second->status};
  EXPECT_EQ(std::count(std::begin(statuses), std::end(statuses), 409), 1);
  EXPECT_EQ(std::count(std::begin(statuses), std::end(statuses), 200), 1);
  EXPECT_EQ(io::parse_document(second->body)["code"], "CONCURRENT_SUBMISSION");
}

// Kill the server process mid-run; every stored document parses afterwards
// and sessions are consistent with their fragment snapshot.
TEST(ServiceCrash, KilledServiceLeavesParseableStore) {
  std::mt19937 rng(77);
  for (int round = 0; round < 15; ++round) {
    TempDir dir;
    {
      TutorService svc(config_in(dir.path()));
      svc.handle("POST", "/fragments", fixture_text());
    }
    const pid_t pid = ::fork();
    ASSERT_GE(pid, 0);
    if (pid == 0) {
      TutorService svc(config_in(dir.path()));
      for (int i = 0;; ++i) {
        const std::string id = svc.handle("POST", "/sessions",
                                          io::dump({{"fragment_id", "stats-avg-median"},
                                                    {"learner_id", "k" + std::to_string(i)},
                                                    {"capabilities", {"text", "code"}}}))
                                   .body.at("id");
        for (const auto& s : script_all_correct()) svc.handle("POST", "/sessions/" + id + "/submissions", io::dump(sub_json(s)));
      }
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5 + rng() % 60));
    ::kill(pid, SIGKILL);
    int status = 0;
    ::waitpid(pid, &status, 0);
    ASSERT_TRUE(WIFSIGNALED(status));

    TutorService after(config_in(dir.path()));
    const auto sessions = after.store().list(store::Collection::Sessions);
    ASSERT_FALSE(sessions.empty());
    for (const auto& doc : sessions) {
      Response r = after.handle("GET", "/sessions/" + doc.id);
      ASSERT_EQ(r.status, 200) << r.text();
      const int steps = r.body["steps"];
      ASSERT_EQ(r.body["transcript"].size(), static_cast<std::size_t>(steps));
      ASSERT_LE(steps, 7);
    }
    for (const auto& entry : fs::recursive_directory_iterator(dir.path())) {
      ASSERT_EQ(entry.path().filename().string().find(".tmp."), std::string::npos);
    }
  }
}
