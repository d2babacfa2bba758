#pragma once

// Per-session execution engine: capability negotiation, activity rendering,
// grading, edge selection and the session state machine.
//
// Lifecycle per submission: AwaitSubmission -> Validate (grader) -> Report
// (edge selection, transcript, gamification event). Completed and Failed are
// absorbing.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "polyglot/condition.hpp"
#include "polyglot/fragment.hpp"
#include "polyglot/gamification.hpp"

namespace polyglot::engine {

// ---------------------------------------------------------------------------
// Submissions and outcomes

struct LessonAck {
  bool operator==(const LessonAck&) const = default;
};
struct CloseEndedAnswer {
  std::string answer;
  bool operator==(const CloseEndedAnswer&) const = default;
};
struct QuizAnswer {
  std::vector<int> choices;
  bool operator==(const QuizAnswer&) const = default;
};
struct CodingAnswer {
  std::string source;
  bool operator==(const CodingAnswer&) const = default;
};

// Alternative order mirrors ActivityKind.
using Submission = std::variant<LessonAck, CloseEndedAnswer, QuizAnswer, CodingAnswer>;

inline ActivityKind submission_kind(const Submission& s) { return static_cast<ActivityKind>(s.index()); }

struct ValidationOutcome {
  bool passed = false;
  double score = 0.0;
  std::string answer;
  std::string label;
  std::string feedback;
  json detail = json::object();
  bool operator==(const ValidationOutcome&) const = default;
};

// ---------------------------------------------------------------------------
// Graders

inline ValidationOutcome grade_lesson(const LessonAck& = {}) {
  return {true, 1.0, "", "", "lesson acknowledged", json::object()};
}

inline ValidationOutcome grade_close_ended(const CloseEndedData& data, std::string_view answer) {
  ValidationOutcome out;
  out.answer = normalize_answer(answer);
  if (const auto* expected = std::get_if<std::string>(&data.expected)) {
    out.passed = answers_match(out.answer, normalize_answer(*expected));
  } else {
    const auto& numeric = std::get<NumericAnswer>(data.expected);
    auto value = parse_decimal(out.answer);
    out.passed = value && std::fabs(*value - numeric.value) <= numeric.tolerance;
  }
  if (out.passed) {
    out.score = 1.0;
    out.feedback = "correct";
    return out;
  }
  for (const auto& [distractor, label] : data.distractors) {
    if (answers_match(out.answer, normalize_answer(distractor))) {
      out.label = label;
      break;
    }
  }
  out.feedback = out.label.empty() ? "incorrect" : "incorrect (" + out.label + ")";
  if (!out.label.empty()) out.detail["distractor"] = out.label;
  return out;
}

inline ValidationOutcome grade_quiz(const QuizData& data, const std::vector<int>& choices) {
  if (choices.size() != data.items.size()) {
    throw Error(Errc::ShapeMismatch,
                "quiz expects " + std::to_string(data.items.size()) + " choices, got " + std::to_string(choices.size()),
                {{"expected", data.items.size()}, {"got", choices.size()}});
  }
  int correct = 0;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    const auto& item = data.items[i];
    if (choices[i] < 0 || choices[i] >= static_cast<int>(item.choices.size())) {
      throw Error(Errc::ShapeMismatch, "choice index out of range for quiz item " + std::to_string(i),
                  {{"item", i}, {"choice", choices[i]}});
    }
    if (choices[i] == item.correct) ++correct;
  }
  ValidationOutcome out;
  out.score = data.items.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.items.size());
  out.passed = out.score >= data.pass_threshold;
  out.feedback = std::to_string(correct) + "/" + std::to_string(data.items.size()) + " correct";
  out.detail = {{"correct", correct}, {"items", data.items.size()}};
  return out;
}

// Marker that prefixes each declared output line in a coding submission.
inline constexpr std::string_view kOutputMarker = "#|out:";

namespace detail {

inline bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

}  // namespace detail

// Non-overlapping occurrences of `token`. When the token begins (ends) with an
// identifier character it must not be preceded (followed) by one.
inline int count_token(std::string_view text, std::string_view token) {
  if (token.empty()) return 0;
  const bool word_start = detail::word_char(token.front());
  const bool word_end = detail::word_char(token.back());
  int count = 0;
  std::size_t pos = 0;
  while ((pos = text.find(token, pos)) != std::string_view::npos) {
    const bool left_ok = !word_start || pos == 0 || !detail::word_char(text[pos - 1]);
    const std::size_t after = pos + token.size();
    const bool right_ok = !word_end || after >= text.size() || !detail::word_char(text[after]);
    if (left_ok && right_ok) {
      ++count;
      pos = after;
    } else {
      ++pos;
    }
  }
  return count;
}

struct SplitSource {
  std::string code;                   // source without marker lines
  std::vector<std::string> outputs;  // declared outputs, in order
};

inline SplitSource split_declared_outputs(std::string_view source) {
  SplitSource out;
  std::size_t start = 0;
  while (start <= source.size()) {
    std::size_t end = source.find('\n', start);
    if (end == std::string_view::npos) end = source.size();
    std::string_view line = source.substr(start, end - start);
    if (line.starts_with(kOutputMarker)) {
      out.outputs.emplace_back(line.substr(kOutputMarker.size()));
    } else {
      out.code.append(line);
      if (end < source.size()) out.code.push_back('\n');
    }
    if (end == source.size()) break;
    start = end + 1;
  }
  return out;
}

struct OutputCheck {
  bool applicable = false;
  bool passed = true;
  json detail = json::object();
};

using OutputChecker = std::function<OutputCheck(const CodingData&, const SplitSource&)>;
using GraderRegistry = std::map<std::string, OutputChecker, std::less<>>;

inline OutputCheck echo_checker(const CodingData& data, const SplitSource& source) {
  OutputCheck check;
  const auto& vectors = data.grader.test_vectors;
  if (vectors.empty()) return check;
  check.applicable = true;
  json mismatches = json::array();
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (i >= source.outputs.size() || source.outputs[i] != vectors[i].expected_output) mismatches.push_back(i);
  }
  check.passed = mismatches.empty() && source.outputs.size() == vectors.size();
  check.detail = {{"declared", source.outputs.size()}, {"expected", vectors.size()}, {"mismatches", mismatches}};
  return check;
}

inline OutputCheck static_only_checker(const CodingData&, const SplitSource&) { return {}; }

inline const GraderRegistry& default_graders() {
  static const GraderRegistry registry = {{"echo", echo_checker}, {"static-only", static_only_checker}};
  return registry;
}

inline ValidationOutcome grade_coding(const CodingData& data, std::string_view source,
                                      const GraderRegistry& graders = default_graders()) {
  const GraderSpec& g = data.grader;
  const SplitSource split = split_declared_outputs(source);
  json checks = json::array();
  int total = 0;
  int passed = 0;
  auto record = [&](std::string name, bool ok) {
    checks.push_back({{"name", std::move(name)}, {"passed", ok}});
    ++total;
    if (ok) ++passed;
  };

  ValidationOutcome out;
  if (!g.required_tokens.empty()) {
    json missing = json::array();
    for (const auto& t : g.required_tokens) {
      if (count_token(split.code, t) == 0) missing.push_back(t);
    }
    record("required_tokens", missing.empty());
    out.detail["missing_tokens"] = missing;
  }
  if (!g.forbidden_tokens.empty()) {
    json found = json::array();
    for (const auto& t : g.forbidden_tokens) {
      if (count_token(split.code, t) > 0) found.push_back(t);
    }
    record("forbidden_tokens", found.empty());
    out.detail["forbidden_found"] = found;
  }
  int complexity = 1;
  for (const auto& kw : g.branch_keywords) complexity += count_token(split.code, kw);
  out.detail["complexity"] = complexity;
  if (g.complexity_max) record("complexity", complexity <= *g.complexity_max);

  auto it = graders.find(g.plugin);
  if (it == graders.end()) {
    throw Error(Errc::SchemaViolation, "no grader plugin '" + g.plugin + "'", {{"plugin", g.plugin}});
  }
  OutputCheck output = it->second(data, split);
  if (output.applicable) {
    record("output", output.passed);
    out.detail["output"] = output.detail;
  }
  out.detail["checks"] = checks;
  out.score = total == 0 ? 1.0 : static_cast<double>(passed) / static_cast<double>(total);
  out.passed = passed == total;
  out.feedback = std::to_string(passed) + "/" + std::to_string(total) + " checks passed";
  return out;
}

// ---------------------------------------------------------------------------
// Negotiation

struct NodeNegotiation {
  std::optional<Modality> chosen;
  std::set<Modality> offered;  // modalities the node can be delivered in
  bool deferred = false;       // abstract node, resolved at refinement
};

struct NegotiationReport {
  std::map<std::string, NodeNegotiation> nodes;

  bool satisfiable() const {
    return std::all_of(nodes.begin(), nodes.end(),
                       [](const auto& kv) { return kv.second.deferred || kv.second.chosen.has_value(); });
  }
  std::vector<std::string> unsatisfiable_nodes() const {
    std::vector<std::string> out;
    for (const auto& [id, n] : nodes) {
      if (!n.deferred && !n.chosen) out.push_back(id);
    }
    return out;
  }
};

inline std::optional<Modality> choose_modality(const ActivityNode& node, const ModalitySet& capabilities) {
  for (Modality m : kModalityPreference) {
    if (capabilities.contains(m) && node.representations.contains(m)) return m;
  }
  return std::nullopt;
}

inline NegotiationReport negotiate(const ModalitySet& capabilities, const LearningFragment& f) {
  NegotiationReport report;
  for (const auto& [id, node] : f.nodes) {
    NodeNegotiation n;
    for (const auto& [m, payload] : node.representations) n.offered.insert(m);
    n.deferred = node.kind == ActivityKind::Abstract;
    if (!n.deferred) n.chosen = choose_modality(node, capabilities);
    report.nodes.emplace(id, std::move(n));
  }
  return report;
}

inline json negotiation_to_json(const NegotiationReport& report) {
  json nodes = json::object();
  for (const auto& [id, n] : report.nodes) {
    json offered = json::array();
    for (auto m : n.offered) offered.push_back(std::string(to_string(m)));
    std::sort(offered.begin(), offered.end());
    nodes[id] = {{"satisfiable", n.deferred || n.chosen.has_value()},
                 {"modality", n.chosen ? json(std::string(to_string(*n.chosen))) : json(nullptr)},
                 {"missing", n.chosen || n.deferred ? json::array() : offered},
                 {"deferred", n.deferred}};
  }
  json unsat = report.unsatisfiable_nodes();
  return {{"satisfiable", report.satisfiable()}, {"nodes", nodes}, {"unsatisfiable", unsat}};
}

// ---------------------------------------------------------------------------
// Session

enum class SessionStatus { Active, Completed, Failed };
enum class FailureReason { None, AttemptsExhausted, StepCapExceeded };

inline constexpr std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::Active: return "active";
    case SessionStatus::Completed: return "completed";
    case SessionStatus::Failed: return "failed";
  }
  return "?";
}

inline constexpr std::string_view to_string(FailureReason r) {
  switch (r) {
    case FailureReason::None: return "none";
    case FailureReason::AttemptsExhausted: return "attempts_exhausted";
    case FailureReason::StepCapExceeded: return "step_cap_exceeded";
  }
  return "?";
}

struct NextAssignment {
  enum class Kind { Move, Stay, Completed, Failed };
  Kind kind = Kind::Stay;
  std::string edge;    // Move only
  std::string target;  // Move only
  FailureReason reason = FailureReason::None;
  bool operator==(const NextAssignment&) const = default;
};

inline constexpr std::string_view to_string(NextAssignment::Kind k) {
  switch (k) {
    case NextAssignment::Kind::Move: return "move";
    case NextAssignment::Kind::Stay: return "stay";
    case NextAssignment::Kind::Completed: return "completed";
    case NextAssignment::Kind::Failed: return "failed";
  }
  return "?";
}

struct TranscriptEntry {
  int seq = 0;
  std::string node;
  int attempt = 0;
  Submission submission;
  ValidationOutcome outcome;
  std::optional<std::string> chosen_edge;
  NextAssignment next;
  gamification::ActivityEvent event;
  std::vector<gamification::AwardRecord> awards;
  bool operator==(const TranscriptEntry&) const = default;
};

inline constexpr int kDefaultStepCap = 1000;

struct Session {
  std::string id;
  FragmentRef fragment;
  std::string learner_id;
  ModalitySet capabilities;
  std::string current;
  std::map<std::string, int> attempts;
  int steps = 0;
  SessionStatus status = SessionStatus::Active;
  FailureReason failure = FailureReason::None;
  std::vector<TranscriptEntry> transcript;
  gamification::State gamification;
  std::vector<gamification::Rule> rules;
  int step_cap = kDefaultStepCap;
  std::string created_at;
  bool operator==(const Session&) const = default;
};

struct SessionOptions {
  std::string id = "session";
  std::string created_at;
  std::vector<gamification::Rule> rules;
  int step_cap = kDefaultStepCap;
};

inline Session start_session(const LearningFragment& f, const std::string& learner_id,
                             const ModalitySet& capabilities, SessionOptions options = {}) {
  if (has_abstract_nodes(f)) {
    std::vector<std::string> abstract;
    for (const auto& [id, n] : f.nodes) {
      if (n.kind == ActivityKind::Abstract) abstract.push_back(id);
    }
    throw Error(Errc::UnrefinedFragment, "fragment still contains abstract activities", {{"nodes", abstract}});
  }
  ValidationReport report = validate_fragment(f);
  if (!report.ok()) throw Error(Errc::InvalidFragment, "fragment failed validation", report_to_json(report));
  if (options.step_cap < 1) throw Error(Errc::BadRequest, "step cap must be >= 1");

  NegotiationReport negotiation = negotiate(capabilities, f);
  if (capabilities.empty() || !negotiation.satisfiable()) {
    json nodes = json::object();
    for (const auto& id : negotiation.unsatisfiable_nodes()) {
      json missing = json::array();
      for (auto m : negotiation.nodes.at(id).offered) missing.push_back(std::string(to_string(m)));
      nodes[id] = missing;
    }
    throw Error(Errc::CapabilityMismatch, "frontend capabilities cannot render every activity",
                {{"nodes", nodes}, {"negotiation", negotiation_to_json(negotiation)}});
  }

  Session s;
  s.id = std::move(options.id);
  s.fragment = {f.id, f.version};
  s.learner_id = learner_id;
  s.capabilities = capabilities;
  s.current = f.entry;
  s.rules = std::move(options.rules);
  s.step_cap = options.step_cap;
  s.created_at = std::move(options.created_at);
  return s;
}

struct RenderedActivity {
  std::string node;
  ActivityKind kind = ActivityKind::Lesson;
  std::string title;
  Modality modality = Modality::Text;
  std::string payload;
  json submission_schema;
};

inline json submission_schema(const ActivityNode& node) {
  json schema = {{"kind", std::string(to_string(node.kind))}};
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, CloseEndedData>) {
          schema["fields"] = {{"answer", "string"}};
          schema["prompt"] = d.prompt;
        } else if constexpr (std::is_same_v<T, QuizData>) {
          json items = json::array();
          for (const auto& item : d.items) items.push_back({{"stem", item.stem}, {"choices", item.choices}});
          schema["fields"] = {{"choices", "array of integer, one per item"}};
          schema["items"] = items;
        } else if constexpr (std::is_same_v<T, CodingData>) {
          json inputs = json::array();
          for (const auto& v : d.grader.test_vectors) inputs.push_back(v.input);
          schema["fields"] = {{"source", "string"}};
          schema["statement"] = d.statement;
          schema["test_inputs"] = inputs;
          schema["output_marker"] = std::string(kOutputMarker);
        } else {
          schema["fields"] = json::object();
        }
      },
      node.kind_data);
  return schema;
}

inline RenderedActivity current_activity(const Session& s, const LearningFragment& f) {
  if (s.status != SessionStatus::Active) {
    throw Error(Errc::SessionNotActive, "session is " + std::string(to_string(s.status)),
                {{"status", std::string(to_string(s.status))}});
  }
  const ActivityNode& node = node_at(f, s.current);
  auto modality = choose_modality(node, s.capabilities);
  if (!modality) {
    throw Error(Errc::CapabilityMismatch, "no renderable representation for '" + node.id + "'", {{"node", node.id}});
  }
  return {node.id, node.kind, node.title, *modality, node.representations.at(*modality), submission_schema(node)};
}

inline json rendered_to_json(const RenderedActivity& r) {
  return {{"node", r.node},
          {"kind", std::string(to_string(r.kind))},
          {"title", r.title},
          {"modality", std::string(to_string(r.modality))},
          {"payload", r.payload},
          {"submission_schema", r.submission_schema}};
}

inline ValidationOutcome grade(const ActivityNode& node, const Submission& submission,
                               const GraderRegistry& graders = default_graders()) {
  if (submission_kind(submission) != node.kind) {
    throw Error(Errc::KindMismatch,
                "submission kind " + std::string(to_string(submission_kind(submission))) + " does not match activity kind " +
                    std::string(to_string(node.kind)),
                {{"expected", std::string(to_string(node.kind))},
                 {"got", std::string(to_string(submission_kind(submission)))}});
  }
  return std::visit(
      [&](const auto& sub) -> ValidationOutcome {
        using T = std::decay_t<decltype(sub)>;
        if constexpr (std::is_same_v<T, LessonAck>) {
          return grade_lesson(sub);
        } else if constexpr (std::is_same_v<T, CloseEndedAnswer>) {
          return grade_close_ended(std::get<CloseEndedData>(node.kind_data), sub.answer);
        } else if constexpr (std::is_same_v<T, QuizAnswer>) {
          return grade_quiz(std::get<QuizData>(node.kind_data), sub.choices);
        } else {
          return grade_coding(std::get<CodingData>(node.kind_data), sub.source, graders);
        }
      },
      submission);
}

inline condition::EvaluationContext context_for(const ValidationOutcome& outcome, int attempts, ActivityKind kind) {
  return {outcome.passed, outcome.score, outcome.answer, outcome.label, attempts, std::string(to_string(kind))};
}

// First edge (in declared order) whose condition holds, if any.
inline std::optional<Edge> select_edge(const LearningFragment& f, const std::string& node,
                                       const condition::EvaluationContext& ctx) {
  for (const auto& e : f.edges) {
    if (e.source != node) continue;
    if (condition::evaluate_condition(*condition::compile(e.condition), ctx)) return e;
  }
  return std::nullopt;
}

struct EngineOptions {
  GraderRegistry graders = default_graders();
};

struct StepResult {
  Session session;
  ValidationOutcome outcome;
  NextAssignment next;
  std::vector<gamification::AwardRecord> awards;
};

// Takes the session by value: pass an rvalue to avoid copying the transcript.
inline StepResult submit(Session s, const LearningFragment& f, const Submission& submission,
                         const EngineOptions& options = {}) {
  if (s.status != SessionStatus::Active) {
    throw Error(Errc::SessionNotActive, "session is " + std::string(to_string(s.status)),
                {{"status", std::string(to_string(s.status))}});
  }
  const ActivityNode& node = node_at(f, s.current);
  ValidationOutcome outcome = grade(node, submission, options.graders);

  const int attempt = ++s.attempts[node.id];
  ++s.steps;

  NextAssignment next;
  std::optional<std::string> chosen;
  if (auto edge = select_edge(f, node.id, context_for(outcome, attempt, node.kind))) {
    next = {NextAssignment::Kind::Move, edge->id, edge->target, FailureReason::None};
    chosen = edge->id;
    s.current = edge->target;
  } else if (is_exit(f, node.id) && outcome.passed) {
    next.kind = NextAssignment::Kind::Completed;
    s.status = SessionStatus::Completed;
  } else if (node.max_attempts && attempt >= *node.max_attempts) {
    next = {NextAssignment::Kind::Failed, "", "", FailureReason::AttemptsExhausted};
  } else {
    next.kind = NextAssignment::Kind::Stay;
  }
  if (next.kind != NextAssignment::Kind::Completed && next.kind != NextAssignment::Kind::Failed &&
      s.steps >= s.step_cap) {
    next = {NextAssignment::Kind::Failed, next.edge, next.target, FailureReason::StepCapExceeded};
  }
  if (next.kind == NextAssignment::Kind::Failed) {
    s.status = SessionStatus::Failed;
    s.failure = next.reason;
  }

  gamification::ActivityEvent event{node.id, node.kind, outcome.passed, attempt == 1,
                                    s.status == SessionStatus::Completed};
  auto [state, awards] = gamification::process_event(s.gamification, event, s.rules);
  s.gamification = std::move(state);

  s.transcript.push_back({static_cast<int>(s.transcript.size()) + 1, node.id, attempt, submission, outcome, chosen,
                          next, event, awards});
  return {std::move(s), std::move(outcome), std::move(next), std::move(awards)};
}

inline std::vector<gamification::ActivityEvent> transcript_events(const Session& s) {
  std::vector<gamification::ActivityEvent> events;
  for (const auto& entry : s.transcript) events.push_back(entry.event);
  return events;
}

// ---------------------------------------------------------------------------
// Documents

inline json submission_to_json(const Submission& s) {
  return std::visit(
      [](const auto& sub) -> json {
        using T = std::decay_t<decltype(sub)>;
        if constexpr (std::is_same_v<T, LessonAck>) {
          return {{"kind", "lesson"}};
        } else if constexpr (std::is_same_v<T, CloseEndedAnswer>) {
          return {{"kind", "close_ended"}, {"answer", sub.answer}};
        } else if constexpr (std::is_same_v<T, QuizAnswer>) {
          return {{"kind", "quiz"}, {"choices", sub.choices}};
        } else {
          return {{"kind", "coding"}, {"source", sub.source}};
        }
      },
      s);
}

inline Submission submission_from_json(const json& v) {
  io::ObjectReader r(v, "submission");
  const ActivityKind kind = io::read_kind(r.string("kind"), r.at("kind"));
  Submission out;
  switch (kind) {
    case ActivityKind::Lesson:
      out = LessonAck{};
      break;
    case ActivityKind::CloseEnded:
      out = CloseEndedAnswer{r.string("answer")};
      break;
    case ActivityKind::Quiz: {
      const json& choices = r.raw("choices");
      if (!choices.is_array()) io::schema_error(r.at("choices"), "expected array of integers");
      QuizAnswer q;
      for (const auto& c : choices) {
        if (!c.is_number_integer()) io::schema_error(r.at("choices"), "expected array of integers");
        q.choices.push_back(c.get<int>());
      }
      out = std::move(q);
      break;
    }
    case ActivityKind::Coding:
      out = CodingAnswer{r.string("source")};
      break;
    case ActivityKind::Abstract:
      io::schema_error(r.at("kind"), "abstract activities accept no submissions");
  }
  r.finish();
  return out;
}

inline json outcome_to_json(const ValidationOutcome& o) {
  return {{"passed", o.passed},   {"score", o.score},       {"answer", o.answer},
          {"label", o.label},     {"feedback", o.feedback}, {"detail", o.detail}};
}

inline ValidationOutcome outcome_from_json(const json& v) {
  io::ObjectReader r(v, "outcome");
  ValidationOutcome o;
  const json& passed = r.raw("passed");
  if (!passed.is_boolean()) io::schema_error(r.at("passed"), "expected boolean");
  o.passed = passed.get<bool>();
  o.score = r.number("score");
  o.answer = r.string("answer");
  o.label = r.string("label");
  o.feedback = r.string("feedback");
  o.detail = r.raw("detail");
  r.finish();
  return o;
}

inline json next_to_json(const NextAssignment& n) {
  json out = {{"kind", std::string(to_string(n.kind))}};
  if (n.kind == NextAssignment::Kind::Move || !n.edge.empty()) {
    out["edge"] = n.edge;
    out["target"] = n.target;
  }
  if (n.kind == NextAssignment::Kind::Failed) out["reason"] = std::string(to_string(n.reason));
  return out;
}

inline FailureReason failure_from_string(const std::string& s) {
  if (s == "attempts_exhausted") return FailureReason::AttemptsExhausted;
  if (s == "step_cap_exceeded") return FailureReason::StepCapExceeded;
  if (s == "none") return FailureReason::None;
  io::schema_error("reason", "unknown failure reason '" + s + "'");
}

inline NextAssignment next_from_json(const json& v) {
  io::ObjectReader r(v, "next");
  NextAssignment n;
  const std::string kind = r.string("kind");
  if (kind == "move") {
    n.kind = NextAssignment::Kind::Move;
  } else if (kind == "stay") {
    n.kind = NextAssignment::Kind::Stay;
  } else if (kind == "completed") {
    n.kind = NextAssignment::Kind::Completed;
  } else if (kind == "failed") {
    n.kind = NextAssignment::Kind::Failed;
  } else {
    io::schema_error(r.at("kind"), "unknown assignment kind '" + kind + "'");
  }
  n.edge = r.string_or("edge", "");
  n.target = r.string_or("target", "");
  n.reason = failure_from_string(r.string_or("reason", "none"));
  r.finish();
  return n;
}

inline json session_to_json(const Session& s) {
  json caps = json::array();
  for (auto m : s.capabilities) caps.push_back(std::string(to_string(m)));
  std::sort(caps.begin(), caps.end());
  json transcript = json::array();
  for (const auto& t : s.transcript) {
    json awards = json::array();
    for (const auto& a : t.awards) awards.push_back(gamification::award_to_json(a));
    transcript.push_back({{"seq", t.seq},
                          {"node", t.node},
                          {"attempt", t.attempt},
                          {"submission", submission_to_json(t.submission)},
                          {"outcome", outcome_to_json(t.outcome)},
                          {"chosen_edge", t.chosen_edge ? json(*t.chosen_edge) : json(nullptr)},
                          {"next", next_to_json(t.next)},
                          {"event", gamification::event_to_json(t.event)},
                          {"awards", awards}});
  }
  return {{"id", s.id},
          {"fragment", {{"id", s.fragment.id}, {"version", s.fragment.version}}},
          {"learner_id", s.learner_id},
          {"capabilities", caps},
          {"current", s.current},
          {"attempts", s.attempts},
          {"steps", s.steps},
          {"status", std::string(to_string(s.status))},
          {"failure", std::string(to_string(s.failure))},
          {"transcript", transcript},
          {"gamification", gamification::state_to_json(s.gamification)},
          {"rules", gamification::rules_to_json(s.rules)},
          {"step_cap", s.step_cap},
          {"created_at", s.created_at}};
}

inline Session session_from_json(const json& v) {
  io::ObjectReader r(v, "session");
  Session s;
  s.id = r.string("id");
  io::ObjectReader fr(r.raw("fragment"), r.at("fragment"));
  s.fragment = {fr.string("id"), static_cast<int>(fr.integer("version"))};
  fr.finish();
  s.learner_id = r.string("learner_id");
  for (const auto& m : r.strings("capabilities")) s.capabilities.insert(io::read_modality(m, r.at("capabilities")));
  s.current = r.string("current");
  const json& attempts = r.raw("attempts");
  if (!attempts.is_object()) io::schema_error(r.at("attempts"), "expected object");
  for (auto it = attempts.begin(); it != attempts.end(); ++it) s.attempts[it.key()] = it->get<int>();
  s.steps = static_cast<int>(r.integer("steps"));
  const std::string status = r.string("status");
  s.status = status == "active"      ? SessionStatus::Active
             : status == "completed" ? SessionStatus::Completed
             : status == "failed"    ? SessionStatus::Failed
                                     : (io::schema_error(r.at("status"), "unknown status"), SessionStatus::Active);
  s.failure = failure_from_string(r.string("failure"));
  const json& transcript = r.raw("transcript");
  if (!transcript.is_array()) io::schema_error(r.at("transcript"), "expected array");
  for (const auto& t : transcript) {
    io::ObjectReader tr(t, r.at("transcript"));
    TranscriptEntry e;
    e.seq = static_cast<int>(tr.integer("seq"));
    e.node = tr.string("node");
    e.attempt = static_cast<int>(tr.integer("attempt"));
    e.submission = submission_from_json(tr.raw("submission"));
    e.outcome = outcome_from_json(tr.raw("outcome"));
    if (tr.has("chosen_edge")) {
      e.chosen_edge = tr.string("chosen_edge");
    } else {
      tr.skip("chosen_edge");
    }
    e.next = next_from_json(tr.raw("next"));
    e.event = gamification::event_from_json(tr.raw("event"));
    for (const auto& a : tr.raw("awards")) e.awards.push_back(gamification::award_from_json(a));
    tr.finish();
    s.transcript.push_back(std::move(e));
  }
  s.gamification = gamification::state_from_json(r.raw("gamification"));
  s.rules = gamification::rules_from_json(r.raw("rules"));
  s.step_cap = static_cast<int>(r.integer("step_cap"));
  s.created_at = r.string("created_at");
  r.finish();
  return s;
}

inline std::string serialize_session(const Session& s) { return io::dump(session_to_json(s)); }

}  // namespace polyglot::engine
