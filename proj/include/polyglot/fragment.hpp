#pragma once

// Learning-fragment data model, canonical document format and structural
// validation.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "polyglot/condition.hpp"
#include "polyglot/error.hpp"
#include "polyglot/text.hpp"

namespace polyglot {

using json = nlohmann::json;

enum class ActivityKind { Lesson, CloseEnded, Quiz, Coding, Abstract };
enum class Modality { Text, Audio, Rich, Code };

inline constexpr std::string_view to_string(ActivityKind k) {
  switch (k) {
    case ActivityKind::Lesson: return "lesson";
    case ActivityKind::CloseEnded: return "close_ended";
    case ActivityKind::Quiz: return "quiz";
    case ActivityKind::Coding: return "coding";
    case ActivityKind::Abstract: return "abstract";
  }
  return "?";
}

inline constexpr std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Text: return "text";
    case Modality::Audio: return "audio";
    case Modality::Rich: return "rich";
    case Modality::Code: return "code";
  }
  return "?";
}

inline std::optional<ActivityKind> parse_kind(std::string_view s) {
  for (auto k : {ActivityKind::Lesson, ActivityKind::CloseEnded, ActivityKind::Quiz, ActivityKind::Coding,
                 ActivityKind::Abstract}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

inline std::optional<Modality> parse_modality(std::string_view s) {
  for (auto m : {Modality::Text, Modality::Audio, Modality::Rich, Modality::Code}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

// Preference order used when several representations are renderable.
inline constexpr Modality kModalityPreference[] = {Modality::Text, Modality::Rich, Modality::Code, Modality::Audio};

using ConceptSet = std::set<std::string>;
using ModalitySet = std::set<Modality>;

struct NumericAnswer {
  double value = 0.0;
  double tolerance = kDefaultAnswerTolerance;
  bool operator==(const NumericAnswer&) const = default;
};

using AnswerSpec = std::variant<std::string, NumericAnswer>;

struct LessonData {
  bool operator==(const LessonData&) const = default;
};

struct CloseEndedData {
  std::string prompt;
  AnswerSpec expected;
  std::map<std::string, std::string> distractors;  // answer -> label
  bool operator==(const CloseEndedData&) const = default;
};

struct QuizItem {
  std::string stem;
  std::vector<std::string> choices;
  int correct = 0;
  bool operator==(const QuizItem&) const = default;
};

struct QuizData {
  std::vector<QuizItem> items;
  double pass_threshold = 0.6;
  bool operator==(const QuizData&) const = default;
};

struct TestVector {
  std::string input;
  std::string expected_output;
  bool operator==(const TestVector&) const = default;
};

inline const std::vector<std::string>& default_branch_keywords() {
  static const std::vector<std::string> keywords = {"if", "else", "for", "while", "case", "&&", "||", "catch"};
  return keywords;
}

struct GraderSpec {
  std::vector<std::string> required_tokens;
  std::vector<std::string> forbidden_tokens;
  std::optional<int> complexity_max;
  std::vector<std::string> branch_keywords = default_branch_keywords();
  std::vector<TestVector> test_vectors;
  std::string plugin = "echo";
  bool operator==(const GraderSpec&) const = default;
};

struct CodingData {
  std::string statement;
  GraderSpec grader;
  bool operator==(const CodingData&) const = default;
};

struct AbstractConstraints {
  std::optional<int> max_nodes;
  std::optional<std::set<ActivityKind>> allowed_kinds;
  std::optional<Modality> required_modality;
  bool operator==(const AbstractConstraints&) const = default;
};

struct AbstractData {
  ConceptSet goal;
  AbstractConstraints constraints;
  bool operator==(const AbstractData&) const = default;
};

using KindData = std::variant<LessonData, CloseEndedData, QuizData, CodingData, AbstractData>;

inline constexpr ActivityKind kind_of(const KindData& data) { return static_cast<ActivityKind>(data.index()); }

struct ActivityNode {
  std::string id;
  ActivityKind kind = ActivityKind::Lesson;
  std::string title;
  std::map<Modality, std::string> representations;
  std::optional<int> max_attempts;  // nullopt = unlimited
  KindData kind_data;
  bool operator==(const ActivityNode&) const = default;
};

struct Edge {
  std::string id;
  std::string source;
  std::string target;
  condition::ConditionSpec condition;
  std::optional<std::string> label;
  bool operator==(const Edge&) const = default;
};

struct LearningFragment {
  std::string id;
  std::string title;
  int version = 1;
  std::string entry;
  std::map<std::string, ActivityNode> nodes;
  std::vector<Edge> edges;
  ConceptSet provides;
  ConceptSet requires_;
  double cost = 1.0;
  json ui_metadata;  // editor layout; opaque to the engine
  bool operator==(const LearningFragment&) const = default;
};

struct FragmentRef {
  std::string id;
  int version = 1;
  auto operator<=>(const FragmentRef&) const = default;
};

inline std::string to_string(const FragmentRef& ref) { return ref.id + "@" + std::to_string(ref.version); }

// ---------------------------------------------------------------------------
// Graph helpers

inline const ActivityNode& node_at(const LearningFragment& f, const std::string& node) {
  auto it = f.nodes.find(node);
  if (it == f.nodes.end()) throw Error(Errc::UnknownNode, "unknown node '" + node + "'", {{"node", node}});
  return it->second;
}

inline std::vector<Edge> outgoing_edges(const LearningFragment& f, std::string_view node) {
  if (!f.nodes.contains(std::string(node))) {
    throw Error(Errc::UnknownNode, "unknown node '" + std::string(node) + "'", {{"node", std::string(node)}});
  }
  std::vector<Edge> out;
  for (const auto& e : f.edges) {
    if (e.source == node) out.push_back(e);
  }
  return out;
}

inline bool is_exit(const LearningFragment& f, std::string_view node) {
  return std::none_of(f.edges.begin(), f.edges.end(), [&](const Edge& e) { return e.source == node; });
}

inline std::vector<std::string> exit_nodes(const LearningFragment& f) {
  std::vector<std::string> out;
  for (const auto& [id, node] : f.nodes) {
    if (is_exit(f, id)) out.push_back(id);
  }
  return out;
}

// Nodes reachable from `start` following edges accepted by `follow`
// (all edges with an existing target when `follow` is empty).
inline std::set<std::string> reachable_from(const LearningFragment& f, const std::string& start,
                                            const std::function<bool(const Edge&)>& follow = {}) {
  std::set<std::string> seen;
  if (!f.nodes.contains(start)) return seen;
  std::map<std::string, std::vector<const Edge*>> adjacency;
  for (const auto& e : f.edges) adjacency[e.source].push_back(&e);
  std::deque<std::string> queue{start};
  seen.insert(start);
  while (!queue.empty()) {
    std::string current = queue.front();
    queue.pop_front();
    for (const Edge* e : adjacency[current]) {
      if (!f.nodes.contains(e->target) || (follow && !follow(*e))) continue;
      if (seen.insert(e->target).second) queue.push_back(e->target);
    }
  }
  return seen;
}

inline std::map<ActivityKind, int> kind_histogram(const LearningFragment& f) {
  std::map<ActivityKind, int> hist;
  for (const auto& [id, node] : f.nodes) ++hist[node.kind];
  return hist;
}

inline bool has_abstract_nodes(const LearningFragment& f) {
  return std::any_of(f.nodes.begin(), f.nodes.end(),
                     [](const auto& kv) { return kv.second.kind == ActivityKind::Abstract; });
}

// ---------------------------------------------------------------------------
// Canonical document format: UTF-8 JSON, keys sorted, two-space indent,
// trailing newline. Edge order is significant; node order is by id.

namespace io {

[[noreturn]] inline void schema_error(const std::string& path, const std::string& message) {
  throw Error(Errc::SchemaViolation, path + ": " + message, {{"path", path}});
}

// Parses JSON, rejecting duplicate object keys.
inline json parse_document(std::string_view text) {
  std::vector<std::set<std::string>> key_stack;
  std::optional<std::string> duplicate;
  auto callback = [&](int /*depth*/, json::parse_event_t event, json& parsed) {
    switch (event) {
      case json::parse_event_t::object_start:
        key_stack.emplace_back();
        break;
      case json::parse_event_t::object_end:
        if (!key_stack.empty()) key_stack.pop_back();
        break;
      case json::parse_event_t::key:
        if (!key_stack.empty() && !key_stack.back().insert(parsed.get<std::string>()).second && !duplicate) {
          duplicate = parsed.get<std::string>();
        }
        break;
      default:
        break;
    }
    return true;
  };
  json doc;
  try {
    doc = json::parse(text.begin(), text.end(), callback);
  } catch (const json::parse_error& e) {
    throw Error(Errc::MalformedDocument, std::string("malformed document: ") + e.what(), {{"byte", e.byte}});
  }
  if (duplicate) schema_error("$", "duplicate field '" + *duplicate + "'");
  return doc;
}

inline std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

// Strict accessor over one JSON object: typed getters plus an unknown-key check.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) schema_error(path_, "expected object");
  }
  ObjectReader(json&&, std::string) = delete;  // holds a reference

  const std::string& path() const { return path_; }
  std::string at(std::string_view key) const { return path_ + "." + std::string(key); }

  bool has(std::string_view key) const {
    auto it = obj_.find(std::string(key));
    return it != obj_.end() && !it->is_null();
  }

  const json& raw(std::string_view key) {
    used_.insert(std::string(key));
    auto it = obj_.find(std::string(key));
    if (it == obj_.end()) schema_error(at(key), "missing required field");
    return *it;
  }

  std::string string(std::string_view key) {
    const json& v = raw(key);
    if (!v.is_string()) schema_error(at(key), "expected string");
    return v.get<std::string>();
  }

  std::string string_or(std::string_view key, std::string fallback) {
    return has(key) ? string(key) : (used_.insert(std::string(key)), fallback);
  }

  long long integer(std::string_view key) {
    const json& v = raw(key);
    if (!v.is_number_integer()) schema_error(at(key), "expected integer");
    return v.get<long long>();
  }

  std::optional<long long> optional_integer(std::string_view key) {
    if (!has(key)) {
      used_.insert(std::string(key));
      return std::nullopt;
    }
    return integer(key);
  }

  double number(std::string_view key) {
    const json& v = raw(key);
    if (!v.is_number()) schema_error(at(key), "expected number");
    return v.get<double>();
  }

  double number_or(std::string_view key, double fallback) {
    if (!has(key)) {
      used_.insert(std::string(key));
      return fallback;
    }
    return number(key);
  }

  std::vector<std::string> strings(std::string_view key) {
    const json& v = raw(key);
    if (!v.is_array()) schema_error(at(key), "expected array of strings");
    std::vector<std::string> out;
    for (const auto& item : v) {
      if (!item.is_string()) schema_error(at(key), "expected array of strings");
      out.push_back(item.get<std::string>());
    }
    return out;
  }

  std::vector<std::string> strings_or_empty(std::string_view key) {
    if (!has(key)) {
      used_.insert(std::string(key));
      return {};
    }
    return strings(key);
  }

  std::set<std::string> string_set(std::string_view key, bool required = false) {
    if (!required && !has(key)) {
      used_.insert(std::string(key));
      return {};
    }
    auto list = strings(key);
    std::set<std::string> out(list.begin(), list.end());
    if (out.size() != list.size()) schema_error(at(key), "duplicate set element");
    return out;
  }

  // Marks an optional key as consumed when it is absent or null.
  void skip(std::string_view key) { used_.insert(std::string(key)); }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!used_.contains(it.key())) schema_error(at(it.key()), "unknown field");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

inline json set_to_json(const std::set<std::string>& s) { return json(std::vector<std::string>(s.begin(), s.end())); }

inline ActivityKind read_kind(const std::string& text, const std::string& path) {
  auto k = parse_kind(text);
  if (!k) schema_error(path, "unknown activity kind '" + text + "'");
  return *k;
}

inline Modality read_modality(const std::string& text, const std::string& path) {
  auto m = parse_modality(text);
  if (!m) schema_error(path, "unknown modality '" + text + "'");
  return *m;
}

inline json answer_to_json(const AnswerSpec& a) {
  if (const auto* s = std::get_if<std::string>(&a)) return *s;
  const auto& n = std::get<NumericAnswer>(a);
  return {{"number", n.value}, {"tolerance", n.tolerance}};
}

inline AnswerSpec answer_from_json(const json& v, const std::string& path) {
  if (v.is_string()) return v.get<std::string>();
  ObjectReader r(v, path);
  NumericAnswer n;
  n.value = r.number("number");
  n.tolerance = r.number_or("tolerance", kDefaultAnswerTolerance);
  r.finish();
  return n;
}

inline json kind_data_to_json(const KindData& data) {
  return std::visit(
      [](const auto& d) -> json {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, LessonData>) {
          return json::object();
        } else if constexpr (std::is_same_v<T, CloseEndedData>) {
          return {{"prompt", d.prompt}, {"expected", answer_to_json(d.expected)}, {"distractors", d.distractors}};
        } else if constexpr (std::is_same_v<T, QuizData>) {
          json items = json::array();
          for (const auto& item : d.items) {
            items.push_back({{"stem", item.stem}, {"choices", item.choices}, {"correct", item.correct}});
          }
          return {{"items", items}, {"pass_threshold", d.pass_threshold}};
        } else if constexpr (std::is_same_v<T, CodingData>) {
          const auto& g = d.grader;
          json vectors = json::array();
          for (const auto& v : g.test_vectors) vectors.push_back({{"input", v.input}, {"expected_output", v.expected_output}});
          json grader = {{"required_tokens", g.required_tokens},
                         {"forbidden_tokens", g.forbidden_tokens},
                         {"complexity_max", g.complexity_max ? json(*g.complexity_max) : json(nullptr)},
                         {"branch_keywords", g.branch_keywords},
                         {"test_vectors", vectors},
                         {"plugin", g.plugin}};
          return {{"statement", d.statement}, {"grader", grader}};
        } else {
          json constraints = json::object();
          const auto& c = d.constraints;
          constraints["max_nodes"] = c.max_nodes ? json(*c.max_nodes) : json(nullptr);
          if (c.allowed_kinds) {
            json kinds = json::array();
            for (auto k : *c.allowed_kinds) kinds.push_back(std::string(to_string(k)));
            std::sort(kinds.begin(), kinds.end());
            constraints["allowed_kinds"] = kinds;
          } else {
            constraints["allowed_kinds"] = nullptr;
          }
          constraints["required_modality"] =
              c.required_modality ? json(std::string(to_string(*c.required_modality))) : json(nullptr);
          return {{"goal", set_to_json(d.goal)}, {"constraints", constraints}};
        }
      },
      data);
}

inline KindData kind_data_from_json(ActivityKind kind, const json& v, const std::string& path) {
  ObjectReader r(v, path);
  KindData out;
  switch (kind) {
    case ActivityKind::Lesson:
      out = LessonData{};
      break;
    case ActivityKind::CloseEnded: {
      CloseEndedData d;
      d.prompt = r.string_or("prompt", "");
      d.expected = answer_from_json(r.raw("expected"), r.at("expected"));
      if (r.has("distractors")) {
        const json& m = r.raw("distractors");
        if (!m.is_object()) schema_error(r.at("distractors"), "expected object answer -> label");
        for (auto it = m.begin(); it != m.end(); ++it) {
          if (!it->is_string()) schema_error(r.at("distractors") + "." + it.key(), "expected string label");
          d.distractors[it.key()] = it->get<std::string>();
        }
      } else {
        r.skip("distractors");
      }
      out = std::move(d);
      break;
    }
    case ActivityKind::Quiz: {
      QuizData d;
      const json& items = r.raw("items");
      if (!items.is_array()) schema_error(r.at("items"), "expected array");
      for (std::size_t i = 0; i < items.size(); ++i) {
        ObjectReader ir(items[i], r.at("items") + "[" + std::to_string(i) + "]");
        QuizItem item;
        item.stem = ir.string_or("stem", "");
        item.choices = ir.strings("choices");
        item.correct = static_cast<int>(ir.integer("correct"));
        ir.finish();
        d.items.push_back(std::move(item));
      }
      d.pass_threshold = r.number_or("pass_threshold", 0.6);
      out = std::move(d);
      break;
    }
    case ActivityKind::Coding: {
      CodingData d;
      d.statement = r.string_or("statement", "");
      GraderSpec g;
      if (r.has("grader")) {
        ObjectReader gr(r.raw("grader"), r.at("grader"));
        g.required_tokens = gr.strings_or_empty("required_tokens");
        g.forbidden_tokens = gr.strings_or_empty("forbidden_tokens");
        if (auto cm = gr.optional_integer("complexity_max")) g.complexity_max = static_cast<int>(*cm);
        if (gr.has("branch_keywords")) {
          g.branch_keywords = gr.strings("branch_keywords");
        } else {
          gr.skip("branch_keywords");
        }
        if (gr.has("test_vectors")) {
          const json& vs = gr.raw("test_vectors");
          if (!vs.is_array()) schema_error(gr.at("test_vectors"), "expected array");
          for (std::size_t i = 0; i < vs.size(); ++i) {
            ObjectReader vr(vs[i], gr.at("test_vectors") + "[" + std::to_string(i) + "]");
            TestVector tv;
            tv.input = vr.string_or("input", "");
            tv.expected_output = vr.string("expected_output");
            vr.finish();
            g.test_vectors.push_back(std::move(tv));
          }
        } else {
          gr.skip("test_vectors");
        }
        g.plugin = gr.string_or("plugin", "echo");
        if (g.plugin != "echo" && g.plugin != "static-only") {
          schema_error(gr.at("plugin"), "unknown grader plugin '" + g.plugin + "'");
        }
        gr.finish();
      } else {
        r.skip("grader");
      }
      d.grader = std::move(g);
      out = std::move(d);
      break;
    }
    case ActivityKind::Abstract: {
      AbstractData d;
      d.goal = r.string_set("goal", true);
      if (r.has("constraints")) {
        ObjectReader cr(r.raw("constraints"), r.at("constraints"));
        if (auto mn = cr.optional_integer("max_nodes")) d.constraints.max_nodes = static_cast<int>(*mn);
        if (cr.has("allowed_kinds")) {
          std::set<ActivityKind> kinds;
          for (const auto& k : cr.strings("allowed_kinds")) kinds.insert(read_kind(k, cr.at("allowed_kinds")));
          d.constraints.allowed_kinds = kinds;
        } else {
          cr.skip("allowed_kinds");
        }
        if (cr.has("required_modality")) {
          d.constraints.required_modality = read_modality(cr.string("required_modality"), cr.at("required_modality"));
        } else {
          cr.skip("required_modality");
        }
        cr.finish();
      } else {
        r.skip("constraints");
      }
      out = std::move(d);
      break;
    }
  }
  r.finish();
  return out;
}

inline json condition_to_json(const condition::ConditionSpec& c) {
  return c.kind == condition::ConditionSpec::Kind::Builtin ? json{{"builtin", c.text}} : json{{"expr", c.text}};
}

inline condition::ConditionSpec condition_from_json(const json& v, const std::string& path) {
  ObjectReader r(v, path);
  const bool builtin = r.has("builtin");
  const bool expr = r.has("expr");
  if (builtin == expr) schema_error(path, "condition needs exactly one of 'builtin' or 'expr'");
  auto spec = builtin ? condition::ConditionSpec::builtin(r.string("builtin"))
                      : condition::ConditionSpec::expression(r.string("expr"));
  r.finish();
  return spec;
}

inline json node_to_json(const ActivityNode& n) {
  json reps = json::object();
  for (const auto& [m, payload] : n.representations) reps[std::string(to_string(m))] = payload;
  return {{"id", n.id},
          {"kind", std::string(to_string(n.kind))},
          {"title", n.title},
          {"representations", reps},
          {"max_attempts", n.max_attempts ? json(*n.max_attempts) : json(nullptr)},
          {"kind_data", kind_data_to_json(n.kind_data)}};
}

inline ActivityNode node_from_json(const json& v, const std::string& path) {
  ObjectReader r(v, path);
  ActivityNode n;
  n.id = r.string("id");
  n.kind = read_kind(r.string("kind"), r.at("kind"));
  n.title = r.string_or("title", "");
  if (r.has("representations")) {
    const json& reps = r.raw("representations");
    if (!reps.is_object()) schema_error(r.at("representations"), "expected object modality -> payload");
    for (auto it = reps.begin(); it != reps.end(); ++it) {
      if (!it->is_string()) schema_error(r.at("representations") + "." + it.key(), "expected string payload");
      n.representations[read_modality(it.key(), r.at("representations"))] = it->get<std::string>();
    }
  } else {
    r.skip("representations");
  }
  if (auto ma = r.optional_integer("max_attempts")) n.max_attempts = static_cast<int>(*ma);
  n.kind_data = kind_data_from_json(n.kind, r.has("kind_data") ? r.raw("kind_data") : json::object(),
                                    r.at("kind_data"));
  if (!r.has("kind_data")) r.skip("kind_data");
  r.finish();
  return n;
}

inline json edge_to_json(const Edge& e) {
  json out = {{"id", e.id}, {"source", e.source}, {"target", e.target}, {"condition", condition_to_json(e.condition)}};
  out["label"] = e.label ? json(*e.label) : json(nullptr);
  return out;
}

inline Edge edge_from_json(const json& v, const std::string& path) {
  ObjectReader r(v, path);
  Edge e;
  e.id = r.string("id");
  e.source = r.string("source");
  e.target = r.string("target");
  e.condition = condition_from_json(r.raw("condition"), r.at("condition"));
  if (r.has("label")) {
    e.label = r.string("label");
  } else {
    r.skip("label");
  }
  r.finish();
  return e;
}

inline json fragment_to_json(const LearningFragment& f) {
  json nodes = json::array();
  for (const auto& [id, node] : f.nodes) nodes.push_back(node_to_json(node));
  json edges = json::array();
  for (const auto& e : f.edges) edges.push_back(edge_to_json(e));
  json out = {{"id", f.id},
              {"title", f.title},
              {"version", f.version},
              {"entry", f.entry},
              {"provides", set_to_json(f.provides)},
              {"requires", set_to_json(f.requires_)},
              {"cost", f.cost},
              {"nodes", nodes},
              {"edges", edges}};
  if (!f.ui_metadata.is_null()) out["ui_metadata"] = f.ui_metadata;
  return out;
}

inline LearningFragment fragment_from_json(const json& doc) {
  ObjectReader r(doc, "$");
  LearningFragment f;
  f.id = r.string("id");
  f.title = r.string_or("title", "");
  f.version = static_cast<int>(r.integer("version"));
  f.entry = r.string("entry");
  f.provides = r.string_set("provides");
  f.requires_ = r.string_set("requires");
  f.cost = r.number_or("cost", 1.0);
  const json& nodes = r.raw("nodes");
  if (!nodes.is_array()) schema_error(r.at("nodes"), "expected array");
  if (nodes.empty()) schema_error(r.at("nodes"), "fragment needs at least one node");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    ActivityNode n = node_from_json(nodes[i], r.at("nodes") + "[" + std::to_string(i) + "]");
    std::string id = n.id;
    if (!f.nodes.emplace(id, std::move(n)).second) schema_error(r.at("nodes"), "duplicate node id '" + id + "'");
  }
  const json& edges = r.raw("edges");
  if (!edges.is_array()) schema_error(r.at("edges"), "expected array");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    f.edges.push_back(edge_from_json(edges[i], r.at("edges") + "[" + std::to_string(i) + "]"));
  }
  if (r.has("ui_metadata")) f.ui_metadata = r.raw("ui_metadata");
  r.skip("ui_metadata");
  r.finish();
  return f;
}

}  // namespace io

inline LearningFragment load_fragment(std::string_view document) {
  return io::fragment_from_json(io::parse_document(document));
}

inline std::string serialize_fragment(const LearningFragment& f) { return io::dump(io::fragment_to_json(f)); }

// ---------------------------------------------------------------------------
// Validation

struct ValidationIssue {
  std::string code;
  std::string element;  // node or edge id ("" for fragment-level)
  std::string message;
  json detail = json::object();  // e.g. {"position": n} for condition syntax errors
  bool operator==(const ValidationIssue&) const = default;
};

struct ValidationReport {
  std::vector<ValidationIssue> errors;
  std::vector<ValidationIssue> warnings;

  bool ok() const { return errors.empty(); }
  bool has_error(std::string_view code) const {
    return std::any_of(errors.begin(), errors.end(), [&](const auto& i) { return i.code == code; });
  }
  bool operator==(const ValidationReport&) const = default;
};

inline json report_to_json(const ValidationReport& report) {
  auto list = [](const std::vector<ValidationIssue>& issues) {
    json out = json::array();
    for (const auto& i : issues) {
      json issue = {{"code", i.code}, {"element", i.element}, {"message", i.message}};
      if (!i.detail.empty()) issue["detail"] = i.detail;
      out.push_back(std::move(issue));
    }
    return out;
  };
  return {{"ok", report.ok()}, {"errors", list(report.errors)}, {"warnings", list(report.warnings)}};
}

namespace detail {

// Strongly connected components (Tarjan), iterative.
inline std::vector<std::vector<std::string>> strongly_connected(const LearningFragment& f) {
  std::map<std::string, std::vector<std::string>> adj;
  for (const auto& e : f.edges) {
    if (f.nodes.contains(e.source) && f.nodes.contains(e.target)) adj[e.source].push_back(e.target);
  }
  std::map<std::string, int> index, low;
  std::set<std::string> on_stack;
  std::vector<std::string> stack;
  std::vector<std::vector<std::string>> components;
  int counter = 0;
  for (const auto& [root, unused] : f.nodes) {
    if (index.contains(root)) continue;
    std::vector<std::pair<std::string, std::size_t>> work{{root, 0}};
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack.insert(root);
    while (!work.empty()) {
      auto& [node, next] = work.back();
      const auto& succ = adj[node];
      if (next < succ.size()) {
        const std::string target = succ[next++];
        if (!index.contains(target)) {
          index[target] = low[target] = counter++;
          stack.push_back(target);
          on_stack.insert(target);
          work.emplace_back(target, 0);
        } else if (on_stack.contains(target)) {
          low[node] = std::min(low[node], index[target]);
        }
        continue;
      }
      const std::string done = node;
      work.pop_back();
      if (!work.empty()) low[work.back().first] = std::min(low[work.back().first], low[done]);
      if (low[done] == index[done]) {
        std::vector<std::string> component;
        while (true) {
          std::string top = stack.back();
          stack.pop_back();
          on_stack.erase(top);
          component.push_back(top);
          if (top == done) break;
        }
        std::sort(component.begin(), component.end());
        components.push_back(std::move(component));
      }
    }
  }
  return components;
}

}  // namespace detail

inline ValidationReport validate_fragment(const LearningFragment& f,
                                          const condition::VariableTypes& vars = condition::context_variables()) {
  ValidationReport report;
  auto error = [&](std::string code, std::string element, std::string message, json detail = json::object()) {
    report.errors.push_back({std::move(code), std::move(element), std::move(message), std::move(detail)});
  };

  if (f.id.empty()) error("EMPTY_ID", "", "fragment id is empty");
  if (f.version < 1) error("INVALID_VERSION", "", "version must be >= 1");
  if (!(f.cost > 0.0) || !std::isfinite(f.cost)) error("INVALID_COST", "", "cost must be a positive number");
  if (f.nodes.empty()) error("EMPTY_FRAGMENT", "", "fragment has no nodes");
  if (!f.nodes.empty() && !f.nodes.contains(f.entry)) {
    error("MISSING_ENTRY", f.entry, "entry '" + f.entry + "' is not a node");
  }

  for (const auto& [key, node] : f.nodes) {
    if (key != node.id) error("NODE_ID_MISMATCH", key, "node stored under '" + key + "' has id '" + node.id + "'");
    if (kind_of(node.kind_data) != node.kind) {
      error("KIND_DATA_MISMATCH", key, "kind_data does not match kind " + std::string(to_string(node.kind)));
    }
    if (node.kind == ActivityKind::Abstract) {
      if (!node.representations.empty()) {
        error("ABSTRACT_HAS_REPRESENTATION", key, "abstract activities carry no representations");
      }
    } else if (node.representations.empty()) {
      error("MISSING_REPRESENTATION", key, "concrete activity needs at least one representation");
    }
    if (node.max_attempts && *node.max_attempts < 1) error("INVALID_MAX_ATTEMPTS", key, "max_attempts must be >= 1");

    if (const auto* ce = std::get_if<CloseEndedData>(&node.kind_data)) {
      std::string expected_norm;
      double tolerance = kDefaultAnswerTolerance;
      if (const auto* s = std::get_if<std::string>(&ce->expected)) {
        expected_norm = normalize_answer(*s);
      } else {
        const auto& n = std::get<NumericAnswer>(ce->expected);
        expected_norm = format_number(n.value);
        tolerance = n.tolerance;
        if (!(n.tolerance >= 0.0)) error("NEGATIVE_TOLERANCE", key, "answer tolerance must be >= 0");
      }
      std::vector<std::string> seen;
      for (const auto& [answer, label] : ce->distractors) {
        const std::string norm = normalize_answer(answer);
        if (answers_match(norm, expected_norm, std::max(tolerance, 0.0))) {
          error("DISTRACTOR_CONFLICT", key, "distractor '" + answer + "' matches the expected answer");
        }
        for (const auto& other : seen) {
          if (answers_match(norm, other)) {
            error("DISTRACTOR_CONFLICT", key, "distractor '" + answer + "' duplicates another distractor");
          }
        }
        if (label.empty()) error("DISTRACTOR_CONFLICT", key, "distractor '" + answer + "' has an empty label");
        seen.push_back(norm);
      }
    } else if (const auto* quiz = std::get_if<QuizData>(&node.kind_data)) {
      if (quiz->items.empty()) error("QUIZ_EMPTY", key, "quiz has no items");
      for (std::size_t i = 0; i < quiz->items.size(); ++i) {
        const auto& item = quiz->items[i];
        if (item.choices.empty()) {
          error("QUIZ_EMPTY", key, "quiz item " + std::to_string(i) + " has no choices");
        } else if (item.correct < 0 || item.correct >= static_cast<int>(item.choices.size())) {
          error("QUIZ_CORRECT_OUT_OF_RANGE", key, "quiz item " + std::to_string(i) + " correct index out of range");
        }
      }
      if (!(quiz->pass_threshold >= 0.0 && quiz->pass_threshold <= 1.0)) {
        error("QUIZ_THRESHOLD_RANGE", key, "pass_threshold must lie in [0,1]");
      }
    } else if (const auto* coding = std::get_if<CodingData>(&node.kind_data)) {
      if (coding->grader.complexity_max && *coding->grader.complexity_max < 1) {
        error("INVALID_COMPLEXITY_MAX", key, "complexity_max must be >= 1");
      }
    } else if (const auto* abs = std::get_if<AbstractData>(&node.kind_data)) {
      if (abs->goal.empty()) error("EMPTY_GOAL", key, "abstract activity needs a non-empty goal");
    }
  }

  std::set<std::string> edge_ids;
  std::map<std::string, bool> source_has_unconditional;
  for (const auto& e : f.edges) {
    if (!edge_ids.insert(e.id).second) error("DUPLICATE_EDGE_ID", e.id, "duplicate edge id '" + e.id + "'");
    if (!f.nodes.contains(e.source)) error("DANGLING_EDGE", e.id, "edge source '" + e.source + "' is not a node");
    if (!f.nodes.contains(e.target)) error("DANGLING_EDGE", e.id, "edge target '" + e.target + "' is not a node");
    try {
      condition::ExprPtr expr = condition::compile(e.condition);
      condition::check_types(*expr, vars);
      if (source_has_unconditional[e.source]) {
        report.warnings.push_back({"SHADOWED_EDGE", e.id, "an earlier edge from '" + e.source + "' always fires", json::object()});
      }
      if (const auto* lit = std::get_if<condition::BoolLit>(&expr->node); lit && lit->value) {
        source_has_unconditional[e.source] = true;
      }
    } catch (const Error& err) {
      switch (err.code()) {
        case Errc::UnknownBuiltin: error("UNKNOWN_BUILTIN", e.id, err.what()); break;
        case Errc::SyntaxError: error("CONDITION_SYNTAX", e.id, err.what(), err.detail()); break;
        case Errc::UnknownVariable: error("UNKNOWN_VARIABLE", e.id, err.what()); break;
        default: error("CONDITION_TYPE", e.id, err.what()); break;
      }
    }
  }

  if (f.nodes.contains(f.entry)) {
    const auto reachable = reachable_from(f, f.entry);
    for (const auto& [key, node] : f.nodes) {
      if (!reachable.contains(key)) error("UNREACHABLE_NODE", key, "node '" + key + "' is unreachable from entry");
    }
    bool exit_reachable = false;
    for (const auto& id : reachable) exit_reachable = exit_reachable || is_exit(f, id);
    if (!exit_reachable) error("NO_REACHABLE_EXIT", f.entry, "no exit node is reachable from entry");
  }

  for (const auto& component : detail::strongly_connected(f)) {
    const std::set<std::string> members(component.begin(), component.end());
    bool cyclic = component.size() > 1;
    bool leaves = false;
    for (const auto& e : f.edges) {
      if (!members.contains(e.source) || !f.nodes.contains(e.target)) continue;
      if (members.contains(e.target)) {
        cyclic = cyclic || e.source == e.target;
      } else {
        leaves = true;
      }
    }
    if (cyclic && !leaves) {
      std::string joined;
      for (const auto& id : component) joined += (joined.empty() ? "" : ",") + id;
      error("TRAPPING_CYCLE", component.front(), "cycle {" + joined + "} has no edge leaving it");
    }
  }
  return report;
}

inline ValidationReport validate_fragment(const LearningFragment& f, const std::set<std::string>& context_vars) {
  condition::VariableTypes vars;
  for (const auto& name : context_vars) {
    auto it = condition::context_variables().find(name);
    if (it != condition::context_variables().end()) vars.emplace(name, it->second);
  }
  return validate_fragment(f, vars);
}

}  // namespace polyglot
