#pragma once

// Event-driven reward engine: points, badges and first-try streaks.

#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "polyglot/fragment.hpp"

namespace polyglot::gamification {

enum class Trigger { ActivityCompleted, FirstTryCorrect, Streak, SessionCompleted };

inline constexpr std::string_view to_string(Trigger t) {
  switch (t) {
    case Trigger::ActivityCompleted: return "activity_completed";
    case Trigger::FirstTryCorrect: return "first_try_correct";
    case Trigger::Streak: return "streak";
    case Trigger::SessionCompleted: return "session_completed";
  }
  return "?";
}

struct Rule {
  std::string id;
  Trigger trigger = Trigger::ActivityCompleted;
  int streak_length = 0;  // only for Trigger::Streak
  std::optional<ActivityKind> kind_filter;
  long long points = 0;
  std::optional<std::string> badge;
  std::string pack_id;  // filled in when packs are merged
  bool operator==(const Rule&) const = default;
};

struct RulePack {
  std::string id;
  std::set<ActivityKind> applies_to;
  std::vector<Rule> rules;
  bool operator==(const RulePack&) const = default;
};

struct State {
  long long points = 0;
  std::set<std::string> badges;
  int streak = 0;
  bool operator==(const State&) const = default;
};

struct ActivityEvent {
  std::string node;
  ActivityKind kind = ActivityKind::Lesson;
  bool passed = false;
  bool first_attempt = false;
  bool session_completed = false;
  bool operator==(const ActivityEvent&) const = default;
};

struct AwardRecord {
  std::string rule_id;
  std::string pack_id;
  long long points = 0;
  std::optional<std::string> badge;
  bool operator==(const AwardRecord&) const = default;
};

inline bool rule_fires(const Rule& rule, const State& after, const ActivityEvent& ev) {
  if (rule.kind_filter && *rule.kind_filter != ev.kind) return false;
  switch (rule.trigger) {
    case Trigger::ActivityCompleted: return ev.passed;
    case Trigger::FirstTryCorrect: return ev.passed && ev.first_attempt;
    case Trigger::Streak: return after.streak == rule.streak_length && ev.passed && ev.first_attempt;
    case Trigger::SessionCompleted: return ev.session_completed;
  }
  return false;
}

inline std::pair<State, std::vector<AwardRecord>> process_event(State state, const ActivityEvent& ev,
                                                                const std::vector<Rule>& rules) {
  state.streak = (ev.passed && ev.first_attempt) ? state.streak + 1 : 0;
  std::vector<AwardRecord> awards;
  for (const auto& rule : rules) {
    if (!rule_fires(rule, state, ev)) continue;
    state.points += rule.points;
    if (rule.badge) state.badges.insert(*rule.badge);
    awards.push_back({rule.id, rule.pack_id, rule.points, rule.badge});
  }
  return {std::move(state), std::move(awards)};
}

inline State replay(const std::vector<ActivityEvent>& events, const std::vector<Rule>& rules) {
  State state;
  for (const auto& ev : events) state = process_event(std::move(state), ev, rules).first;
  return state;
}

// ---------------------------------------------------------------------------
// Documents

inline json rule_to_json(const Rule& r) {
  json out = {{"id", r.id},
              {"trigger", std::string(to_string(r.trigger))},
              {"kind_filter", r.kind_filter ? json(std::string(polyglot::to_string(*r.kind_filter))) : json(nullptr)},
              {"award", {{"points", r.points}, {"badge", r.badge ? json(*r.badge) : json(nullptr)}}}};
  if (r.trigger == Trigger::Streak) out["n"] = r.streak_length;
  if (!r.pack_id.empty()) out["pack"] = r.pack_id;
  return out;
}

inline Rule rule_from_json(const json& v, const std::string& path) {
  io::ObjectReader r(v, path);
  Rule rule;
  rule.id = r.string("id");
  const std::string trigger = r.string("trigger");
  if (trigger == "activity_completed") {
    rule.trigger = Trigger::ActivityCompleted;
  } else if (trigger == "first_try_correct") {
    rule.trigger = Trigger::FirstTryCorrect;
  } else if (trigger == "streak") {
    rule.trigger = Trigger::Streak;
  } else if (trigger == "session_completed") {
    rule.trigger = Trigger::SessionCompleted;
  } else {
    io::schema_error(r.at("trigger"), "unknown trigger '" + trigger + "'");
  }
  if (rule.trigger == Trigger::Streak) {
    rule.streak_length = static_cast<int>(r.integer("n"));
    if (rule.streak_length < 2) io::schema_error(r.at("n"), "streak length must be >= 2");
  } else {
    r.skip("n");
  }
  if (r.has("kind_filter")) {
    rule.kind_filter = io::read_kind(r.string("kind_filter"), r.at("kind_filter"));
  } else {
    r.skip("kind_filter");
  }
  io::ObjectReader award(r.raw("award"), r.at("award"));
  rule.points = award.integer("points");
  if (award.has("badge")) {
    rule.badge = award.string("badge");
  } else {
    award.skip("badge");
  }
  award.finish();
  rule.pack_id = r.string_or("pack", "");
  r.finish();
  return rule;
}

inline json pack_to_json(const RulePack& p) {
  json kinds = json::array();
  for (auto k : p.applies_to) kinds.push_back(std::string(polyglot::to_string(k)));
  std::sort(kinds.begin(), kinds.end());
  json rules = json::array();
  for (const auto& r : p.rules) rules.push_back(rule_to_json(r));
  return {{"id", p.id}, {"applies_to", kinds}, {"rules", rules}};
}

inline RulePack pack_from_json(const json& v) {
  io::ObjectReader r(v, "$");
  RulePack p;
  p.id = r.string("id");
  for (const auto& k : r.strings("applies_to")) p.applies_to.insert(io::read_kind(k, r.at("applies_to")));
  const json& rules = r.raw("rules");
  if (!rules.is_array()) io::schema_error(r.at("rules"), "expected array");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    Rule rule = rule_from_json(rules[i], r.at("rules") + "[" + std::to_string(i) + "]");
    if (!ids.insert(rule.id).second) io::schema_error(r.at("rules"), "duplicate rule id '" + rule.id + "'");
    p.rules.push_back(std::move(rule));
  }
  r.finish();
  return p;
}

inline RulePack load_pack(std::string_view document) { return pack_from_json(io::parse_document(document)); }

inline json state_to_json(const State& s) {
  return {{"points", s.points}, {"badges", io::set_to_json(s.badges)}, {"streak", s.streak}};
}

inline State state_from_json(const json& v) {
  io::ObjectReader r(v, "gamification");
  State s;
  s.points = r.integer("points");
  s.badges = r.string_set("badges");
  s.streak = static_cast<int>(r.integer("streak"));
  r.finish();
  return s;
}

inline json event_to_json(const ActivityEvent& e) {
  return {{"node", e.node},
          {"kind", std::string(polyglot::to_string(e.kind))},
          {"passed", e.passed},
          {"first_attempt", e.first_attempt},
          {"session_completed", e.session_completed}};
}

inline ActivityEvent event_from_json(const json& v) {
  io::ObjectReader r(v, "event");
  ActivityEvent e;
  e.node = r.string("node");
  e.kind = io::read_kind(r.string("kind"), r.at("kind"));
  const auto flag = [&](std::string_view key) {
    const json& b = r.raw(key);
    if (!b.is_boolean()) io::schema_error(r.at(key), "expected boolean");
    return b.get<bool>();
  };
  e.passed = flag("passed");
  e.first_attempt = flag("first_attempt");
  e.session_completed = flag("session_completed");
  r.finish();
  return e;
}

inline json award_to_json(const AwardRecord& a) {
  return {{"rule", a.rule_id}, {"pack", a.pack_id}, {"points", a.points}, {"badge", a.badge ? json(*a.badge) : json(nullptr)}};
}

inline AwardRecord award_from_json(const json& v) {
  io::ObjectReader r(v, "award");
  AwardRecord a;
  a.rule_id = r.string("rule");
  a.pack_id = r.string("pack");
  a.points = r.integer("points");
  if (r.has("badge")) {
    a.badge = r.string("badge");
  } else {
    r.skip("badge");
  }
  r.finish();
  return a;
}

inline json rules_to_json(const std::vector<Rule>& rules) {
  json out = json::array();
  for (const auto& r : rules) out.push_back(rule_to_json(r));
  return out;
}

inline std::vector<Rule> rules_from_json(const json& v) {
  if (!v.is_array()) io::schema_error("rules", "expected array");
  std::vector<Rule> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(rule_from_json(v[i], "rules[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace polyglot::gamification
