#pragma once

// Runtime refinement of abstract activities.
//
// plan_goal() picks catalog fragments by greedy weighted set cover over the
// goal concepts, closes over unmet prerequisites, then orders the selection
// topologically (provider before requirer, ties by fragment id). refine()
// splices each plan into the host graph as a linear chain and recurses into
// abstract activities brought in by the chosen fragments.

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "polyglot/condition.hpp"
#include "polyglot/fragment.hpp"
#include "polyglot/gamification.hpp"

namespace polyglot::planner {

struct CatalogEntry {
  FragmentRef ref;
  ConceptSet provides;
  ConceptSet requires_;
  double cost = 1.0;
  std::set<ActivityKind> kinds_present;
  ModalitySet modalities_required;
  std::set<std::string> gamification_tags;
  int node_count = 0;  // 0 = unknown
  bool operator==(const CatalogEntry&) const = default;
};

struct FragmentCatalog {
  std::vector<CatalogEntry> entries;
};

struct RefinementLimits {
  int max_depth = 3;
  int max_chain_length = 16;
};

struct Plan {
  std::vector<FragmentRef> fragments;
  ConceptSet covered;
  double total_cost = 0.0;
};

// Modalities that are the only representation of some node.
inline ModalitySet required_modalities(const LearningFragment& f) {
  ModalitySet out;
  for (const auto& [id, node] : f.nodes) {
    if (node.representations.size() == 1) out.insert(node.representations.begin()->first);
  }
  return out;
}

inline CatalogEntry catalog_entry_for(const LearningFragment& f) {
  CatalogEntry e;
  e.ref = {f.id, f.version};
  e.provides = f.provides;
  e.requires_ = f.requires_;
  e.cost = f.cost;
  for (const auto& [id, node] : f.nodes) e.kinds_present.insert(node.kind);
  e.modalities_required = required_modalities(f);
  e.node_count = static_cast<int>(f.nodes.size());
  return e;
}

namespace detail {

inline ConceptSet set_minus(const ConceptSet& a, const ConceptSet& b) {
  ConceptSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

inline bool intersects(const ConceptSet& a, const ConceptSet& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      return true;
    }
  }
  return false;
}

inline std::size_t overlap(const ConceptSet& a, const ConceptSet& b) {
  std::size_t n = 0;
  for (const auto& c : a) n += b.count(c);
  return n;
}

inline json to_json(const ConceptSet& s) { return io::set_to_json(s); }

}  // namespace detail

inline bool entry_admissible(const CatalogEntry& e, const AbstractConstraints& constraints,
                             const std::optional<ModalitySet>& capabilities) {
  if (constraints.allowed_kinds) {
    for (auto k : e.kinds_present) {
      if (!constraints.allowed_kinds->contains(k)) return false;
    }
  }
  if (capabilities) {
    for (auto m : e.modalities_required) {
      if (!capabilities->contains(m)) return false;
    }
  }
  if (constraints.required_modality) {
    for (auto m : e.modalities_required) {
      if (m != *constraints.required_modality) return false;
    }
  }
  if (constraints.max_nodes && e.node_count > *constraints.max_nodes) return false;
  return true;
}

inline Plan plan_goal(const ConceptSet& goal, const ConceptSet& known, const FragmentCatalog& catalog,
                      const AbstractConstraints& constraints = {},
                      const std::optional<ModalitySet>& capabilities = std::nullopt,
                      int max_chain_length = RefinementLimits{}.max_chain_length) {
  if (goal.empty()) throw Error(Errc::BadRequest, "goal must be non-empty");

  std::vector<const CatalogEntry*> candidates;
  for (const auto& e : catalog.entries) {
    if (entry_admissible(e, constraints, capabilities)) candidates.push_back(&e);
  }

  std::vector<const CatalogEntry*> selected;
  std::set<const CatalogEntry*> chosen;
  ConceptSet covered;

  // Greedy weighted cover of `target`: minimise cost / |provides ∩ uncovered|.
  auto cover = [&](const ConceptSet& target, bool prerequisites) {
    ConceptSet uncovered = detail::set_minus(detail::set_minus(target, known), covered);
    while (!uncovered.empty()) {
      const CatalogEntry* best = nullptr;
      std::size_t best_gain = 0;
      for (const CatalogEntry* e : candidates) {
        if (chosen.contains(e)) continue;
        const std::size_t gain = detail::overlap(e->provides, uncovered);
        if (gain == 0) continue;
        if (!best) {
          best = e;
          best_gain = gain;
          continue;
        }
        const double lhs = e->cost * static_cast<double>(best_gain);
        const double rhs = best->cost * static_cast<double>(gain);
        if (lhs < rhs || (lhs == rhs && e->ref < best->ref)) {
          best = e;
          best_gain = gain;
        }
      }
      if (!best) {
        throw Error(Errc::UncoverableGoal,
                    prerequisites ? "prerequisites cannot be covered by the catalog" : "goal cannot be covered by the catalog",
                    {{"missing", detail::to_json(uncovered)}, {"prerequisites", prerequisites}});
      }
      selected.push_back(best);
      chosen.insert(best);
      covered.insert(best->provides.begin(), best->provides.end());
      uncovered = detail::set_minus(uncovered, best->provides);
    }
  };

  cover(goal, false);
  while (true) {
    ConceptSet missing;
    for (const CatalogEntry* e : selected) {
      for (const auto& c : e->requires_) {
        if (!known.contains(c) && !covered.contains(c)) missing.insert(c);
      }
    }
    if (missing.empty()) break;
    cover(missing, true);
    if (static_cast<int>(selected.size()) > max_chain_length) break;
  }
  if (static_cast<int>(selected.size()) > max_chain_length) {
    throw Error(Errc::ChainTooLong, "plan needs more than " + std::to_string(max_chain_length) + " fragments",
                {{"length", selected.size()}, {"max_chain_length", max_chain_length}});
  }

  Plan plan;
  int total_nodes = 0;
  for (const CatalogEntry* e : selected) {
    plan.total_cost += e->cost;
    total_nodes += e->node_count;
  }
  if (constraints.max_nodes && total_nodes > *constraints.max_nodes) {
    throw Error(Errc::UncoverableGoal, "plan exceeds the max_nodes constraint",
                {{"missing", detail::to_json(goal)}, {"reason", "max_nodes"}, {"nodes", total_nodes}});
  }

  // Kahn's algorithm, smallest ref first among ready entries.
  const std::size_t n = selected.size();
  std::vector<std::vector<std::size_t>> successors(n);
  std::vector<int> indegree(n, 0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a != b && detail::intersects(selected[a]->provides, selected[b]->requires_)) {
        successors[a].push_back(b);
        ++indegree[b];
      }
    }
  }
  auto later = [&](std::size_t a, std::size_t b) { return selected[b]->ref < selected[a]->ref; };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(later)> ready(later);
  for (std::size_t i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push(i);
  }
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    plan.fragments.push_back(selected[i]->ref);
    for (std::size_t j : successors[i]) {
      if (--indegree[j] == 0) ready.push(j);
    }
  }
  if (plan.fragments.size() != n) {
    json ids = json::array();
    for (std::size_t i = 0; i < n; ++i) {
      if (indegree[i] > 0) ids.push_back(selected[i]->ref.id);
    }
    throw Error(Errc::PrerequisiteCycle, "selected fragments have cyclic prerequisites", {{"fragments", ids}});
  }
  plan.covered = covered;
  return plan;
}

// ---------------------------------------------------------------------------
// Refinement

using FragmentResolver = std::function<LearningFragment(const FragmentRef&)>;

inline FragmentResolver resolver_from(std::vector<LearningFragment> fragments) {
  auto table = std::make_shared<std::map<FragmentRef, LearningFragment>>();
  for (auto& f : fragments) {
    FragmentRef ref{f.id, f.version};
    table->emplace(ref, std::move(f));
  }
  return [table](const FragmentRef& ref) -> LearningFragment {
    auto it = table->find(ref);
    if (it == table->end()) {
      throw Error(Errc::NotFound, "catalog fragment " + to_string(ref) + " not available",
                  {{"id", ref.id}, {"version", ref.version}});
    }
    return it->second;
  };
}

struct Splice {
  std::string abstract_node;
  int depth = 1;
  ConceptSet known;
  Plan plan;
};

namespace detail {

// Node ids in breadth-first order from entry, successors in edge order.
inline std::vector<std::string> bfs_order(const LearningFragment& f) {
  std::vector<std::string> order;
  std::set<std::string> seen{f.entry};
  std::deque<std::string> queue{f.entry};
  while (!queue.empty()) {
    std::string id = queue.front();
    queue.pop_front();
    order.push_back(id);
    for (const auto& e : f.edges) {
      if (e.source == id && f.nodes.contains(e.target) && seen.insert(e.target).second) queue.push_back(e.target);
    }
  }
  for (const auto& [id, node] : f.nodes) {
    if (!seen.contains(id)) order.push_back(id);
  }
  return order;
}

// Must-reach known concepts on entry to each node: intersection over all
// predecessors of (known on entry ∪ concepts gained on leaving it).
inline std::map<std::string, ConceptSet> known_on_entry(const LearningFragment& f,
                                                        const std::map<std::string, ConceptSet>& gain) {
  std::map<std::string, std::optional<ConceptSet>> in;  // nullopt = not yet constrained (top)
  in[f.entry] = f.requires_;
  const auto order = bfs_order(f);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& id : order) {
      if (!in[id]) continue;
      ConceptSet out = *in[id];
      if (auto g = gain.find(id); g != gain.end()) out.insert(g->second.begin(), g->second.end());
      for (const auto& e : f.edges) {
        if (e.source != id || e.target == f.entry || !f.nodes.contains(e.target)) continue;
        auto& target = in[e.target];
        if (!target) {
          target = out;
          changed = true;
        } else {
          ConceptSet meet;
          std::set_intersection(target->begin(), target->end(), out.begin(), out.end(),
                                std::inserter(meet, meet.end()));
          if (meet != *target) {
            target = std::move(meet);
            changed = true;
          }
        }
      }
    }
  }
  std::map<std::string, ConceptSet> result;
  for (auto& [id, value] : in) result[id] = value.value_or(ConceptSet{});
  return result;
}

}  // namespace detail

inline LearningFragment refine(const LearningFragment& fragment, const FragmentCatalog& catalog,
                               const FragmentResolver& resolve,
                               const std::optional<ModalitySet>& capabilities = std::nullopt,
                               const RefinementLimits& limits = {}, std::vector<Splice>* trace = nullptr) {
  if (limits.max_depth < 1 || limits.max_chain_length < 1) {
    throw Error(Errc::BadRequest, "refinement limits must be positive");
  }
  LearningFragment g = fragment;
  std::map<std::string, ConceptSet> gain;
  std::map<std::string, int> depth;

  while (true) {
    std::string target;
    for (const auto& id : detail::bfs_order(g)) {
      if (g.nodes.at(id).kind == ActivityKind::Abstract) {
        target = id;
        break;
      }
    }
    if (target.empty()) break;

    const int level = depth.contains(target) ? depth.at(target) : 1;
    if (level > limits.max_depth) {
      throw Error(Errc::DepthExceeded,
                  "refinement of '" + target + "' exceeds max depth " + std::to_string(limits.max_depth),
                  {{"node", target}, {"max_depth", limits.max_depth}});
    }
    const auto& data = std::get<AbstractData>(g.nodes.at(target).kind_data);
    const ConceptSet known = detail::known_on_entry(g, gain)[target];
    Plan plan = plan_goal(data.goal, known, catalog, data.constraints, capabilities, limits.max_chain_length);
    if (plan.fragments.empty()) {
      plan = plan_goal(data.goal, {}, catalog, data.constraints, capabilities, limits.max_chain_length);
    }
    if (trace) trace->push_back({target, level, known, plan});

    std::vector<LearningFragment> parts;
    for (const auto& ref : plan.fragments) parts.push_back(resolve(ref));

    const std::string prefix = target + ".";
    auto local = [&](std::size_t k, const std::string& id) { return prefix + std::to_string(k) + "." + id; };
    const std::string first_entry = local(0, parts.front().entry);
    const std::size_t last = parts.size() - 1;
    const std::vector<std::string> last_exits = exit_nodes(parts.back());

    LearningFragment next = g;
    next.nodes.erase(target);
    next.edges.clear();
    if (g.entry == target) next.entry = first_entry;
    auto retarget = [&](const std::string& id) { return id == target ? first_entry : id; };

    for (const auto& e : g.edges) {
      if (e.source != target) {
        Edge copy = e;
        copy.target = retarget(e.target);
        next.edges.push_back(std::move(copy));
      } else {
        for (const auto& x : last_exits) {
          Edge copy = e;
          copy.id = prefix + "out." + x + "." + e.id;
          copy.source = local(last, x);
          copy.target = retarget(e.target);
          next.edges.push_back(std::move(copy));
        }
      }
    }
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const LearningFragment& part = parts[k];
      const std::vector<std::string> exits = exit_nodes(part);
      for (const auto& [id, node] : part.nodes) {
        ActivityNode copy = node;
        copy.id = local(k, id);
        if (copy.kind == ActivityKind::Abstract) depth[copy.id] = level + 1;
        next.nodes.emplace(copy.id, std::move(copy));
      }
      for (const auto& x : exits) gain[local(k, x)].insert(part.provides.begin(), part.provides.end());
      for (const auto& e : part.edges) {
        Edge copy = e;
        copy.id = local(k, e.id);
        copy.source = local(k, e.source);
        copy.target = local(k, e.target);
        next.edges.push_back(std::move(copy));
      }
      if (k < last) {
        const std::string next_entry = local(k + 1, parts[k + 1].entry);
        for (const auto& x : exits) {
          next.edges.push_back({prefix + std::to_string(k) + ".link." + x, local(k, x), next_entry,
                                condition::ConditionSpec::builtin("pass"), std::nullopt});
        }
      }
    }
    gain.erase(target);
    depth.erase(target);
    g = std::move(next);
  }

  ValidationReport report = validate_fragment(g);
  if (!report.ok()) {
    throw Error(Errc::ResultInvalid, "refined fragment failed validation", report_to_json(report));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Gamification attachment

struct GamificationAttachment {
  std::vector<gamification::RulePack> packs;  // selected, ordered by id
  std::vector<gamification::Rule> rules;      // merged, pack_id filled in
  std::vector<std::string> warnings;
};

inline GamificationAttachment attach_gamification(const LearningFragment& refined,
                                                  std::vector<gamification::RulePack> packs) {
  if (has_abstract_nodes(refined)) {
    throw Error(Errc::UnrefinedFragment, "gamification attaches to refined fragments only");
  }
  const auto histogram = kind_histogram(refined);
  std::sort(packs.begin(), packs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  GamificationAttachment out;
  std::map<std::string, std::string> owner;  // rule id -> pack id
  for (auto& pack : packs) {
    const bool applies = std::any_of(pack.applies_to.begin(), pack.applies_to.end(),
                                     [&](ActivityKind k) { return histogram.contains(k); });
    if (!applies) continue;
    for (const auto& rule : pack.rules) {
      auto [it, inserted] = owner.emplace(rule.id, pack.id);
      if (!inserted) {
        out.warnings.push_back("rule '" + rule.id + "' of pack '" + pack.id + "' shadowed by pack '" + it->second + "'");
        continue;
      }
      gamification::Rule merged = rule;
      merged.pack_id = pack.id;
      out.rules.push_back(std::move(merged));
    }
    out.packs.push_back(std::move(pack));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Documents

inline json entry_to_json(const CatalogEntry& e) {
  auto kinds = json::array();
  for (auto k : e.kinds_present) kinds.push_back(std::string(to_string(k)));
  std::sort(kinds.begin(), kinds.end());
  auto mods = json::array();
  for (auto m : e.modalities_required) mods.push_back(std::string(to_string(m)));
  std::sort(mods.begin(), mods.end());
  return {{"id", e.ref.id},
          {"version", e.ref.version},
          {"provides", io::set_to_json(e.provides)},
          {"requires", io::set_to_json(e.requires_)},
          {"cost", e.cost},
          {"kinds_present", kinds},
          {"modalities_required", mods},
          {"gamification_tags", io::set_to_json(e.gamification_tags)},
          {"node_count", e.node_count}};
}

inline CatalogEntry entry_from_json(const json& v, const std::string& path) {
  io::ObjectReader r(v, path);
  CatalogEntry e;
  e.ref.id = r.string("id");
  e.ref.version = static_cast<int>(r.optional_integer("version").value_or(1));
  e.provides = r.string_set("provides", true);
  e.requires_ = r.string_set("requires");
  e.cost = r.number_or("cost", 1.0);
  for (const auto& k : r.strings_or_empty("kinds_present")) e.kinds_present.insert(io::read_kind(k, r.at("kinds_present")));
  for (const auto& m : r.strings_or_empty("modalities_required")) {
    e.modalities_required.insert(io::read_modality(m, r.at("modalities_required")));
  }
  e.gamification_tags = r.string_set("gamification_tags");
  e.node_count = static_cast<int>(r.optional_integer("node_count").value_or(0));
  r.finish();
  if (e.provides.empty()) io::schema_error(path + ".provides", "catalog entry must provide at least one concept");
  if (!(e.cost > 0.0)) io::schema_error(path + ".cost", "cost must be positive");
  return e;
}

inline json catalog_to_json(const FragmentCatalog& c) {
  json out = json::array();
  for (const auto& e : c.entries) out.push_back(entry_to_json(e));
  return out;
}

// Accepts a bare array of entries or an object {"entries": [...], ...}.
inline FragmentCatalog catalog_from_json(const json& doc) {
  const json* entries = &doc;
  if (doc.is_object()) {
    if (!doc.contains("entries")) io::schema_error("$.entries", "missing required field");
    entries = &doc.at("entries");
  }
  if (!entries->is_array()) io::schema_error("$", "catalog must be an array of entries");
  FragmentCatalog c;
  std::set<FragmentRef> ids;
  for (std::size_t i = 0; i < entries->size(); ++i) {
    CatalogEntry e = entry_from_json((*entries)[i], "$[" + std::to_string(i) + "]");
    if (!ids.insert(e.ref).second) io::schema_error("$", "duplicate catalog entry " + to_string(e.ref));
    c.entries.push_back(std::move(e));
  }
  return c;
}

inline FragmentCatalog load_catalog(std::string_view document) {
  return catalog_from_json(io::parse_document(document));
}

inline json plan_to_json(const Plan& p) {
  json fragments = json::array();
  for (const auto& ref : p.fragments) fragments.push_back({{"id", ref.id}, {"version", ref.version}});
  return {{"fragments", fragments}, {"covered", io::set_to_json(p.covered)}, {"total_cost", p.total_cost}};
}

}  // namespace polyglot::planner
