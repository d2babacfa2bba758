#pragma once

// Cohort simulator: drives synthetic students through a refined fragment with
// the real engine, plus the absorbing-Markov-chain oracle for expected steps.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

// <resolv.h> (pulled in by socket headers) defines _res, which Eigen uses as a parameter name.
#pragma push_macro("_res")
#undef _res
#include <Eigen/Dense>
#pragma pop_macro("_res")

#include "polyglot/engine.hpp"
#include "polyglot/fragment.hpp"

namespace polyglot::sim {

// SplitMix64 (Steele, Lea, Flood 2014). Constants are part of the on-disk
// determinism contract: changing them changes every golden metrics file.
class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kMix1 = 0xBF58476D1CE4E5B9ULL;
  static constexpr std::uint64_t kMix2 = 0x94D049BB133111EBULL;

  explicit SplitMix64(std::uint64_t state) : state_(state) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * kMix1;
    z = (z ^ (z >> 27)) * kMix2;
    return z ^ (z >> 31);
  }

  std::uint64_t next() {
    state_ += kGamma;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
};

// Independent stream per trial: state = mix(seed) ^ mix(gamma * (trial + 1)).
inline SplitMix64 trial_stream(std::uint64_t seed, std::uint64_t trial) {
  return SplitMix64(SplitMix64::mix(seed) ^ SplitMix64::mix(SplitMix64::kGamma * (trial + 1)));
}

// ---------------------------------------------------------------------------
// Student model

struct StudentModel {
  std::map<ActivityKind, double> pass_probability;  // missing kinds pass with probability 1
  std::optional<double> quiz_item_probability;
  // node id -> {"correct" | distractor label | "other" -> probability}
  std::map<std::string, std::map<std::string, double>> close_ended_answers;

  double pass(ActivityKind k) const {
    auto it = pass_probability.find(k);
    return it == pass_probability.end() ? 1.0 : it->second;
  }
  double quiz_item() const { return quiz_item_probability.value_or(pass(ActivityKind::Quiz)); }
};

inline StudentModel uniform_model(double p) {
  StudentModel m;
  for (auto k : {ActivityKind::CloseEnded, ActivityKind::Quiz, ActivityKind::Coding}) m.pass_probability[k] = p;
  return m;
}

inline StudentModel model_from_json(const json& doc) {
  io::ObjectReader r(doc, "$");
  StudentModel m;
  auto check_probability = [](double p, const std::string& path) {
    if (!(p >= 0.0 && p <= 1.0)) io::schema_error(path, "probability must lie in [0,1]");
    return p;
  };
  if (r.has("pass_probability")) {
    const json& pp = r.raw("pass_probability");
    if (!pp.is_object()) io::schema_error(r.at("pass_probability"), "expected object kind -> probability");
    for (auto it = pp.begin(); it != pp.end(); ++it) {
      const std::string path = r.at("pass_probability") + "." + it.key();
      if (!it->is_number()) io::schema_error(path, "expected number");
      m.pass_probability[io::read_kind(it.key(), path)] = check_probability(it->get<double>(), path);
    }
  } else {
    r.skip("pass_probability");
  }
  if (r.has("quiz_item_probability")) {
    m.quiz_item_probability = check_probability(r.number("quiz_item_probability"), r.at("quiz_item_probability"));
  } else {
    r.skip("quiz_item_probability");
  }
  if (r.has("close_ended_answers")) {
    const json& ca = r.raw("close_ended_answers");
    if (!ca.is_object()) io::schema_error(r.at("close_ended_answers"), "expected object node -> distribution");
    for (auto it = ca.begin(); it != ca.end(); ++it) {
      const std::string path = r.at("close_ended_answers") + "." + it.key();
      if (!it->is_object()) io::schema_error(path, "expected object outcome -> probability");
      double total = 0.0;
      for (auto jt = it->begin(); jt != it->end(); ++jt) {
        if (!jt->is_number()) io::schema_error(path + "." + jt.key(), "expected number");
        total += m.close_ended_answers[it.key()][jt.key()] = check_probability(jt->get<double>(), path + "." + jt.key());
      }
      if (std::fabs(total - 1.0) > 1e-9) io::schema_error(path, "distribution must sum to 1");
    }
  } else {
    r.skip("close_ended_answers");
  }
  r.finish();
  return m;
}

inline StudentModel load_model(std::string_view document) { return model_from_json(io::parse_document(document)); }

// ---------------------------------------------------------------------------
// Submission synthesis

// A source that passes (or, when possible, fails) the node's coding grader.
inline std::string synthesize_coding_source(const CodingData& data, bool pass) {
  const GraderSpec& g = data.grader;
  std::string markers;
  for (const auto& v : g.test_vectors) markers += std::string(engine::kOutputMarker) + v.expected_output + "\n";
  std::string tokens;
  for (const auto& t : g.required_tokens) tokens += t + "\n";
  if (pass) return tokens + markers;
  if (!g.required_tokens.empty()) return markers;
  if (!g.forbidden_tokens.empty()) return tokens + g.forbidden_tokens.front() + "\n" + markers;
  if (g.complexity_max && !g.branch_keywords.empty()) {
    std::string branches;
    for (int i = 0; i < *g.complexity_max; ++i) branches += g.branch_keywords.front() + "\n";
    return tokens + branches + markers;
  }
  if (g.plugin == "echo" && !g.test_vectors.empty()) {
    std::string wrong;
    for (const auto& v : g.test_vectors) wrong += std::string(engine::kOutputMarker) + v.expected_output + "#\n";
    return tokens + wrong;
  }
  return tokens + markers;
}

namespace detail {

inline std::string expected_answer_text(const CloseEndedData& data) {
  if (const auto* s = std::get_if<std::string>(&data.expected)) return *s;
  return format_number(std::get<NumericAnswer>(data.expected).value);
}

// An answer that matches neither the expected answer nor any distractor.
inline std::string other_answer(const CloseEndedData& data) {
  std::string candidate = "(other)";
  while (true) {
    auto outcome = engine::grade_close_ended(data, candidate);
    if (!outcome.passed && outcome.label.empty()) return candidate;
    candidate += "~";
  }
}

inline std::string distractor_answer(const CloseEndedData& data, const std::string& label) {
  for (const auto& [answer, l] : data.distractors) {
    if (l == label) return answer;
  }
  throw Error(Errc::BadRequest, "model references unknown distractor label '" + label + "'", {{"label", label}});
}

// Ordered answer distribution for a close-ended node.
inline std::vector<std::pair<std::string, double>> close_ended_distribution(const ActivityNode& node,
                                                                            const StudentModel& model) {
  const auto& data = std::get<CloseEndedData>(node.kind_data);
  std::vector<std::pair<std::string, double>> out;
  auto it = model.close_ended_answers.find(node.id);
  if (it == model.close_ended_answers.end()) {
    const double p = model.pass(ActivityKind::CloseEnded);
    out.emplace_back(expected_answer_text(data), p);
    out.emplace_back(other_answer(data), 1.0 - p);
    return out;
  }
  for (const auto& [outcome, p] : it->second) {
    if (outcome == "correct") {
      out.emplace_back(expected_answer_text(data), p);
    } else if (outcome == "other") {
      out.emplace_back(other_answer(data), p);
    } else {
      out.emplace_back(distractor_answer(data, outcome), p);
    }
  }
  return out;
}

inline double item_probability(const QuizItem& item, double p) { return item.choices.size() <= 1 ? 1.0 : p; }

inline int wrong_choice(const QuizItem& item) {
  return (item.correct + 1) % static_cast<int>(item.choices.size());
}

}  // namespace detail

inline engine::Submission sample_submission(const ActivityNode& node, const StudentModel& model, SplitMix64& rng) {
  switch (node.kind) {
    case ActivityKind::Lesson:
      return engine::LessonAck{};
    case ActivityKind::CloseEnded: {
      const auto dist = detail::close_ended_distribution(node, model);
      const double u = rng.uniform();
      double cumulative = 0.0;
      for (const auto& [answer, p] : dist) {
        cumulative += p;
        if (u < cumulative) return engine::CloseEndedAnswer{answer};
      }
      return engine::CloseEndedAnswer{dist.back().first};
    }
    case ActivityKind::Quiz: {
      const auto& quiz = std::get<QuizData>(node.kind_data);
      engine::QuizAnswer answer;
      for (const auto& item : quiz.items) {
        const bool right = rng.bernoulli(detail::item_probability(item, model.quiz_item()));
        answer.choices.push_back(right ? item.correct : detail::wrong_choice(item));
      }
      return answer;
    }
    case ActivityKind::Coding: {
      const bool pass = rng.bernoulli(model.pass(ActivityKind::Coding));
      return engine::CodingAnswer{synthesize_coding_source(std::get<CodingData>(node.kind_data), pass)};
    }
    case ActivityKind::Abstract:
      break;
  }
  throw Error(Errc::UnrefinedFragment, "cannot simulate abstract activity '" + node.id + "'");
}

struct OutcomeBranch {
  double probability;
  engine::Submission submission;
};

// Exhaustive outcome classes of one node under the model.
inline std::vector<OutcomeBranch> outcome_branches(const ActivityNode& node, const StudentModel& model) {
  std::vector<OutcomeBranch> out;
  switch (node.kind) {
    case ActivityKind::Lesson:
      out.push_back({1.0, engine::LessonAck{}});
      break;
    case ActivityKind::CloseEnded:
      for (const auto& [answer, p] : detail::close_ended_distribution(node, model)) {
        out.push_back({p, engine::CloseEndedAnswer{answer}});
      }
      break;
    case ActivityKind::Quiz: {
      // Poisson-binomial distribution of the number of correct items.
      const auto& quiz = std::get<QuizData>(node.kind_data);
      const double q = model.quiz_item();
      std::vector<double> dist{1.0};
      std::vector<std::size_t> forced, free;
      for (std::size_t i = 0; i < quiz.items.size(); ++i) {
        const double p = detail::item_probability(quiz.items[i], q);
        (quiz.items[i].choices.size() <= 1 ? forced : free).push_back(i);
        std::vector<double> next(dist.size() + 1, 0.0);
        for (std::size_t k = 0; k < dist.size(); ++k) {
          next[k] += dist[k] * (1.0 - p);
          next[k + 1] += dist[k] * p;
        }
        dist = std::move(next);
      }
      for (std::size_t k = forced.size(); k < dist.size(); ++k) {
        engine::QuizAnswer answer;
        for (const auto& item : quiz.items) answer.choices.push_back(detail::wrong_choice(item));
        for (std::size_t i : forced) answer.choices[i] = quiz.items[i].correct;
        for (std::size_t j = 0; j < k - forced.size(); ++j) answer.choices[free[j]] = quiz.items[free[j]].correct;
        out.push_back({dist[k], std::move(answer)});
      }
      break;
    }
    case ActivityKind::Coding: {
      const auto& data = std::get<CodingData>(node.kind_data);
      const double p = model.pass(ActivityKind::Coding);
      out.push_back({p, engine::CodingAnswer{synthesize_coding_source(data, true)}});
      out.push_back({1.0 - p, engine::CodingAnswer{synthesize_coding_source(data, false)}});
      break;
    }
    case ActivityKind::Abstract:
      throw Error(Errc::UnrefinedFragment, "cannot simulate abstract activity '" + node.id + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo simulation

struct SimulationOptions {
  int step_cap = engine::kDefaultStepCap;
  unsigned threads = 1;
  std::vector<gamification::Rule> rules;
};

struct Metrics {
  std::uint64_t seed = 0;
  std::uint64_t trials = 0;
  std::uint64_t completed = 0;
  std::uint64_t steps_sum = 0;
  std::uint64_t steps_sum_squares = 0;
  std::uint64_t remediation_sessions = 0;
  std::map<std::string, std::uint64_t> visits;
  std::map<std::string, std::uint64_t> failures;

  double completion_rate() const { return trials ? static_cast<double>(completed) / static_cast<double>(trials) : 0.0; }
  double mean_steps() const { return trials ? static_cast<double>(steps_sum) / static_cast<double>(trials) : 0.0; }
  double remediation_rate() const {
    return trials ? static_cast<double>(remediation_sessions) / static_cast<double>(trials) : 0.0;
  }
  // Standard error of the mean step count (sample variance, exact integer moments).
  double stderr_steps() const {
    if (trials < 2) return 0.0;
    const unsigned __int128 n = trials;
    const unsigned __int128 numerator = n * steps_sum_squares - static_cast<unsigned __int128>(steps_sum) * steps_sum;
    const long double variance = static_cast<long double>(numerator) / static_cast<long double>(n * (n - 1));
    return static_cast<double>(std::sqrt(variance / static_cast<long double>(trials)));
  }

  void merge(const Metrics& other) {
    trials += other.trials;
    completed += other.completed;
    steps_sum += other.steps_sum;
    steps_sum_squares += other.steps_sum_squares;
    remediation_sessions += other.remediation_sessions;
    for (const auto& [k, v] : other.visits) visits[k] += v;
    for (const auto& [k, v] : other.failures) failures[k] += v;
  }
};

inline json metrics_to_json(const Metrics& m) {
  return {{"seed", m.seed},
          {"trials", m.trials},
          {"completed", m.completed},
          {"completion_rate", m.completion_rate()},
          {"mean_steps", m.mean_steps()},
          {"stderr_steps", m.stderr_steps()},
          {"steps_sum", m.steps_sum},
          {"steps_sum_squares", m.steps_sum_squares},
          {"remediation_sessions", m.remediation_sessions},
          {"remediation_rate", m.remediation_rate()},
          {"visits", m.visits},
          {"failures", m.failures}};
}

// Nodes not reachable from entry through builtin pass/always edges alone.
inline std::set<std::string> remediation_nodes(const LearningFragment& f) {
  const auto happy = reachable_from(f, f.entry, [](const Edge& e) {
    return e.condition.kind == condition::ConditionSpec::Kind::Builtin &&
           (e.condition.text == "pass" || e.condition.text == "always");
  });
  std::set<std::string> out;
  for (const auto& [id, node] : f.nodes) {
    if (!happy.contains(id)) out.insert(id);
  }
  return out;
}

namespace detail {

inline void require_simulatable(const LearningFragment& f) {
  if (has_abstract_nodes(f)) throw Error(Errc::UnrefinedFragment, "fragment must be refined before simulation");
  ValidationReport report = validate_fragment(f);
  if (!report.ok()) throw Error(Errc::InvalidFragment, "fragment failed validation", report_to_json(report));
}

inline void run_trials(const LearningFragment& f, const StudentModel& model, std::uint64_t seed, std::uint64_t begin,
                       std::uint64_t end, const SimulationOptions& options, const std::set<std::string>& remediation,
                       Metrics& acc) {
  const ModalitySet all = {Modality::Text, Modality::Audio, Modality::Rich, Modality::Code};
  for (std::uint64_t t = begin; t < end; ++t) {
    SplitMix64 rng = trial_stream(seed, t);
    std::uint64_t steps = 0;
    bool remediated = false;
    try {
      engine::Session s = engine::start_session(f, "simulated", all,
                                                {"trial-" + std::to_string(t), "", options.rules, options.step_cap});
      while (s.status == engine::SessionStatus::Active) {
        const ActivityNode& node = f.nodes.at(s.current);
        ++acc.visits[node.id];
        remediated = remediated || remediation.contains(node.id);
        s = engine::submit(std::move(s), f, sample_submission(node, model, rng)).session;
        ++steps;
      }
      if (s.status == engine::SessionStatus::Completed) {
        ++acc.completed;
      } else {
        ++acc.failures[std::string(engine::to_string(s.failure))];
      }
    } catch (const Error& e) {
      ++acc.failures[std::string(e.code_name())];
    }
    ++acc.trials;
    acc.steps_sum += steps;
    acc.steps_sum_squares += steps * steps;
    if (remediated) ++acc.remediation_sessions;
  }
}

}  // namespace detail

inline Metrics simulate(const LearningFragment& f, const StudentModel& model, std::uint64_t trials, std::uint64_t seed,
                        const SimulationOptions& options = {}) {
  if (trials < 1) throw Error(Errc::BadRequest, "trials must be >= 1");
  detail::require_simulatable(f);
  const auto remediation = remediation_nodes(f);

  const std::uint64_t workers = std::max<std::uint64_t>(1, std::min<std::uint64_t>(options.threads, trials));
  std::vector<Metrics> partial(workers);
  std::vector<std::thread> pool;
  for (std::uint64_t w = 0; w < workers; ++w) {
    const std::uint64_t begin = trials * w / workers;
    const std::uint64_t end = trials * (w + 1) / workers;
    auto job = [&, w, begin, end] { detail::run_trials(f, model, seed, begin, end, options, remediation, partial[w]); };
    if (workers == 1) {
      job();
    } else {
      pool.emplace_back(job);
    }
  }
  for (auto& t : pool) t.join();

  Metrics out;
  out.seed = seed;
  for (const auto& p : partial) out.merge(p);
  return out;
}

// ---------------------------------------------------------------------------
// Analytic oracle

struct MarkovChain {
  std::vector<std::string> states;  // transient states, entry first
  Eigen::MatrixXd transitions;      // Q: transient -> transient
  Eigen::VectorXd absorption;       // probability of completing from each state
};

inline MarkovChain build_chain(const LearningFragment& f, const StudentModel& model) {
  detail::require_simulatable(f);
  for (const auto& [id, node] : f.nodes) {
    if (node.max_attempts) {
      throw Error(Errc::UnsupportedModel, "finite max_attempts makes the chain depend on attempt counts",
                  {{"node", id}});
    }
  }
  for (const auto& e : f.edges) {
    if (condition::referenced_variables(*condition::compile(e.condition)).contains("attempts")) {
      throw Error(Errc::UnsupportedModel, "conditions on attempts make the chain depend on attempt counts",
                  {{"edge", e.id}});
    }
  }

  std::map<std::string, std::map<std::string, double>> move;
  std::map<std::string, double> absorb;
  std::vector<std::string> order{f.entry};
  std::set<std::string> seen{f.entry};
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::string id = order[i];
    const ActivityNode& node = f.nodes.at(id);
    for (const auto& branch : outcome_branches(node, model)) {
      if (branch.probability <= 0.0) continue;
      const auto outcome = engine::grade(node, branch.submission);
      const auto edge = engine::select_edge(f, id, engine::context_for(outcome, 1, node.kind));
      if (edge) {
        move[id][edge->target] += branch.probability;
        if (seen.insert(edge->target).second) order.push_back(edge->target);
      } else if (is_exit(f, id) && outcome.passed) {
        absorb[id] += branch.probability;
      } else {
        move[id][id] += branch.probability;
      }
    }
  }

  MarkovChain chain;
  chain.states = order;
  const auto n = static_cast<Eigen::Index>(order.size());
  std::map<std::string, Eigen::Index> index;
  for (Eigen::Index i = 0; i < n; ++i) index[order[static_cast<std::size_t>(i)]] = i;
  chain.transitions = Eigen::MatrixXd::Zero(n, n);
  chain.absorption = Eigen::VectorXd::Zero(n);
  for (const auto& [from, targets] : move) {
    for (const auto& [to, p] : targets) chain.transitions(index.at(from), index.at(to)) += p;
  }
  for (const auto& [from, p] : absorb) chain.absorption(index.at(from)) = p;
  return chain;
}

// Expected submissions until completion from entry: row sum of (I - Q)^-1.
inline double analytic_expected_steps(const LearningFragment& f, const StudentModel& model) {
  const MarkovChain chain = build_chain(f, model);
  const auto n = chain.transitions.rows();

  // Every reachable state must be able to reach absorption.
  std::vector<bool> can_absorb(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) can_absorb[static_cast<std::size_t>(i)] = chain.absorption(i) > 0.0;
  for (bool changed = true; changed;) {
    changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (can_absorb[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (chain.transitions(i, j) > 0.0 && can_absorb[static_cast<std::size_t>(j)]) {
          can_absorb[static_cast<std::size_t>(i)] = true;
          changed = true;
          break;
        }
      }
    }
  }
  json trapped = json::array();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!can_absorb[static_cast<std::size_t>(i)]) trapped.push_back(chain.states[static_cast<std::size_t>(i)]);
  }
  if (!trapped.empty()) {
    throw Error(Errc::NotAbsorbing, "completion is unreachable with positive probability from some states",
                {{"nodes", trapped}});
  }

  const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - chain.transitions;
  const Eigen::VectorXd steps = system.partialPivLu().solve(Eigen::VectorXd::Ones(n));
  return steps(0);
}

}  // namespace polyglot::sim
