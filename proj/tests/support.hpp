#pragma once

// Shared fixtures for the test suites: file loading, the demo fragment and
// the three canonical submission scripts.

#include <stdlib.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "polyglot/engine.hpp"
#include "polyglot/fragment.hpp"
#include "polyglot/gamification.hpp"

namespace testsupport {

using namespace polyglot;

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "polyglot-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path data_path(const std::string& rel) { return std::filesystem::path(POLYGLOT_DATA_DIR) / rel; }
inline std::filesystem::path config_path(const std::string& rel) {
  return std::filesystem::path(POLYGLOT_CONFIG_DIR) / rel;
}

inline std::string fixture_text() { return read_text(data_path("fixtures/stats-avg-median.json")); }
inline LearningFragment fixture() { return load_fragment(fixture_text()); }
inline gamification::RulePack reference_pack() { return gamification::load_pack(read_text(config_path("reference-pack.json"))); }

inline ModalitySet all_modalities() { return {Modality::Text, Modality::Audio, Modality::Rich, Modality::Code}; }

// Submissions for the demo fixture.
inline const std::string kMeanSource =
    "def mean(xs):\n"
    "    return sum(xs) / len(xs)\n"
    "#|out:4\n";
inline const std::string kMedianSource =
    "def median(xs):\n"
    "    s = sorted(xs)\n"
    "    n = len(s)\n"
    "    if n % 2:\n"
    "        return s[n // 2]\n"
    "    return (s[n // 2 - 1] + s[n // 2]) / 2\n"
    "#|out:3\n"
    "#|out:2.5\n";

inline engine::Submission ack() { return engine::LessonAck{}; }
inline engine::Submission answer(std::string a) { return engine::CloseEndedAnswer{std::move(a)}; }
inline engine::Submission choices(std::vector<int> c) { return engine::QuizAnswer{std::move(c)}; }
inline engine::Submission code(std::string s) { return engine::CodingAnswer{std::move(s)}; }

// (a) every answer right on the first try.
inline std::vector<engine::Submission> script_all_correct() {
  return {ack(), answer("4"), ack(), answer("3"), ack(), code(kMeanSource), code(kMedianSource)};
}

// (b) Q2 answered with the average.
inline std::vector<engine::Submission> script_q2_average() {
  return {ack(), answer("4"), ack(), answer("4"), ack(), ack(), code(kMeanSource), code(kMedianSource)};
}

// (c) Q1 wrong, recover through R1 and Z1.
inline std::vector<engine::Submission> script_q1_recover() {
  return {ack(),       answer("5"), ack(),           choices({1, 0, 2}), ack(), answer("3"), ack(),
          code(kMeanSource), code(kMedianSource)};
}

inline engine::Session run_script(const LearningFragment& f, const std::vector<engine::Submission>& script,
                                  std::vector<gamification::Rule> rules = {}) {
  engine::Session s = engine::start_session(f, "learner", all_modalities(), {"s-1", "", std::move(rules)});
  for (const auto& sub : script) s = engine::submit(std::move(s), f, sub).session;
  return s;
}

inline std::vector<std::string> visited(const engine::Session& s) {
  std::vector<std::string> out;
  for (const auto& t : s.transcript) {
    if (out.empty() || out.back() != t.node) out.push_back(t.node);
  }
  return out;
}

}  // namespace testsupport
