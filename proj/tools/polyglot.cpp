// polyglot command line: validate fragments, simulate cohorts, plan goals and
// run the tutor service.
//
// Exit status: 0 ok, 1 error, 2 fragment failed validation.

#include <signal.h>

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <thread>

#include "polyglot/planner.hpp"
#include "polyglot/service.hpp"
#include "polyglot/simulator.hpp"

namespace {

using namespace polyglot;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path, {{"path", path}});
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path, {{"path", path}});
  out << text;
}

std::vector<gamification::Rule> pack_rules(const std::string& path) {
  if (path.empty()) return {};
  return gamification::load_pack(read_file(path)).rules;
}

int run_validate(const std::string& path) {
  const LearningFragment f = load_fragment(read_file(path));
  const ValidationReport report = validate_fragment(f);
  std::cout << io::dump(report_to_json(report));
  return report.ok() ? 0 : 2;
}

struct SimulateArgs {
  std::string fragment, model, out, rules;
  std::uint64_t trials = 10000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  int step_cap = engine::kDefaultStepCap;
};

int run_simulate(const SimulateArgs& a) {
  const LearningFragment f = load_fragment(read_file(a.fragment));
  const sim::StudentModel model = sim::load_model(read_file(a.model));
  sim::SimulationOptions options;
  options.threads = a.threads;
  options.step_cap = a.step_cap;
  options.rules = pack_rules(a.rules);
  const sim::Metrics m = sim::simulate(f, model, a.trials, a.seed, options);
  write_output(a.out, io::dump(sim::metrics_to_json(m)));
  return 0;
}

int run_expected_steps(const std::string& fragment, const std::string& model) {
  const LearningFragment f = load_fragment(read_file(fragment));
  const double e = sim::analytic_expected_steps(f, sim::load_model(read_file(model)));
  std::cout << io::dump({{"fragment", f.id}, {"expected_steps", e}});
  return 0;
}

int run_plan(const std::string& catalog, const std::vector<std::string>& goal, const std::vector<std::string>& known) {
  const planner::FragmentCatalog c = planner::load_catalog(read_file(catalog));
  const planner::Plan p = planner::plan_goal({goal.begin(), goal.end()}, {known.begin(), known.end()}, c);
  std::cout << io::dump(planner::plan_to_json(p));
  return 0;
}

struct ServeArgs {
  std::string listen = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "data/store";
  int step_cap = engine::kDefaultStepCap;
  int max_depth = planner::RefinementLimits{}.max_depth;
  int max_chain_length = planner::RefinementLimits{}.max_chain_length;
  std::string token;
};

int run_serve(const ServeArgs& a) {
  service::ServiceConfig config;
  config.data_dir = a.data_dir;
  config.step_cap = a.step_cap;
  config.limits.max_depth = a.max_depth;
  config.limits.max_chain_length = a.max_chain_length;
  if (!a.token.empty()) config.api_token = a.token;

  // Block the stop signals before any thread starts; one thread waits for them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  service::TutorService svc(config);
  service::HttpServer http(svc);
  if (!http.bind(a.listen, a.port)) {
    throw Error(Errc::IoError, "cannot listen on " + a.listen + ":" + std::to_string(a.port),
                {{"listen", a.listen}, {"port", a.port}});
  }
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    http.stop();
  });
  std::cerr << "polyglot: serving on " << a.listen << ":" << a.port << " (data " << a.data_dir << ")" << std::endl;
  http.listen_after_bind();
  // Listener ended on its own: wake the waiter.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polyglot adaptive tutoring engine"};
  app.require_subcommand(1);

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Validate a fragment document");
  validate->add_option("file", validate_path, "Fragment file")->required()->check(CLI::ExistingFile);

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "Run a seeded cohort simulation");
  simulate->add_option("--fragment", sim_args.fragment, "Fragment file")->required()->check(CLI::ExistingFile);
  simulate->add_option("--model", sim_args.model, "Student model file")->required()->check(CLI::ExistingFile);
  simulate->add_option("--trials", sim_args.trials, "Number of simulated learners")->capture_default_str();
  simulate->add_option("--seed", sim_args.seed, "PRNG seed")->capture_default_str();
  simulate->add_option("--threads", sim_args.threads, "Worker threads (output does not depend on it)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  simulate->add_option("--step-cap", sim_args.step_cap, "Per-session step cap")->capture_default_str();
  simulate->add_option("--rules", sim_args.rules, "Gamification rule pack")->check(CLI::ExistingFile);
  simulate->add_option("--out", sim_args.out, "Metrics output file (default stdout)");

  std::string es_fragment, es_model;
  auto* expected = app.add_subcommand("expected-steps", "Expected steps to absorption (fundamental matrix)");
  expected->add_option("--fragment", es_fragment, "Fragment file")->required()->check(CLI::ExistingFile);
  expected->add_option("--model", es_model, "Student model file")->required()->check(CLI::ExistingFile);

  std::string plan_catalog;
  std::vector<std::string> plan_goal, plan_known;
  auto* plan = app.add_subcommand("plan", "Plan a concept goal over a catalog");
  plan->add_option("--catalog", plan_catalog, "Catalog file")->required()->check(CLI::ExistingFile);
  plan->add_option("--goal", plan_goal, "Goal concepts")->required()->delimiter(',');
  plan->add_option("--known", plan_known, "Concepts already known")->delimiter(',');

  ServeArgs serve_args;
  auto* serve = app.add_subcommand("serve", "Run the HTTP tutor service");
  serve->add_option("--listen", serve_args.listen, "Listen address")->envname("POLYGLOT_LISTEN")->capture_default_str();
  serve->add_option("--port", serve_args.port, "Listen port")->envname("POLYGLOT_PORT")->capture_default_str();
  serve->add_option("--data-dir", serve_args.data_dir, "Document store directory")
      ->envname("POLYGLOT_DATA_DIR")
      ->capture_default_str();
  serve->add_option("--step-cap", serve_args.step_cap, "Per-session step cap")
      ->envname("POLYGLOT_STEP_CAP")
      ->capture_default_str();
  serve->add_option("--max-depth", serve_args.max_depth, "Refinement depth limit")
      ->envname("POLYGLOT_MAX_DEPTH")
      ->capture_default_str();
  serve->add_option("--max-chain-length", serve_args.max_chain_length, "Longest planned chain")
      ->envname("POLYGLOT_MAX_CHAIN_LENGTH")
      ->capture_default_str();
  serve->add_option("--token", serve_args.token, "Static bearer token (empty: no auth)")->envname("POLYGLOT_TOKEN");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) return run_validate(validate_path);
    if (*simulate) return run_simulate(sim_args);
    if (*expected) return run_expected_steps(es_fragment, es_model);
    if (*plan) return run_plan(plan_catalog, plan_goal, plan_known);
    if (*serve) return run_serve(serve_args);
  } catch (const Error& e) {
    std::cerr << io::dump({{"code", std::string(e.code_name())}, {"message", e.what()}, {"detail", e.detail()}});
    // A document that does not even load is a validation failure too.
    if (*validate && (e.code() == Errc::MalformedDocument || e.code() == Errc::SchemaViolation)) return 2;
    return 1;
  }
  return 1;
}
