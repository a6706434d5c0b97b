// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include "app.hpp"

#include "pastel/ad/grad_check.hpp"
#include "pastel/common/error.hpp"
#include "pastel/common/format.hpp"
#include "pastel/common/io.hpp"
#include "pastel/common/platform.hpp"
#include "pastel/eval/eval_harness.hpp"
#include "pastel/model/checkpoint.hpp"
#include "pastel/model/pastel_model.hpp"
#include "pastel/model/rollout.hpp"
#include "pastel/oracle/dataset.hpp"
#include "pastel/stl/parser.hpp"
#include "pastel/stl/semantics.hpp"

#include "../support/generators.hpp"
#include "../support/op_cases.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace pastel;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kSpecs{PASTEL_SPECS_DIR};
const fs::path kConfigs{PASTEL_CONFIGS_DIR};
const env::EnvironmentSpec kWorld = env::EnvironmentSpec::default_world();
const char* kSpecNames[] = {"phi1", "phi2", "phi3"};

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string spec_path(const std::string& id) { return (kSpecs / (id + ".stl")).string(); }

/// Runs the pastel command line in-process; progress goes to stderr.
void pastel(std::vector<std::string> args) {
  args.insert(args.begin(), "pastel");
  std::ostringstream out;
  const int code = cli::run(args, out, std::cerr);
  if (code != 0) throw Error(ErrorCategory::internal, "pastel " + args[1] + " exited with " + std::to_string(code));
}

class Workspace {
public:
  explicit Workspace(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  /// Desk-scale dataset (3 specs x 1000), generated once per run.
  const fs::path& desk_dataset() {
    if (!desk_.empty()) return desk_;
    desk_ = root_ / "desk.jsonl";
    std::cerr << "[acceptance] generating desk dataset\n";
    pastel({"--env", (kConfigs / "env.json").string(), "gen-data", "--spec", spec_path("phi1"), "--spec",
            spec_path("phi2"), "--spec", spec_path("phi3"), "--config", (kConfigs / "oracle.json").string(), "--out",
            desk_.string()});
    return desk_;
  }

  /// Checkpoint of the desk training budget for one seed and variant.
  fs::path trained(int seed, bool ablation) {
    const fs::path dir = root_ / "desk_runs" / ((ablation ? "pact_s" : "pastel_s") + std::to_string(seed));
    const auto key = dir.string();
    if (done_.count(key)) return dir / "checkpoint.pstl";
    fs::remove_all(dir);
    std::cerr << "[acceptance] training " << dir.filename().string() << "\n";
    std::vector<std::string> args{"--env", (kConfigs / "env.json").string(), "train", "--data",
                                  desk_dataset().string(), "--config", (kConfigs / "train_desk.json").string(),
                                  "--seed", std::to_string(seed), "--out", dir.string()};
    if (ablation) args.push_back("--ablation");
    pastel(args);
    done_.insert(key);
    return dir / "checkpoint.pstl";
  }

  const fs::path& root() const { return root_; }

private:
  fs::path root_;
  fs::path desk_;
  std::set<std::string> done_;
};

// 1. PASTEL beats the spec-free ablation by >= 10pp on phi2 and phi3.
Verdict criterion_1(Workspace& ws) {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kSeeds = 3;
  std::map<std::string, double> pastel_mean, pact_mean;
  for (int seed = 0; seed < kSeeds; ++seed) {
    for (bool ablation : {false, true}) {
      const auto ck = ws.trained(seed, ablation);
      const fs::path out = ck.parent_path() / "eval";
      pastel({"--env", (kConfigs / "env.json").string(), "eval", "--checkpoint", ck.string(), "--spec",
              spec_path("phi1"), "--spec", spec_path("phi2"), "--spec", spec_path("phi3"), "--n", "100", "--seed",
              std::to_string(seed), "--mode", "dynamics-consistent", "--out", out.string()});
      const auto report = eval::report_from_json(read_file(out / "report.json"));
      for (const auto& s : report.specs) (ablation ? pact_mean : pastel_mean)[s.spec_id] += s.percentage / kSeeds;
    }
  }
  const double elapsed = seconds_since(t0);
  bool pass = elapsed <= 7200.0;
  std::string detail;
  for (const char* id : kSpecNames) {
    const double margin = pastel_mean[id] - pact_mean[id];
    if (std::string(id) != "phi1") pass = pass && margin >= 10.0;
    detail += std::string(id) + " pastel=" + fixed(pastel_mean[id], 1) + "% pact=" + fixed(pact_mean[id], 1) +
              "% (" + (margin >= 0 ? "+" : "") + fixed(margin, 1) + "pp) ";
  }
  return {pass, detail + "runtime=" + fixed(elapsed, 0) + "s"};
}

struct RandomPair {
  stl::Formula f;
  stl::Signal s;
};

/// 1000 (formula depth <= 4, signal length <= 40) pairs with |rho| > 1e-9.
std::vector<RandomPair> random_suite() {
  Rng rng(20240601);
  std::vector<RandomPair> out;
  while (out.size() < 1000) {
    const std::size_t len = 1 + rng() % 40;
    auto f = testkit::random_formula(rng, 4, static_cast<int>(len) - 1);
    auto s = testkit::random_signal(rng, len);
    if (stl::depth(f) > 4 || stl::horizon(f) >= static_cast<int>(len)) continue;
    if (std::abs(stl::robustness(f, s, 0, kWorld)) > 1e-9) out.push_back({std::move(f), std::move(s)});
  }
  return out;
}

// 2. Sign of robustness matches the boolean monitor.
Verdict criterion_2() {
  const auto suite = random_suite();
  std::size_t agree = 0;
  for (const auto& p : suite) agree += (stl::robustness(p.f, p.s, 0, kWorld) > 0) == stl::satisfies(p.f, p.s, 0, kWorld);
  return {agree == suite.size(), std::to_string(agree) + "/" + std::to_string(suite.size()) + " signs agree"};
}

// 3. |smooth - exact| <= log(k_max) / beta.
Verdict criterion_3() {
  const auto suite = random_suite();
  std::size_t within = 0, total = 0;
  double worst_ratio = 0.0;
  for (const auto& p : suite) {
    const double exact = stl::robustness(p.f, p.s, 0, kWorld);
    const double k_max = static_cast<double>(stl::max_aggregation_width(p.f));
    for (double beta : {2.0, 10.0, 50.0}) {
      const double err = std::abs(stl::smooth_robustness(p.f, p.s, 0, kWorld, beta) - exact);
      const double bound = std::log(k_max) / beta;
      ++total;
      // Ties reach the bound exactly; allow for rounding in both sides.
      if (err <= bound + 1e-12) ++within;
      if (bound > 0) worst_ratio = std::max(worst_ratio, err / bound);
    }
  }
  return {within == total, std::to_string(within) + "/" + std::to_string(total) +
                               " within bound, worst err/bound=" + fixed(worst_ratio, 3)};
}

// 4. Every generated record satisfies its spec exactly with no actuation
// violations, and dataset-verify agrees.
Verdict criterion_4(Workspace& ws) {
  const auto records = oracle::read_dataset(ws.desk_dataset());
  std::size_t sat = 0, violations = 0, actions = 0;
  for (const auto& r : records) {
    std::string text;
    for (const auto& tok : r.tokens) text += tok + " ";
    const auto f = stl::parse(text);
    sat += stl::satisfies(f, stl::Signal::from_states(r.trajectory.states), 0, kWorld);
    for (const auto& a : r.trajectory.actions) {
      ++actions;
      violations += std::abs(a.ax) > kWorld.a_max() || std::abs(a.ay) > kWorld.a_max();
    }
  }
  std::vector<std::string> args{"pastel", "--format", "json", "dataset-verify", "--data", ws.desk_dataset().string()};
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  bool verify_ok = false;
  std::size_t verified = 0;
  if (code == 0) {
    const auto j = json::parse(out.str());
    verify_ok = j.at("ok").get<bool>();
    verified = j.at("records").get<std::size_t>();
  }
  const bool pass = !records.empty() && sat == records.size() && violations == 0 && verify_ok &&
                    verified == records.size();
  return {pass, std::to_string(sat) + "/" + std::to_string(records.size()) + " satisfied, " +
                    std::to_string(violations) + "/" + std::to_string(actions) +
                    " actuation violations, dataset-verify " + (verify_ok ? "ok" : "failed")};
}

model::ModelConfig tiny_config(bool ablation) {
  model::ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_tok = 4;
  c.d_ff = 8;
  c.dropout = 0.0;
  c.h_max = 40;
  c.ablation = ablation;
  c.regions = kWorld.region_names();
  c.norm = model::Normalization::from_environment(kWorld);
  return c;
}

// 5. Core-op gradients below 1e-6 and the full loss below 1e-4.
Verdict criterion_5() {
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& c : testkit::op_cases()) {
    Rng rng(fnv1a(c.name));
    for (int trial = 0; trial < 12; ++trial) {
      const double e = c.run(rng, 1000 + static_cast<std::uint64_t>(trial));
      if (!(e <= worst_op)) {
        worst_op = e;
        worst_name = c.name;
      }
    }
  }
  double worst_loss = 0.0;
  for (bool ablation : {false, true}) {
    const model::PastelModel m(tiny_config(ablation), 8);
    Rng rng(10);
    model::SequenceBatch b;
    b.steps = 2;
    b.spec_ids = {m.tokenize(stl::parse("F[0,1](R1)")).ids, m.tokenize(stl::parse("G[0,1](!O1)")).ids};
    b.states = testkit::random_matrix(rng, 4, 4, 0, 10);
    b.actions = testkit::random_matrix(rng, 4, 2, -1, 1);
    const ad::Matrix ts = testkit::random_matrix(rng, 4, 4, 0, 10);
    const ad::Matrix ta = testkit::random_matrix(rng, 4, 2, -1, 1);
    const auto params = m.parameters();
    const double e = ad::grad_check(
        [&](ad::Tape& tape) {
          const auto out = m.forward(tape, b, {});
          return model::compute_loss(tape, out, ts, ta, m.config().norm, ablation).total;
        },
        params, 1e-5);
    worst_loss = std::max(worst_loss, std::isnan(e) ? INFINITY : e);
  }
  return {worst_op < 1e-6 && worst_loss < 1e-4,
          "max op error " + format_double(worst_op) + " (" + worst_name + "), full loss " + format_double(worst_loss)};
}

// 6. Changing inputs at steps >= t never moves any output at positions < 3t.
Verdict criterion_6() {
  std::size_t checks = 0, broken = 0;
  for (int layers = 1; layers <= 3; ++layers) {
    for (bool ablation : {false, true}) {
      model::ModelConfig c = tiny_config(ablation);
      c.d_model = 16;
      c.d_tok = 8;
      c.d_ff = 32;
      c.n_layers = layers;
      const model::PastelModel m(c, 11);
      Rng rng(static_cast<std::uint64_t>(layers) * 2 + ablation);
      constexpr int S = 6, B = 2;
      model::SequenceBatch base;
      base.steps = S;
      base.spec_ids.assign(B, m.tokenize(stl::parse("G[0,5](!O1)")).ids);
      base.states = testkit::random_matrix(rng, B * S, 4, 0, 10);
      base.actions = testkit::random_matrix(rng, B * S, 2, -1, 1);
      ad::Tape t0(false);
      const auto ref = m.forward(t0, base, {false, true, true});
      for (int t = 0; t < S; ++t) {
        model::SequenceBatch changed = base;
        for (int b = 0; b < B; ++b) {
          for (int k = t; k < S; ++k) {
            changed.states.row(b * S + k).setConstant(uniform(rng, -3, 13));
            changed.actions.row(b * S + k).setConstant(uniform(rng, -2, 2));
          }
        }
        ad::Tape t1(false);
        const auto out = m.forward(t1, changed, {false, true, true});
        for (int b = 0; b < B; ++b) {
          const int rows = 3 * t;
          ++checks;
          bool same = out.backbone.value().middleRows(b * 3 * S, rows) ==
                          ref.backbone.value().middleRows(b * 3 * S, rows) &&
                      out.actions.middleRows(b * S, t) == ref.actions.middleRows(b * S, t) &&
                      out.next_states.middleRows(b * S, t) == ref.next_states.middleRows(b * S, t);
          for (std::size_t l = 0; l < out.self_attention.size(); ++l) {
            for (int h = 0; h < c.n_heads; ++h) {
              const auto i = static_cast<std::size_t>(b * c.n_heads + h);
              same = same && out.self_attention[l][i].topRows(rows) == ref.self_attention[l][i].topRows(rows);
            }
          }
          broken += !same;
        }
      }
    }
  }
  return {broken == 0 && checks > 0,
          std::to_string(checks - broken) + "/" + std::to_string(checks) + " prefixes unchanged over 1-3 layers"};
}

// 7. Hand-computable loss values, compared exactly.
Verdict criterion_7() {
  ad::Tape t;
  // L_state = 6: s = 0, s_hat = 2 gives squared error 4 plus absolute error 2.
  ad::Matrix s(1, 1), s_hat(1, 1);
  s << 0.0;
  s_hat << 2.0;
  const double l_state = model::regression_loss(t.constant(s_hat), s).value()(0, 0);

  // Pooled rows average to (0.75, 1.0), whose norm 1.25 is exact in binary.
  ad::Matrix temb(2, 2);
  temb << 0.5, 1.0, 1.0, 1.0;
  const double l_spec = model::spec_relevance_loss(t.constant(temb), t.constant(-temb)).value()(0, 0);

  // L_total = 0: heads reproduce the targets and C equals T_emb.
  const auto norm = model::Normalization::from_environment(kWorld);
  ad::Matrix states(2, 4), actions(2, 2);
  states << 1.0, 2.0, 0.5, -0.5, 3.0, 4.0, 1.0, 0.0;
  actions << 0.5, -1.0, 0.25, 0.0;
  model::ForwardResult out;
  out.state_head = t.constant(norm.states_to_unit(states));
  out.action_head = t.constant(norm.actions_to_unit(actions));
  out.spec_pooled = t.constant(temb);
  out.cross_pooled = t.constant(temb);
  const double l_total = model::compute_loss(t, out, states, actions, norm, false).total.value()(0, 0);

  return {l_state == 6.0 && l_spec == 2.0 && l_total == 0.0,
          "L_state=" + format_double(l_state) + " L_spec=" + format_double(l_spec) + " L_total=" +
              format_double(l_total)};
}

// 8. Rollouts have horizon(f)+1 states and horizon(f) actions.
Verdict criterion_8() {
  model::ModelConfig c;
  c.regions = kWorld.region_names();
  c.norm = model::Normalization::from_environment(kWorld);
  const model::PastelModel m(c, 3);
  const auto x0 = eval::sample_initial_states(4, 9, kWorld);
  bool pass = true;
  std::string detail;
  for (const char* id : kSpecNames) {
    const auto f = stl::load_spec_file(spec_path(id));
    const int h = stl::horizon(f);
    pass = pass && h == 30;
    for (auto mode : {model::RolloutMode::dynamics_consistent, model::RolloutMode::open_loop}) {
      for (const auto& r : model::rollout_batch(m, f, x0, kWorld, mode)) {
        pass = pass && r.trajectory.states.size() == static_cast<std::size_t>(h + 1) &&
               r.trajectory.actions.size() == static_cast<std::size_t>(h);
      }
    }
    detail += std::string(id) + " horizon=" + std::to_string(h) + " ";
  }
  return {pass, detail + "states=31 actions=30 in both rollout modes"};
}

bool bitwise_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

// 9. The ablation ignores spec text; PASTEL responds to swapping R1 and R2.
Verdict criterion_9(Workspace& ws) {
  const auto f = stl::load_spec_file(spec_path("phi3"));
  const auto perturbations = eval::default_perturbations(f, kWorld);
  eval::EvalOptions opt;
  opt.n_samples = 100;
  opt.seed = 0;
  auto study = [&](bool ablation) {
    const auto ck = model::load_checkpoint(ws.trained(0, ablation));
    return eval::perturbation_study(*ck.model, ck.digest, f, perturbations, kWorld, opt);
  };
  const auto pact = study(true);
  const auto pastel_study = study(false);

  bool invariant = true;
  std::size_t compared = 0;
  for (const auto& row : pact.rows) {
    if (row.skipped || !row.rate_original) continue;
    ++compared;
    invariant = invariant && bitwise_equal(*row.rate_original, *pact.rows.front().rate_original);
  }
  // The swapped spec is the test spec: its satisfaction by rollouts conditioned on it
  // is the rate that should move. The rate against the original is reported alongside.
  const auto swap = std::find_if(pastel_study.rows.begin(), pastel_study.rows.end(),
                                 [](const auto& r) { return r.name == "swap_R1_R2"; });
  const auto& identity = pastel_study.rows.front();
  const bool found = swap != pastel_study.rows.end() && !swap->skipped;
  const bool changed = found && !bitwise_equal(swap->rate_perturbed, identity.rate_perturbed);
  std::string detail = "pact identical on " + std::to_string(compared) + " perturbations";
  if (found) {
    detail += "; pastel under R1<->R2: swapped spec " + fixed(identity.rate_perturbed, 0) + "% -> " +
              fixed(swap->rate_perturbed, 0) + "%";
    if (swap->rate_original) detail += ", original phi3 " + fixed(*swap->rate_original, 0) + "%";
  }
  return {invariant && compared >= 2 && changed, detail};
}

std::string loss_columns(const fs::path& metrics) {
  std::istringstream in(read_file(metrics));
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

/// Reruns a command from its manifest argv and reports whether the outputs
/// came back byte-identical.
bool replay_identical(const fs::path& manifest, const std::vector<fs::path>& outputs,
                      const std::function<std::string(const fs::path&)>& view) {
  const auto first = json::parse(read_file(manifest));
  std::vector<std::string> before;
  for (const auto& p : outputs) before.push_back(view(p));
  std::ostringstream out;
  if (cli::run(first.at("argv").get<std::vector<std::string>>(), out, std::cerr) != 0) return false;
  const auto second = json::parse(read_file(manifest));
  if (first.at("resolved_config") != second.at("resolved_config") || first.at("inputs") != second.at("inputs")) {
    return false;
  }
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (view(outputs[i]) != before[i]) return false;
  }
  return true;
}

// 10. gen-data, train and eval are byte-reproducible from their manifests.
Verdict criterion_10(Workspace& ws) {
  const fs::path dir = ws.root() / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto data = dir / "d.jsonl";
  pastel({"gen-data", "--spec", spec_path("phi2"), "--spec", spec_path("phi3"), "--count", "20", "--seed", "4",
          "--out", data.string()});
  pastel({"train", "--data", data.string(), "--out", (dir / "run").string(), "--epochs", "2", "--d-model", "16",
          "--heads", "2", "--layers", "2", "--d-tok", "8", "--d-ff", "32", "--batch-size", "8", "--seed", "5"});
  const auto ck = dir / "run" / "checkpoint.pstl";
  pastel({"eval", "--checkpoint", ck.string(), "--spec", spec_path("phi2"), "--spec", spec_path("phi3"), "--n", "30",
          "--seed", "6", "--out", (dir / "eval").string()});

  const auto bytes = [](const fs::path& p) { return read_file(p); };
  const bool gen = replay_identical(fs::path(data.string() + ".manifest.json"), {data}, bytes);
  const bool train = replay_identical(dir / "run" / "manifest.json", {ck}, bytes) &&
                     replay_identical(dir / "run" / "manifest.json", {dir / "run" / "metrics.csv"}, loss_columns);
  const bool ev = replay_identical(dir / "eval" / "manifest.json", {dir / "eval" / "report.json"}, bytes);
  auto word = [](bool ok) { return ok ? "identical" : "DIFFERENT"; };
  return {gen && train && ev, std::string("gen-data ") + word(gen) + ", train " + word(train) + ", eval " + word(ev)};
}

} // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Runs the acceptance criteria and prints one PASS/FAIL line each"};
  std::string workdir = (fs::temp_directory_path() / "pastel_acceptance").string();
  std::vector<int> only;
  std::vector<int> expected_failures;
  app.add_option("--workdir", workdir, "Scratch directory for datasets and runs");
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_option("--expect-fail", expected_failures,
                 "Criteria known to fail; they still print FAIL but do not fail the exit status")
      ->delimiter(',')
      ->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  const std::set<int> xfail(expected_failures.begin(), expected_failures.end());
  if (only.empty()) only = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  Workspace ws(workdir);
  const std::map<int, std::function<Verdict()>> criteria{
      {1, [&] { return criterion_1(ws); }}, {2, criterion_2}, {3, criterion_3},
      {4, [&] { return criterion_4(ws); }}, {5, criterion_5}, {6, criterion_6},
      {7, criterion_7}, {8, criterion_8}, {9, [&] { return criterion_9(ws); }},
      {10, [&] { return criterion_10(ws); }}};

  std::vector<std::string> lines;
  bool all = true;
  for (int id : std::set<int>(only.begin(), only.end())) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria.at(id)();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    // A known failure that starts passing is reported too, so the list stays accurate.
    all = all && (v.pass != xfail.count(id) > 0);
    lines.push_back("criterion " + std::to_string(id) + ": " + (v.pass ? "PASS" : "FAIL") +
                    (xfail.count(id) ? " (listed as expected failure)" : "") + " " + v.detail + " [" +
                    fixed(seconds_since(t0), 1) + "s]");
    std::cerr << lines.back() << "\n";
  }
  for (const auto& l : lines) std::cout << l << "\n";
  return all ? 0 : 1;
}
