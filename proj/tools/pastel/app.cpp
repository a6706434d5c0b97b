#include "app.hpp"

#include "pastel/common/format.hpp"
#include "pastel/common/io.hpp"
#include "pastel/env/planar_env.hpp"
#include "pastel/eval/eval_harness.hpp"
#include "pastel/model/checkpoint.hpp"
#include "pastel/oracle/dataset.hpp"
#include "pastel/stl/linearize.hpp"
#include "pastel/stl/parser.hpp"
#include "pastel/stl/semantics.hpp"
#include "pastel/train/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#ifndef PASTEL_VERSION
#define PASTEL_VERSION "0.0.0"
#endif

namespace pastel::cli {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

int exit_code(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::usage: return 2;
    case ErrorCategory::io: return 3;
    case ErrorCategory::schema: return 4;
    case ErrorCategory::syntax: return 5;
    case ErrorCategory::config: return 6;
    case ErrorCategory::verification: return 7;
    case ErrorCategory::numeric: return 8;
    case ErrorCategory::shape: return 9;
    case ErrorCategory::domain: return 10;
    case ErrorCategory::internal: return 70;
  }
  return 70;
}

std::string error_line(ErrorCategory category, const std::string& message) {
  std::string flat = message;
  for (char& c : flat) {
    if (c == '\n' || c == '\r' || c == '\t') c = ' ';
  }
  return "error category=" + std::string(to_string(category)) + " exit=" + std::to_string(exit_code(category)) +
         " message=" + flat;
}

namespace {

enum class Format { table, json };

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string file_digest(const fs::path& p) { return model::digest_bytes(read_file(p)); }

/// Collects what a run read and wrote; written atomically once outputs exist.
class Manifest {
public:
  Manifest(std::string subcommand, const std::vector<std::string>& args)
      : subcommand_(std::move(subcommand)), args_(args), started_(utc_now()) {}

  void config(ordered_json c) { config_ = std::move(c); }
  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  void input(const std::string& role, const fs::path& p) {
    inputs_.push_back({{"role", role}, {"path", p.string()}, {"digest", file_digest(p)}});
  }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }

  void write(const fs::path& path) const {
    ordered_json j;
    j["format"] = "pastel-run-manifest";
    j["format_version"] = 1;
    j["tool_version"] = PASTEL_VERSION;
    j["subcommand"] = subcommand_;
    j["argv"] = args_;
    j["resolved_config"] = config_;
    j["seeds"] = seeds_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["started_at"] = started_;
    j["finished_at"] = utc_now();
    write_file_atomic(path, j.dump(2) + "\n");
  }

private:
  std::string subcommand_;
  std::vector<std::string> args_;
  std::string started_;
  ordered_json config_ = ordered_json::object();
  ordered_json seeds_ = ordered_json::object();
  ordered_json inputs_ = ordered_json::array();
  ordered_json outputs_ = ordered_json::array();
};

struct Common {
  unsigned jobs = 1;
  std::string format = "table";
  std::string env_path;

  Format fmt() const { return format == "json" ? Format::json : Format::table; }
};

env::EnvironmentSpec load_env(const Common& c, Manifest* m) {
  if (c.env_path.empty()) return env::EnvironmentSpec::default_world();
  auto e = env::load_environment(c.env_path);
  if (m) m->input("environment", c.env_path);
  return e;
}

oracle::NamedSpec load_named_spec(const std::string& path, Manifest* m) {
  auto f = stl::load_spec_file(path);
  if (m) m->input("spec", path);
  return {fs::path(path).stem().string(), std::move(f)};
}

model::Checkpoint load_model(const std::string& path, Manifest* m) {
  auto ck = model::load_checkpoint(path);
  if (m) m->input("checkpoint", path);
  return ck;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCategory::io, "cannot create directory " + dir.string() + ": " + ec.message());
}

template <typename T>
void apply(T& target, const std::optional<T>& flag) {
  if (flag) target = *flag;
}

std::string read_config(const std::string& path, Manifest& m) {
  const std::string text = read_file(path);
  m.input("config", path);
  return text;
}

// --- gen-data -------------------------------------------------------------

struct GenArgs {
  std::vector<std::string> specs;
  std::string out;
  std::string config;
  std::optional<int> count;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<int> restarts;
  std::optional<double> margin;
  std::optional<int> max_attempts;
};

void cmd_gen_data(const GenArgs& a, const Common& c, const std::vector<std::string>& argv, std::ostream& out) {
  Manifest m("gen-data", argv);
  oracle::GenerationConfig g;
  if (!a.config.empty()) g = oracle::generation_config_from_json(read_config(a.config, m), g);
  apply(g.per_spec_count, a.count);
  apply(g.seed, a.seed);
  apply(g.oracle.iterations_per_stage, a.iterations);
  apply(g.oracle.restarts, a.restarts);
  apply(g.oracle.margin, a.margin);
  apply(g.max_attempts_per_record, a.max_attempts);
  g.jobs = c.jobs;

  const auto env = load_env(c, &m);
  std::vector<oracle::NamedSpec> specs;
  for (const auto& p : a.specs) specs.push_back(load_named_spec(p, &m));
  const auto result = oracle::generate_records(specs, env, g);
  oracle::write_dataset(a.out, result.records);

  auto resolved = ordered_json::parse(oracle::generation_config_to_json(g));
  resolved["jobs"] = c.jobs;
  resolved["environment"] = ordered_json::parse(env::serialize_environment(env));
  m.config(resolved);
  m.seed("generation", g.seed);
  m.output(a.out);
  m.write(a.out + ".manifest.json");

  if (c.fmt() == Format::json) {
    ordered_json j;
    j["dataset"] = a.out;
    j["records"] = result.records.size();
    ordered_json rows = ordered_json::array();
    for (const auto& s : result.summaries) {
      rows.push_back({{"spec_id", s.spec_id}, {"accepted", s.accepted}, {"attempts", s.attempts},
                      {"rho_min", s.rho_min}, {"rho_median", s.rho_median}, {"rho_max", s.rho_max}});
    }
    j["specs"] = rows;
    out << j.dump(2) << "\n";
  } else {
    char line[200];
    std::snprintf(line, sizeof(line), "%-10s %9s %9s %9s %9s %9s\n", "spec", "accepted", "attempts", "rho_min",
                  "rho_med", "rho_max");
    out << line;
    for (const auto& s : result.summaries) {
      std::snprintf(line, sizeof(line), "%-10s %9d %9d %9.3f %9.3f %9.3f\n", s.spec_id.c_str(), s.accepted,
                    s.attempts, s.rho_min, s.rho_median, s.rho_max);
      out << line;
    }
    out << "wrote " << result.records.size() << " records to " << a.out << "\n";
  }
}

// --- dataset-verify -------------------------------------------------------

struct VerifyArgs {
  std::string data;
  double margin = 0.05;
};

void cmd_verify(const VerifyArgs& a, const Common& c, std::ostream& out) {
  const auto env = load_env(c, nullptr);
  const auto records = oracle::read_dataset(a.data);
  const auto report = oracle::verify_records(records, env, a.margin);
  const auto replay = eval::replay_satisfaction(records, env);
  if (c.fmt() == Format::json) {
    ordered_json j;
    j["dataset"] = a.data;
    j["records"] = report.records;
    j["satisfied_percentage"] = replay.percentage;
    j["actuation_violations"] = report.actuation_violations;
    j["max_abs_action"] = report.max_abs_action;
    ordered_json issues = ordered_json::array();
    for (const auto& i : report.issues) issues.push_back({{"line", i.line}, {"reason", i.reason}});
    j["issues"] = issues;
    j["ok"] = report.ok();
    out << j.dump(2) << "\n";
  } else {
    out << "records " << report.records << "  satisfied " << replay.percentage << "%  actuation violations "
        << report.actuation_violations << "  max|a| " << report.max_abs_action << "\n";
    for (const auto& i : report.issues) out << "line " << i.line << ": " << i.reason << "\n";
    out << (report.ok() ? "OK" : "FAILED") << "\n";
  }
  if (!report.ok()) {
    throw Error(ErrorCategory::verification, std::to_string(report.issues.size()) + " issues and " +
                                                 std::to_string(report.actuation_violations) +
                                                 " actuation violations in " + a.data);
  }
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  double verify_margin = 0.05;
  std::optional<int> epochs, batch_size, checkpoint_every;
  std::optional<double> lr, warmup, weight_decay, grad_clip, validation_fraction;
  std::optional<std::uint64_t> seed;
  std::optional<int> d_model, n_heads, n_layers, d_tok, d_ff, h_max;
  std::optional<double> dropout;
  bool ablation = false;
  bool running_train_row = false;
};

void cmd_train(const TrainArgs& a, const Common& c, const std::vector<std::string>& argv, std::ostream& out,
               std::ostream& err) {
  Manifest m("train", argv);
  train::TrainConfig cfg;
  if (!a.config.empty()) cfg = train::train_config_from_json(read_config(a.config, m), cfg);
  apply(cfg.epochs, a.epochs);
  apply(cfg.batch_size, a.batch_size);
  apply(cfg.checkpoint_every, a.checkpoint_every);
  apply(cfg.learning_rate, a.lr);
  apply(cfg.warmup_fraction, a.warmup);
  apply(cfg.weight_decay, a.weight_decay);
  apply(cfg.max_grad_norm, a.grad_clip);
  apply(cfg.validation_fraction, a.validation_fraction);
  apply(cfg.seed, a.seed);
  apply(cfg.model.d_model, a.d_model);
  apply(cfg.model.n_heads, a.n_heads);
  apply(cfg.model.n_layers, a.n_layers);
  apply(cfg.model.d_tok, a.d_tok);
  apply(cfg.model.d_ff, a.d_ff);
  apply(cfg.model.h_max, a.h_max);
  apply(cfg.model.dropout, a.dropout);
  if (a.ablation) cfg.model.ablation = true;
  if (a.running_train_row) cfg.evaluate_train_split = false;

  const auto env = load_env(c, &m);
  cfg.model.regions = env.region_names();
  cfg.model.norm = model::Normalization::from_environment(env);
  cfg.validate();

  const auto records = oracle::load_verified_dataset(a.data, env, a.verify_margin);
  m.input("dataset", a.data);
  ensure_dir(a.out);
  const train::TrainOutputs outputs{a.out};
  const auto result = train::train(cfg, records, outputs, [&](const std::vector<train::EpochMetrics>& rows) {
    for (const auto& r : rows) err << train::metrics_csv_row(r) << "\n";
    err.flush();
  });

  auto resolved = ordered_json::parse(train::train_config_to_json(cfg));
  resolved["environment"] = ordered_json::parse(env::serialize_environment(env));
  m.config(resolved);
  m.seed("train", cfg.seed);
  m.output(outputs.checkpoint());
  m.output(outputs.metrics());
  m.write(fs::path(a.out) / "manifest.json");

  const auto& last = result.metrics.back();
  if (c.fmt() == Format::json) {
    ordered_json j;
    j["checkpoint"] = result.checkpoint.string();
    j["digest"] = file_digest(result.checkpoint);
    j["parameters"] = result.parameter_count;
    j["train_records"] = result.train_records;
    j["validation_records"] = result.validation_records;
    j["final_validation"] = {{"L_state", last.loss.state},
                             {"L_action", last.loss.action},
                             {"L_spec", last.loss.spec},
                             {"L_total", last.loss.total}};
    out << j.dump(2) << "\n";
  } else {
    out << "parameters " << result.parameter_count << "  train " << result.train_records << "  validation "
        << result.validation_records << "\n";
    out << "final validation L_total " << last.loss.total << " (state " << last.loss.state << ", action "
        << last.loss.action << ", spec " << last.loss.spec << ")\n";
    out << "checkpoint " << result.checkpoint.string() << "\n";
  }
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> specs;
  int n = 100;
  std::uint64_t seed = 0;
  std::string mode = "dynamics-consistent";
  std::string out;
  std::string plots;
};

eval::EvalOptions eval_options(int n, std::uint64_t seed, const std::string& mode, const Common& c) {
  eval::EvalOptions o;
  o.n_samples = n;
  o.seed = seed;
  o.mode = model::parse_rollout_mode(mode);
  o.jobs = c.jobs;
  return o;
}

ordered_json eval_config(const eval::EvalOptions& o, const env::EnvironmentSpec& env) {
  return {{"n_samples", o.n_samples},
          {"seed", o.seed},
          {"mode", std::string(model::to_string(o.mode))},
          {"jobs", o.jobs},
          {"environment", ordered_json::parse(env::serialize_environment(env))}};
}

void cmd_eval(const EvalArgs& a, const Common& c, const std::vector<std::string>& argv, std::ostream& out) {
  Manifest m("eval", argv);
  const auto env = load_env(c, &m);
  const auto ck = load_model(a.checkpoint, &m);
  std::vector<oracle::NamedSpec> specs;
  for (const auto& p : a.specs) specs.push_back(load_named_spec(p, &m));
  auto opt = eval_options(a.n, a.seed, a.mode, c);
  opt.keep_trajectories = !a.plots.empty();
  const auto report = eval::evaluate(*ck.model, ck.digest, specs, env, opt);
  const std::string json = eval::report_to_json(report);
  out << (c.fmt() == Format::json ? json : eval::report_table(report));

  if (!a.plots.empty()) {
    for (const auto& s : report.specs) {
      const fs::path dir = fs::path(a.plots) / s.spec_id;
      eval::export_plots(s.trajectories, env, dir);
      m.output(dir);
    }
  }
  if (!a.out.empty()) {
    ensure_dir(a.out);
    const fs::path report_path = fs::path(a.out) / "report.json";
    write_file_atomic(report_path, json);
    m.config(eval_config(opt, env));
    m.seed("eval", a.seed);
    m.output(report_path);
    m.write(fs::path(a.out) / "manifest.json");
  } else if (!a.plots.empty()) {
    m.config(eval_config(opt, env));
    m.seed("eval", a.seed);
    m.write(fs::path(a.plots) / "manifest.json");
  }
}

// --- perturb --------------------------------------------------------------

struct PerturbArgs {
  std::string checkpoint;
  std::string spec;
  std::vector<std::string> perturbations;
  int n = 100;
  std::uint64_t seed = 0;
  std::string mode = "dynamics-consistent";
  std::string out;
};

void cmd_perturb(const PerturbArgs& a, const Common& c, const std::vector<std::string>& argv, std::ostream& out) {
  Manifest m("perturb", argv);
  const auto env = load_env(c, &m);
  const auto ck = load_model(a.checkpoint, &m);
  const auto spec = load_named_spec(a.spec, &m);
  std::vector<eval::Perturbation> perts;
  if (a.perturbations.empty()) {
    perts = eval::default_perturbations(spec.formula, env);
  } else {
    perts.push_back({"identity", stl::render_canonical(spec.formula)});
    for (const auto& p : a.perturbations) {
      const auto eq = p.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw Error(ErrorCategory::usage, "perturbation '" + p + "' must look like NAME=FORMULA");
      }
      perts.push_back({p.substr(0, eq), p.substr(eq + 1)});
    }
  }
  const auto opt = eval_options(a.n, a.seed, a.mode, c);
  const auto study = eval::perturbation_study(*ck.model, ck.digest, spec.formula, perts, env, opt);
  const std::string json = eval::study_to_json(study);
  out << (c.fmt() == Format::json ? json : eval::study_table(study));
  if (!a.out.empty()) {
    ensure_dir(a.out);
    const fs::path path = fs::path(a.out) / "perturbation.json";
    write_file_atomic(path, json);
    m.config(eval_config(opt, env));
    m.seed("eval", a.seed);
    m.output(path);
    m.write(fs::path(a.out) / "manifest.json");
  }
}

// --- monitor --------------------------------------------------------------

std::vector<std::vector<env::State>> read_trajectories(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<std::vector<env::State>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCategory::schema, path + ":" + std::to_string(lineno) + ": " + why);
  };

  if (fs::path(path).extension() == ".jsonl" || fs::path(path).extension() == ".json") {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = ordered_json::parse(line);
        std::vector<env::State> states;
        for (const auto& s : j.at("states")) {
          if (s.size() != 4) fail("state rows need 4 values");
          states.push_back({s[0].get<double>(), s[1].get<double>(), s[2].get<double>(), s[3].get<double>()});
        }
        out.push_back(std::move(states));
      } catch (const nlohmann::json::exception& e) {
        fail(std::string("malformed trajectory: ") + e.what());
      }
    }
    return out;
  }

  // CSV with a header naming at least px and py; an optional "trajectory" column groups rows.
  if (!std::getline(in, line)) fail("empty trajectory file");
  ++lineno;
  std::map<std::string, std::size_t> col;
  {
    std::istringstream h(line);
    std::string name;
    for (std::size_t i = 0; std::getline(h, name, ','); ++i) {
      while (!name.empty() && (name.back() == '\r' || name.back() == ' ')) name.pop_back();
      col[name] = i;
    }
  }
  if (!col.count("px") || !col.count("py")) fail("CSV header needs px and py columns");
  std::string current;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::istringstream r(line);
    std::string cell;
    while (std::getline(r, cell, ',')) cells.push_back(cell);
    auto num = [&](const char* name) -> double {
      const auto it = col.find(name);
      if (it == col.end()) return 0.0;
      if (it->second >= cells.size() || cells[it->second].empty()) fail(std::string("missing ") + name);
      try {
        return std::stod(cells[it->second]);
      } catch (const std::exception&) {
        fail(std::string("bad number in column ") + name);
      }
      return 0.0;
    };
    const std::string id = col.count("trajectory") && col["trajectory"] < cells.size() ? cells[col["trajectory"]] : "";
    if (first || id != current) {
      out.emplace_back();
      current = id;
      first = false;
    }
    out.back().push_back({num("px"), num("py"), num("vx"), num("vy")});
  }
  return out;
}

struct MonitorArgs {
  std::string spec;
  std::string traj;
};

void cmd_monitor(const MonitorArgs& a, const Common& c, std::ostream& out) {
  const auto env = load_env(c, nullptr);
  const auto f = stl::load_spec_file(a.spec);
  const auto trajectories = read_trajectories(a.traj);
  if (trajectories.empty()) throw Error(ErrorCategory::schema, a.traj + " holds no trajectory");
  ordered_json rows = ordered_json::array();
  for (const auto& states : trajectories) {
    const auto signal = stl::Signal::from_states(states);
    const bool sat = stl::satisfies(f, signal, 0, env);
    const double rho = stl::robustness(f, signal, 0, env);
    if (c.fmt() == Format::json) {
      rows.push_back({{"satisfied", sat}, {"rho", rho}});
    } else {
      out << (sat ? "SAT" : "UNSAT") << " rho=" << format_double(rho) << "\n";
    }
  }
  if (c.fmt() == Format::json) out << rows.dump(2) << "\n";
}

// --- plot -----------------------------------------------------------------

struct PlotArgs {
  std::string data;
  std::string checkpoint;
  std::string spec;
  int n = 4;
  std::uint64_t seed = 0;
  std::string mode = "dynamics-consistent";
  int limit = 0;
  std::string out;
};

void cmd_plot(const PlotArgs& a, const Common& c, const std::vector<std::string>& argv, std::ostream& out) {
  Manifest m("plot", argv);
  const auto env = load_env(c, &m);
  std::vector<env::Trajectory> trajectories;
  if (!a.data.empty()) {
    if (!a.checkpoint.empty()) throw Error(ErrorCategory::usage, "plot takes either --data or --checkpoint");
    for (auto& states : read_trajectories(a.data)) {
      env::Trajectory t;
      t.states = std::move(states);
      trajectories.push_back(std::move(t));
    }
    // Keep the actions that JSONL datasets carry.
    if (fs::path(a.data).extension() == ".jsonl") {
      const auto records = oracle::read_dataset(a.data);
      for (std::size_t i = 0; i < records.size() && i < trajectories.size(); ++i) {
        trajectories[i] = records[i].trajectory;
      }
    }
    m.input("trajectories", a.data);
  } else if (!a.checkpoint.empty() && !a.spec.empty()) {
    const auto ck = load_model(a.checkpoint, &m);
    auto opt = eval_options(a.n, a.seed, a.mode, c);
    opt.keep_trajectories = true;
    auto e = eval::satisfaction_rate(*ck.model, load_named_spec(a.spec, &m), env, opt);
    trajectories = std::move(e.trajectories);
    m.seed("eval", a.seed);
    m.config(eval_config(opt, env));
  } else {
    throw Error(ErrorCategory::usage, "plot needs --data, or --checkpoint with --spec");
  }
  if (a.limit > 0 && trajectories.size() > static_cast<std::size_t>(a.limit)) {
    trajectories.resize(static_cast<std::size_t>(a.limit));
  }
  eval::export_plots(trajectories, env, a.out);
  if (!trajectories.empty()) {
    m.output(a.out);
    m.write(fs::path(a.out) / "manifest.json");
  }
  if (c.fmt() == Format::json) {
    out << ordered_json{{"out", a.out}, {"plots", trajectories.size()}}.dump(2) << "\n";
  } else {
    out << "wrote " << trajectories.size() << " plots to " << a.out << "\n";
  }
}

// --- inspect-attn ---------------------------------------------------------

struct AttnArgs {
  std::string checkpoint;
  std::string spec;
  int n = 1;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_inspect_attn(const AttnArgs& a, const Common& c, const std::vector<std::string>& argv, std::ostream& out) {
  Manifest m("inspect-attn", argv);
  const auto env = load_env(c, &m);
  const auto ck = load_model(a.checkpoint, &m);
  const auto spec = load_named_spec(a.spec, &m);
  if (a.n < 1) throw Error(ErrorCategory::usage, "--n must be at least 1");
  const auto x0 = eval::sample_initial_states(a.n, a.seed, env);
  const auto exp = eval::inspect_attention(*ck.model, spec.formula, x0, env);
  eval::write_attention_csv(exp, a.out);

  ordered_json summary;
  summary["checkpoint_digest"] = ck.digest;
  summary["formula"] = stl::render_canonical(spec.formula);
  summary["samples"] = a.n;
  summary["spec_mass_by_layer"] = exp.summary.spec_mass_by_layer;
  summary["uniform_spec_mass"] = exp.summary.uniform_spec_mass;
  const fs::path summary_path = fs::path(a.out) / "summary.json";
  write_file_atomic(summary_path, summary.dump(2) + "\n");
  m.config({{"n_samples", a.n}, {"seed", a.seed}, {"environment", ordered_json::parse(env::serialize_environment(env))}});
  m.seed("eval", a.seed);
  m.output(a.out);
  m.write(fs::path(a.out) / "manifest.json");

  if (c.fmt() == Format::json) {
    out << summary.dump(2) << "\n";
  } else {
    out << "attention share on SPEC columns from STATE rows (uniform " << format_double(exp.summary.uniform_spec_mass)
        << ")\n";
    for (std::size_t l = 0; l < exp.summary.spec_mass_by_layer.size(); ++l) {
      out << "layer " << l << "  " << format_double(exp.summary.spec_mass_by_layer[l]) << "\n";
    }
    out << "matrices in " << a.out << "\n";
  }
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Specification-conditioned trajectory transformer toolkit"};
  app.name(args.empty() ? "pastel" : args.front());
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", PASTEL_VERSION);

  Common common;
  app.add_option("--jobs", common.jobs, "Worker threads")->check(CLI::Range(1u, 256u));
  app.add_option("--format", common.format, "Report format")->check(CLI::IsMember({"table", "json"}));
  app.add_option("--env", common.env_path, "Environment JSON (default: built-in world)")->check(CLI::ExistingFile);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a verified oracle dataset");
  gen_cmd->add_option("--spec", gen.specs, "Spec files (id = file stem)")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Dataset JSONL path")->required();
  gen_cmd->add_option("--config", gen.config, "Generation config JSON")->check(CLI::ExistingFile);
  gen_cmd->add_option("--count", gen.count, "Records per spec");
  gen_cmd->add_option("--seed", gen.seed, "Generation seed");
  gen_cmd->add_option("--iterations", gen.iterations, "Optimizer iterations per smoothing stage");
  gen_cmd->add_option("--restarts", gen.restarts, "Restarts per initial state");
  gen_cmd->add_option("--margin", gen.margin, "Required exact robustness");
  gen_cmd->add_option("--max-attempts", gen.max_attempts, "Initial states tried per record");

  VerifyArgs verify;
  auto* verify_cmd = app.add_subcommand("dataset-verify", "Re-check every record of a dataset");
  verify_cmd->add_option("--data", verify.data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--margin", verify.margin, "Required exact robustness");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset");
  train_cmd->add_option("--data", tr.data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--config", tr.config, "Train config JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--verify-margin", tr.verify_margin, "Robustness margin checked on load");
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--warmup-fraction", tr.warmup);
  train_cmd->add_option("--weight-decay", tr.weight_decay);
  train_cmd->add_option("--max-grad-norm", tr.grad_clip);
  train_cmd->add_option("--validation-fraction", tr.validation_fraction);
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--d-model", tr.d_model);
  train_cmd->add_option("--heads", tr.n_heads);
  train_cmd->add_option("--layers", tr.n_layers);
  train_cmd->add_option("--d-tok", tr.d_tok);
  train_cmd->add_option("--d-ff", tr.d_ff);
  train_cmd->add_option("--h-max", tr.h_max);
  train_cmd->add_option("--dropout", tr.dropout);
  train_cmd->add_flag("--ablation", tr.ablation, "Train the spec-free ablation");
  train_cmd->add_flag("--running-train-loss", tr.running_train_row,
                      "Log the running minibatch loss instead of re-evaluating the train split");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Satisfaction rates of model rollouts");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--spec", ev.specs)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--n", ev.n, "Rollouts per spec")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", ev.seed);
  eval_cmd->add_option("--mode", ev.mode)->check(CLI::IsMember({"dynamics-consistent", "open-loop"}));
  eval_cmd->add_option("--out", ev.out, "Directory for report.json and the manifest");
  eval_cmd->add_option("--plots", ev.plots, "Directory for per-spec SVG plots");

  PerturbArgs pe;
  auto* perturb_cmd = app.add_subcommand("perturb", "Spec-perturbation study");
  perturb_cmd->add_option("--checkpoint", pe.checkpoint)->required()->check(CLI::ExistingFile);
  perturb_cmd->add_option("--spec", pe.spec)->required()->check(CLI::ExistingFile);
  perturb_cmd->add_option("--perturb", pe.perturbations, "NAME=FORMULA (default: region swaps)");
  perturb_cmd->add_option("--n", pe.n)->check(CLI::PositiveNumber);
  perturb_cmd->add_option("--seed", pe.seed);
  perturb_cmd->add_option("--mode", pe.mode)->check(CLI::IsMember({"dynamics-consistent", "open-loop"}));
  perturb_cmd->add_option("--out", pe.out);

  MonitorArgs mo;
  auto* monitor_cmd = app.add_subcommand("monitor", "Check trajectories against a spec");
  monitor_cmd->add_option("--spec", mo.spec)->required()->check(CLI::ExistingFile);
  monitor_cmd->add_option("--traj", mo.traj, "Trajectory JSONL (states) or CSV (px,py[,vx,vy])")
      ->required()
      ->check(CLI::ExistingFile);

  PlotArgs pl;
  auto* plot_cmd = app.add_subcommand("plot", "Render trajectories as SVG");
  plot_cmd->add_option("--data", pl.data, "Trajectory JSONL or CSV")->check(CLI::ExistingFile);
  plot_cmd->add_option("--checkpoint", pl.checkpoint)->check(CLI::ExistingFile);
  plot_cmd->add_option("--spec", pl.spec)->check(CLI::ExistingFile);
  plot_cmd->add_option("--n", pl.n)->check(CLI::PositiveNumber);
  plot_cmd->add_option("--seed", pl.seed);
  plot_cmd->add_option("--mode", pl.mode)->check(CLI::IsMember({"dynamics-consistent", "open-loop"}));
  plot_cmd->add_option("--limit", pl.limit, "Plot at most this many (0: all)");
  plot_cmd->add_option("--out", pl.out)->required();

  AttnArgs at;
  auto* attn_cmd = app.add_subcommand("inspect-attn", "Export attention matrices of a rollout");
  attn_cmd->add_option("--checkpoint", at.checkpoint)->required()->check(CLI::ExistingFile);
  attn_cmd->add_option("--spec", at.spec)->required()->check(CLI::ExistingFile);
  attn_cmd->add_option("--n", at.n, "Rollouts in the batch (matrices are for the first)");
  attn_cmd->add_option("--seed", at.seed);
  attn_cmd->add_option("--out", at.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << PASTEL_VERSION << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    // Missing files are reported by the ExistingFile validator; keep them apart from usage errors.
    const std::string what = e.what();
    const bool missing = what.find("does not exist") != std::string::npos;
    const auto cat = missing ? ErrorCategory::io : ErrorCategory::usage;
    err << error_line(cat, what) << "\n";
    return exit_code(cat);
  }

  try {
    if (*gen_cmd) cmd_gen_data(gen, common, args, out);
    else if (*verify_cmd) cmd_verify(verify, common, out);
    else if (*train_cmd) cmd_train(tr, common, args, out, err);
    else if (*eval_cmd) cmd_eval(ev, common, args, out);
    else if (*perturb_cmd) cmd_perturb(pe, common, args, out);
    else if (*monitor_cmd) cmd_monitor(mo, common, out);
    else if (*plot_cmd) cmd_plot(pl, common, args, out);
    else if (*attn_cmd) cmd_inspect_attn(at, common, args, out);
  } catch (const Error& e) {
    err << error_line(e.category(), e.what()) << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << error_line(ErrorCategory::internal, e.what()) << "\n";
    return exit_code(ErrorCategory::internal);
  }
  return 0;
}

} // namespace pastel::cli
