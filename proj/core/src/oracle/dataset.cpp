#include "pastel/oracle/dataset.hpp"

#include "pastel/common/error.hpp"
#include "pastel/common/io.hpp"
#include "pastel/common/parallel.hpp"
#include "pastel/common/rng.hpp"
#include "pastel/stl/linearize.hpp"
#include "pastel/stl/parser.hpp"
#include "pastel/stl/semantics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

namespace pastel::oracle {

using nlohmann::ordered_json;

std::uint64_t record_seed(std::uint64_t seed, std::string_view spec_id, int index, int attempt) {
  return derive_seed({seed, fnv1a(spec_id), static_cast<std::uint64_t>(index),
                      static_cast<std::uint64_t>(attempt)});
}

GenerationResult generate_records(const std::vector<NamedSpec>& specs,
                                  const env::EnvironmentSpec& env, const GenerationConfig& cfg) {
  if (cfg.per_spec_count < 1) throw Error(ErrorCategory::config, "per_spec_count must be >= 1");
  if (cfg.max_attempts_per_record < 1) {
    throw Error(ErrorCategory::config, "max_attempts_per_record must be >= 1");
  }
  cfg.oracle.validate();

  GenerationResult result;
  for (const auto& spec : specs) {
    const auto count = static_cast<std::size_t>(cfg.per_spec_count);
    std::vector<std::optional<DatasetRecord>> slots(count);
    std::vector<int> attempts(count, 0);
    std::vector<double> best(count, 0.0);
    const std::vector<std::string> tokens = stl::linearize(spec.formula).tokens;

    parallel_for(count, cfg.jobs, [&](std::size_t i) {
      const int index = static_cast<int>(i);
      double best_rho = -1e300;
      for (int attempt = 0; attempt < cfg.max_attempts_per_record; ++attempt) {
        attempts[i] = attempt + 1;
        const std::uint64_t seed = record_seed(cfg.seed, spec.id, index, attempt);
        const env::State x0 = env::sample_initial_state(derive_seed({seed, 1}), env);
        PlanOutcome outcome = plan(spec.formula, x0, env, cfg.oracle, seed);
        best_rho = std::max(best_rho, outcome.best_robustness);
        if (outcome.ok()) {
          DatasetRecord rec;
          rec.spec_id = spec.id;
          rec.tokens = tokens;
          rec.trajectory = std::move(*outcome.trajectory);
          rec.trajectory.spec_id = spec.id;
          rec.rho = rec.trajectory.robustness_at_generation;
          rec.seed = seed;
          slots[i] = std::move(rec);
          return;
        }
      }
      best[i] = best_rho;
    });

    SpecSummary summary;
    summary.spec_id = spec.id;
    std::vector<double> rhos;
    for (std::size_t i = 0; i < count; ++i) {
      summary.attempts += attempts[i];
      if (slots[i]) {
        ++summary.accepted;
        rhos.push_back(slots[i]->rho);
      }
    }
    if (!rhos.empty()) {
      std::sort(rhos.begin(), rhos.end());
      summary.rho_min = rhos.front();
      summary.rho_max = rhos.back();
      summary.rho_median = rhos.size() % 2 == 1
                               ? rhos[rhos.size() / 2]
                               : 0.5 * (rhos[rhos.size() / 2 - 1] + rhos[rhos.size() / 2]);
    }
    if (summary.success_rate() < cfg.min_success_rate ||
        summary.accepted < cfg.per_spec_count) {
      std::ostringstream os;
      os << "oracle could not build spec '" << spec.id << "': " << summary.accepted << "/"
         << cfg.per_spec_count << " records after " << summary.attempts
         << " attempts (success rate " << summary.success_rate() << ", floor "
         << cfg.min_success_rate << ")";
      for (std::size_t i = 0; i < count; ++i) {
        if (!slots[i]) {
          os << "; first failing index " << i << " best robustness " << best[i];
          break;
        }
      }
      throw Error(ErrorCategory::verification, os.str());
    }
    for (auto& slot : slots) result.records.push_back(std::move(*slot));
    result.summaries.push_back(summary);
  }
  return result;
}

std::string generation_config_to_json(const GenerationConfig& cfg) {
  ordered_json j;
  j["per_spec_count"] = cfg.per_spec_count;
  j["seed"] = cfg.seed;
  j["max_attempts_per_record"] = cfg.max_attempts_per_record;
  j["min_success_rate"] = cfg.min_success_rate;
  const auto& o = cfg.oracle;
  j["oracle"] = {{"beta_schedule", o.beta_schedule}, {"step_sizes", o.step_sizes},
                 {"iterations_per_stage", o.iterations_per_stage}, {"restarts", o.restarts},
                 {"action_weight", o.action_weight}, {"margin", o.margin}, {"restart_scale", o.restart_scale}};
  return j.dump(2) + "\n";
}

GenerationConfig generation_config_from_json(std::string_view json_text, GenerationConfig base) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::config, std::string("oracle config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCategory::config, "oracle config must be a JSON object");
  GenerationConfig c = std::move(base);
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "per_spec_count") c.per_spec_count = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "max_attempts_per_record") c.max_attempts_per_record = v.get<int>();
      else if (key == "min_success_rate") c.min_success_rate = v.get<double>();
      else if (key == "oracle") {
        auto& o = c.oracle;
        for (const auto& [ok, ov] : v.items()) {
          if (ok == "beta_schedule") o.beta_schedule = ov.get<std::vector<double>>();
          else if (ok == "step_sizes") o.step_sizes = ov.get<std::vector<double>>();
          else if (ok == "iterations_per_stage") o.iterations_per_stage = ov.get<int>();
          else if (ok == "restarts") o.restarts = ov.get<int>();
          else if (ok == "action_weight") o.action_weight = ov.get<double>();
          else if (ok == "margin") o.margin = ov.get<double>();
          else if (ok == "restart_scale") o.restart_scale = ov.get<double>();
          else throw Error(ErrorCategory::config, "unknown oracle config key '" + ok + "'");
        }
      } else {
        throw Error(ErrorCategory::config, "unknown generation config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::config, std::string("oracle config: ") + e.what());
  }
  return c;
}

std::string record_to_json_line(const DatasetRecord& record) {
  ordered_json j;
  j["spec_id"] = record.spec_id;
  j["tokens"] = record.tokens;
  ordered_json states = ordered_json::array();
  for (const auto& x : record.trajectory.states) states.push_back({x.px, x.py, x.vx, x.vy});
  ordered_json actions = ordered_json::array();
  for (const auto& a : record.trajectory.actions) actions.push_back({a.ax, a.ay});
  j["states"] = std::move(states);
  j["actions"] = std::move(actions);
  j["rho"] = record.rho;
  j["seed"] = record.seed;
  return j.dump();
}

DatasetRecord record_from_json_line(std::string_view line) {
  try {
    const auto j = ordered_json::parse(line);
    DatasetRecord rec;
    rec.spec_id = j.at("spec_id").get<std::string>();
    rec.tokens = j.at("tokens").get<std::vector<std::string>>();
    for (const auto& s : j.at("states")) {
      if (s.size() != 4) throw Error(ErrorCategory::schema, "state rows need 4 values");
      rec.trajectory.states.push_back(
          {s[0].get<double>(), s[1].get<double>(), s[2].get<double>(), s[3].get<double>()});
    }
    for (const auto& a : j.at("actions")) {
      if (a.size() != 2) throw Error(ErrorCategory::schema, "action rows need 2 values");
      rec.trajectory.actions.push_back({a[0].get<double>(), a[1].get<double>()});
    }
    rec.rho = j.at("rho").get<double>();
    rec.seed = j.at("seed").get<std::uint64_t>();
    rec.trajectory.spec_id = rec.spec_id;
    rec.trajectory.robustness_at_generation = rec.rho;
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::schema, std::string("malformed dataset record: ") + e.what());
  }
}

void write_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  std::string bytes;
  for (const auto& r : records) {
    bytes += record_to_json_line(r);
    bytes += '\n';
  }
  write_file_atomic(path, bytes);
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::io, "cannot open dataset " + path.string());
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json_line(line));
    } catch (const Error& e) {
      throw Error(e.category(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

VerificationReport verify_records(const std::vector<DatasetRecord>& records,
                                  const env::EnvironmentSpec& env, double margin) {
  VerificationReport report;
  report.records = records.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    auto issue = [&](std::string reason) { report.issues.push_back({i + 1, std::move(reason)}); };
    const auto& traj = rec.trajectory;
    for (const auto& a : traj.actions) {
      const double m = std::max(std::abs(a.ax), std::abs(a.ay));
      report.max_abs_action = std::max(report.max_abs_action, m);
      if (m > env.a_max()) ++report.actuation_violations;
    }
    if (!traj.lengths_consistent()) {
      issue("states/actions length mismatch");
      continue;
    }
    stl::Formula f = stl::Formula::region("_");
    try {
      f = stl::parse(stl::join_tokens(rec.tokens));
    } catch (const Error& e) {
      issue(std::string("tokens do not parse: ") + e.what());
      continue;
    }
    if (stl::linearize(f).tokens != rec.tokens) issue("tokens are not in canonical form");
    if (static_cast<std::size_t>(stl::horizon(f)) != traj.actions.size()) {
      issue("trajectory length differs from the formula horizon");
      continue;
    }
    try {
      if (!env::dynamics_consistent(traj, env)) issue("states do not follow the dynamics");
      const stl::Signal signal = stl::Signal::from_states(traj.states);
      if (!stl::satisfies(f, signal, 0, env)) issue("trajectory violates its formula");
      const double rho = stl::robustness(f, signal, 0, env);
      if (!(rho > margin)) issue("robustness " + std::to_string(rho) + " not above margin");
      if (std::abs(rho - rec.rho) > 1e-9) issue("stored rho differs from recomputation");
    } catch (const Error& e) {
      issue(e.what());
    }
  }
  return report;
}

std::vector<DatasetRecord> load_verified_dataset(const std::filesystem::path& path,
                                                 const env::EnvironmentSpec& env, double margin) {
  auto records = read_dataset(path);
  const auto report = verify_records(records, env, margin);
  if (!report.ok()) {
    std::ostringstream os;
    os << "dataset " << path.string() << " failed verification: " << report.issues.size()
       << " issues, " << report.actuation_violations << " actuation violations";
    if (!report.issues.empty()) {
      os << " (line " << report.issues.front().line << ": " << report.issues.front().reason << ")";
    }
    throw Error(ErrorCategory::verification, os.str());
  }
  return records;
}

} // namespace pastel::oracle
