#include "pastel/eval/eval_harness.hpp"

#include "pastel/common/error.hpp"
#include "pastel/common/format.hpp"
#include "pastel/common/io.hpp"
#include "pastel/common/parallel.hpp"
#include "pastel/common/rng.hpp"
#include "pastel/stl/linearize.hpp"
#include "pastel/stl/parser.hpp"
#include "pastel/stl/semantics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace pastel::eval {

using nlohmann::ordered_json;

std::vector<env::State> sample_initial_states(int n, std::uint64_t seed, const env::EnvironmentSpec& env) {
  std::vector<env::State> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    out.push_back(env::sample_initial_state(derive_seed({seed, static_cast<std::uint64_t>(i)}), env));
  }
  return out;
}

ActuationAudit actuation_audit(std::span<const std::vector<env::Action>> actions, const env::EnvironmentSpec& env) {
  ActuationAudit a;
  for (const auto& seq : actions) {
    for (const auto& u : seq) {
      const double m = std::max(std::abs(u.ax), std::abs(u.ay));
      ++a.actions;
      a.max_abs_action = std::max(a.max_abs_action, m);
      if (m > env.a_max()) ++a.violations;
    }
  }
  return a;
}

ActuationAudit actuation_audit(std::span<const env::Trajectory> trajectories, const env::EnvironmentSpec& env) {
  std::vector<std::vector<env::Action>> actions;
  actions.reserve(trajectories.size());
  for (const auto& t : trajectories) actions.push_back(t.actions);
  return actuation_audit(actions, env);
}

RobustnessStats robustness_stats(std::vector<double> values) {
  if (values.empty()) return {};
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const double median = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  return {values.front(), median, values.back()};
}

namespace {

void check_capacity(const model::PastelModel& model, const stl::Formula& f) {
  const int h = stl::horizon(f);
  if (h > model.config().h_max) {
    throw Error(ErrorCategory::domain, "formula horizon " + std::to_string(h) + " exceeds the checkpoint's capacity " +
                                           std::to_string(model.config().h_max));
  }
}

std::vector<model::RolloutResult> rollout_chunked(const model::PastelModel& model, const stl::Formula& f,
                                                  std::span<const env::State> x0, const env::EnvironmentSpec& env,
                                                  const EvalOptions& opt) {
  const std::size_t chunks = (x0.size() + kRolloutChunk - 1) / kRolloutChunk;
  std::vector<std::vector<model::RolloutResult>> parts(chunks);
  parallel_for(chunks, opt.jobs, [&](std::size_t c) {
    const std::size_t begin = c * kRolloutChunk;
    const std::size_t count = std::min(kRolloutChunk, x0.size() - begin);
    parts[c] = model::rollout_batch(model, f, x0.subspan(begin, count), env, opt.mode);
  });
  std::vector<model::RolloutResult> out;
  out.reserve(x0.size());
  for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(out));
  return out;
}

void score(SpecEvaluation& e, const stl::Formula& f, std::span<const env::Trajectory> trajectories,
           const env::EnvironmentSpec& env) {
  std::vector<double> rhos;
  for (const auto& t : trajectories) {
    const auto signal = stl::Signal::from_states(t.states);
    RolloutOutcome o{stl::satisfies(f, signal, 0, env), stl::robustness(f, signal, 0, env)};
    e.satisfied += o.satisfied ? 1 : 0;
    rhos.push_back(o.robustness);
    e.rollouts.push_back(o);
  }
  e.n_samples = static_cast<int>(trajectories.size());
  e.percentage = e.n_samples == 0 ? 0.0 : 100.0 * e.satisfied / e.n_samples;
  e.robustness = robustness_stats(std::move(rhos));
}

} // namespace

SpecEvaluation satisfaction_rate(const model::PastelModel& model, const oracle::NamedSpec& spec,
                                 const env::EnvironmentSpec& env, const EvalOptions& opt) {
  if (opt.n_samples < 1) throw Error(ErrorCategory::usage, "n_samples must be at least 1");
  check_capacity(model, spec.formula);
  const auto x0 = sample_initial_states(opt.n_samples, opt.seed, env);
  const auto results = rollout_chunked(model, spec.formula, x0, env, opt);

  SpecEvaluation e;
  e.spec_id = spec.id;
  e.formula = stl::render_canonical(spec.formula);
  std::vector<env::Trajectory> trajectories;
  std::vector<std::vector<env::Action>> audited;
  for (const auto& r : results) {
    trajectories.push_back(r.trajectory);
    audited.push_back(opt.mode == model::RolloutMode::open_loop ? r.trajectory.actions : r.raw_actions);
  }
  score(e, spec.formula, trajectories, env);
  e.actuation = actuation_audit(audited, env);
  if (opt.keep_trajectories) e.trajectories = std::move(trajectories);
  return e;
}

SpecEvaluation replay_satisfaction(std::span<const oracle::DatasetRecord> records, const env::EnvironmentSpec& env) {
  SpecEvaluation e;
  std::vector<double> rhos;
  std::vector<env::Trajectory> trajectories;
  for (const auto& r : records) {
    const auto f = stl::parse(stl::join_tokens(r.tokens));
    const auto signal = stl::Signal::from_states(r.trajectory.states);
    RolloutOutcome o{stl::satisfies(f, signal, 0, env), stl::robustness(f, signal, 0, env)};
    e.satisfied += o.satisfied ? 1 : 0;
    rhos.push_back(o.robustness);
    e.rollouts.push_back(o);
    trajectories.push_back(r.trajectory);
    if (e.spec_id.empty()) e.spec_id = r.spec_id;
    else if (e.spec_id != r.spec_id) e.spec_id = "mixed";
  }
  e.n_samples = static_cast<int>(records.size());
  e.percentage = e.n_samples == 0 ? 0.0 : 100.0 * e.satisfied / e.n_samples;
  e.robustness = robustness_stats(std::move(rhos));
  e.actuation = actuation_audit(trajectories, env);
  return e;
}

EvalReport evaluate(const model::PastelModel& model, const std::string& checkpoint_digest,
                    std::span<const oracle::NamedSpec> specs, const env::EnvironmentSpec& env,
                    const EvalOptions& opt) {
  EvalReport r;
  r.checkpoint_digest = checkpoint_digest;
  r.config_fingerprint = model.config().fingerprint();
  r.ablation = model.config().ablation;
  r.mode = opt.mode;
  r.seed = opt.seed;
  r.n_samples = opt.n_samples;
  for (const auto& s : specs) r.specs.push_back(satisfaction_rate(model, s, env, opt));
  return r;
}

namespace {

ordered_json stats_json(const RobustnessStats& s) {
  return {{"min", s.min}, {"median", s.median}, {"max", s.max}};
}

ordered_json audit_json(const ActuationAudit& a) {
  return {{"actions", a.actions}, {"violations", a.violations}, {"max_abs_action", a.max_abs_action}};
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

template <typename T>
T field(const ordered_json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCategory::schema, std::string("report is missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::schema, std::string("report field '") + key + "': " + e.what());
  }
}

} // namespace

std::string report_to_json(const EvalReport& report) {
  ordered_json j;
  j["format"] = "pastel-eval-report";
  j["format_version"] = kReportFormatVersion;
  j["checkpoint_digest"] = report.checkpoint_digest;
  j["config_fingerprint"] = report.config_fingerprint;
  j["ablation"] = report.ablation;
  j["mode"] = std::string(model::to_string(report.mode));
  j["seed"] = report.seed;
  j["n_samples"] = report.n_samples;
  ordered_json specs = ordered_json::array();
  for (const auto& s : report.specs) {
    ordered_json o;
    o["spec_id"] = s.spec_id;
    o["formula"] = s.formula;
    o["n_samples"] = s.n_samples;
    o["satisfied"] = s.satisfied;
    o["percentage"] = s.percentage;
    o["robustness"] = stats_json(s.robustness);
    o["actuation"] = audit_json(s.actuation);
    ordered_json rollouts = ordered_json::array();
    for (const auto& r : s.rollouts) rollouts.push_back({{"satisfied", r.satisfied}, {"robustness", r.robustness}});
    o["rollouts"] = std::move(rollouts);
    specs.push_back(std::move(o));
  }
  j["specs"] = std::move(specs);
  return j.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::schema, std::string("malformed eval report: ") + e.what());
  }
  if (field<std::string>(j, "format") != "pastel-eval-report") {
    throw Error(ErrorCategory::schema, "not an eval report");
  }
  const int version = field<int>(j, "format_version");
  if (version != kReportFormatVersion) {
    throw Error(ErrorCategory::schema, "unsupported eval report format_version " + std::to_string(version));
  }
  EvalReport r;
  r.checkpoint_digest = field<std::string>(j, "checkpoint_digest");
  r.config_fingerprint = field<std::string>(j, "config_fingerprint");
  r.ablation = field<bool>(j, "ablation");
  r.mode = model::parse_rollout_mode(field<std::string>(j, "mode"));
  r.seed = field<std::uint64_t>(j, "seed");
  r.n_samples = field<int>(j, "n_samples");
  for (const auto& o : field<ordered_json>(j, "specs")) {
    SpecEvaluation s;
    s.spec_id = field<std::string>(o, "spec_id");
    s.formula = field<std::string>(o, "formula");
    s.n_samples = field<int>(o, "n_samples");
    s.satisfied = field<int>(o, "satisfied");
    s.percentage = field<double>(o, "percentage");
    const auto rs = field<ordered_json>(o, "robustness");
    s.robustness = {field<double>(rs, "min"), field<double>(rs, "median"), field<double>(rs, "max")};
    const auto au = field<ordered_json>(o, "actuation");
    s.actuation = {field<std::size_t>(au, "actions"), field<std::size_t>(au, "violations"),
                   field<double>(au, "max_abs_action")};
    for (const auto& ro : field<ordered_json>(o, "rollouts")) {
      s.rollouts.push_back({field<bool>(ro, "satisfied"), field<double>(ro, "robustness")});
    }
    if (s.percentage < 0.0 || s.percentage > 100.0 || s.satisfied < 0 || s.satisfied > s.n_samples ||
        static_cast<int>(s.rollouts.size()) != s.n_samples) {
      throw Error(ErrorCategory::schema, "inconsistent counts for spec '" + s.spec_id + "'");
    }
    r.specs.push_back(std::move(s));
  }
  return r;
}

std::string report_table(const EvalReport& report) {
  std::ostringstream os;
  os << "checkpoint " << report.checkpoint_digest.substr(0, 16) << "  model "
     << (report.ablation ? "ablation" : "full") << "  mode " << model::to_string(report.mode) << "  seed "
     << report.seed << "  n " << report.n_samples << "\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-8s %8s %10s %10s %10s %10s %10s\n", "spec", "sat%", "rho_min", "rho_med",
                "rho_max", "act_viol", "max|a|");
  os << line;
  for (const auto& s : report.specs) {
    std::snprintf(line, sizeof(line), "%-8s %8s %10s %10s %10s %10zu %10s\n", s.spec_id.c_str(),
                  percent(s.percentage).c_str(), fixed(s.robustness.min, 3).c_str(),
                  fixed(s.robustness.median, 3).c_str(), fixed(s.robustness.max, 3).c_str(), s.actuation.violations,
                  fixed(s.actuation.max_abs_action, 3).c_str());
    os << line;
  }
  return os.str();
}

std::optional<double> relative_improvement(double old_rate, double new_rate) {
  if (old_rate == 0.0) return std::nullopt;
  return (new_rate - old_rate) / old_rate;
}

std::string swap_regions(const stl::Formula& f, const std::string& a, const std::string& b) {
  auto tokens = stl::linearize(f).tokens;
  for (auto& t : tokens) {
    if (t == a) t = b;
    else if (t == b) t = a;
  }
  return stl::render_canonical(stl::parse(stl::join_tokens(tokens)));
}

std::vector<Perturbation> default_perturbations(const stl::Formula& f, const env::EnvironmentSpec& env) {
  std::vector<Perturbation> out{{"identity", stl::render_canonical(f)}};
  std::vector<std::string> goals;
  for (const auto& r : env.regions()) {
    if (r.role == env::RegionRole::goal) goals.push_back(r.name);
  }
  const auto used = stl::referenced_regions(f);
  const std::set<std::string> used_set(used.begin(), used.end());
  for (std::size_t i = 0; i < goals.size(); ++i) {
    for (std::size_t j = i + 1; j < goals.size(); ++j) {
      if (!used_set.count(goals[i]) && !used_set.count(goals[j])) continue;
      out.push_back({"swap_" + goals[i] + "_" + goals[j], swap_regions(f, goals[i], goals[j])});
    }
  }
  return out;
}

PerturbationStudy perturbation_study(const model::PastelModel& model, const std::string& checkpoint_digest,
                                     const stl::Formula& f, std::span<const Perturbation> perturbations,
                                     const env::EnvironmentSpec& env, const EvalOptions& opt) {
  if (opt.n_samples < 1) throw Error(ErrorCategory::usage, "n_samples must be at least 1");
  check_capacity(model, f);
  PerturbationStudy study;
  study.formula = stl::render_canonical(f);
  study.checkpoint_digest = checkpoint_digest;
  study.ablation = model.config().ablation;
  study.mode = opt.mode;
  study.seed = opt.seed;
  study.n_samples = opt.n_samples;
  const auto x0 = sample_initial_states(opt.n_samples, opt.seed, env);
  const int h = stl::horizon(f);

  for (const auto& p : perturbations) {
    PerturbationRow row;
    row.name = p.name;
    row.formula = p.formula;
    std::optional<stl::Formula> g;
    try {
      g = stl::parse(p.formula);
      row.formula = stl::render_canonical(*g);
      model.tokenize(*g);
      for (const auto& name : stl::referenced_regions(*g)) env.region(name);
    } catch (const Error& e) {
      row.skipped = true;
      row.reason = e.what();
      study.rows.push_back(std::move(row));
      continue;
    }
    const auto results = rollout_chunked(model, *g, x0, env, opt);
    int sat_perturbed = 0;
    int sat_original = 0;
    const bool comparable = stl::horizon(*g) == h;
    for (const auto& r : results) {
      const auto signal = stl::Signal::from_states(r.trajectory.states);
      sat_perturbed += stl::satisfies(*g, signal, 0, env) ? 1 : 0;
      if (comparable) sat_original += stl::satisfies(f, signal, 0, env) ? 1 : 0;
    }
    const double n = static_cast<double>(opt.n_samples);
    row.rate_perturbed = 100.0 * sat_perturbed / n;
    if (comparable) row.rate_original = 100.0 * sat_original / n;
    study.rows.push_back(std::move(row));
  }
  return study;
}

std::string study_to_json(const PerturbationStudy& study) {
  ordered_json j;
  j["format"] = "pastel-perturbation-study";
  j["format_version"] = kReportFormatVersion;
  j["formula"] = study.formula;
  j["checkpoint_digest"] = study.checkpoint_digest;
  j["ablation"] = study.ablation;
  j["mode"] = std::string(model::to_string(study.mode));
  j["seed"] = study.seed;
  j["n_samples"] = study.n_samples;
  ordered_json rows = ordered_json::array();
  for (const auto& r : study.rows) {
    ordered_json o;
    o["name"] = r.name;
    o["formula"] = r.formula;
    o["skipped"] = r.skipped;
    if (r.skipped) {
      o["reason"] = r.reason;
    } else {
      o["rate_perturbed"] = r.rate_perturbed;
      o["rate_original"] = r.rate_original ? ordered_json(*r.rate_original) : ordered_json(nullptr);
    }
    rows.push_back(std::move(o));
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string study_table(const PerturbationStudy& study) {
  std::ostringstream os;
  os << "original " << study.formula << "  model " << (study.ablation ? "ablation" : "full") << "  n "
     << study.n_samples << "\n";
  char line[512];
  std::snprintf(line, sizeof(line), "%-14s %10s %10s  %s\n", "perturbation", "sat(f')%", "sat(f)%", "f'");
  os << line;
  for (const auto& r : study.rows) {
    if (r.skipped) {
      std::snprintf(line, sizeof(line), "%-14s %10s %10s  %s (%s)\n", r.name.c_str(), "skipped", "-",
                    r.formula.c_str(), r.reason.c_str());
    } else {
      std::snprintf(line, sizeof(line), "%-14s %10s %10s  %s\n", r.name.c_str(), percent(r.rate_perturbed).c_str(),
                    r.rate_original ? percent(*r.rate_original).c_str() : "-", r.formula.c_str());
    }
    os << line;
  }
  return os.str();
}

// Plots: 40 px per world unit, 30 px margin, y axis pointing up.

namespace {

constexpr double kScale = 40.0;
constexpr double kMargin = 30.0;

struct Canvas {
  const env::Rect& ws;
  double x(double wx) const { return kMargin + (wx - ws.xlo) * kScale; }
  double y(double wy) const { return kMargin + (ws.yhi - wy) * kScale; }
  double width() const { return 2 * kMargin + ws.width() * kScale; }
  double height() const { return 2 * kMargin + ws.height() * kScale; }
};

std::string px(double v) { return fixed(v, 2); }

} // namespace

std::string render_svg(const env::Trajectory& trajectory, const env::EnvironmentSpec& env) {
  const Canvas c{env.workspace()};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px(c.width()) << "\" height=\"" << px(c.height())
     << "\" viewBox=\"0 0 " << px(c.width()) << " " << px(c.height()) << "\">\n";
  os << "<defs><pattern id=\"hatch\" width=\"8\" height=\"8\" patternUnits=\"userSpaceOnUse\" "
        "patternTransform=\"rotate(45)\"><line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"8\" stroke=\"#b22222\" "
        "stroke-width=\"3\"/></pattern></defs>\n";
  os << "<rect x=\"" << px(c.x(c.ws.xlo)) << "\" y=\"" << px(c.y(c.ws.yhi)) << "\" width=\""
     << px(c.ws.width() * kScale) << "\" height=\"" << px(c.ws.height() * kScale)
     << "\" fill=\"white\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
  for (const auto& r : env.regions()) {
    const bool obstacle = r.role == env::RegionRole::obstacle;
    os << "<rect x=\"" << px(c.x(r.bounds.xlo)) << "\" y=\"" << px(c.y(r.bounds.yhi)) << "\" width=\""
       << px(r.bounds.width() * kScale) << "\" height=\"" << px(r.bounds.height() * kScale) << "\" fill=\""
       << (obstacle ? "url(#hatch)" : "#9fd89f") << "\" stroke=\"" << (obstacle ? "#b22222" : "#2e7d32")
       << "\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << px(c.x(0.5 * (r.bounds.xlo + r.bounds.xhi))) << "\" y=\""
       << px(c.y(0.5 * (r.bounds.ylo + r.bounds.yhi)) + 5) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       << "font-size=\"14\">" << r.name << "</text>\n";
  }
  if (!trajectory.states.empty()) {
    os << "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < trajectory.states.size(); ++i) {
      const auto& s = trajectory.states[i];
      os << (i ? " " : "") << px(c.x(s.px)) << "," << px(c.y(s.py));
    }
    os << "\"/>\n";
    const auto& a = trajectory.states.front();
    const auto& b = trajectory.states.back();
    os << "<circle cx=\"" << px(c.x(a.px)) << "\" cy=\"" << px(c.y(a.py))
       << "\" r=\"5\" fill=\"#1f4e9c\"><title>start</title></circle>\n";
    os << "<rect x=\"" << px(c.x(b.px) - 5) << "\" y=\"" << px(c.y(b.py) - 5)
       << "\" width=\"10\" height=\"10\" fill=\"#f4a300\" stroke=\"black\"><title>end</title></rect>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void export_plots(std::span<const env::Trajectory> trajectories, const env::EnvironmentSpec& env,
                  const std::filesystem::path& out_dir) {
  if (trajectories.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCategory::io, "cannot create " + out_dir.string() + ": " + ec.message());
  std::string csv = "trajectory,t,px,py,vx,vy,ax,ay\n";
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%03zu.svg", i);
    write_file_atomic(out_dir / name, render_svg(t, env));
    for (std::size_t k = 0; k < t.states.size(); ++k) {
      const auto& s = t.states[k];
      csv += std::to_string(i) + "," + std::to_string(k) + "," + format_double(s.px) + "," + format_double(s.py) +
             "," + format_double(s.vx) + "," + format_double(s.vy);
      if (k < t.actions.size()) {
        csv += "," + format_double(t.actions[k].ax) + "," + format_double(t.actions[k].ay) + "\n";
      } else {
        csv += ",,\n";
      }
    }
  }
  write_file_atomic(out_dir / "trajectories.csv", csv);
}

std::string position_label(int position) {
  static const char* kinds[] = {"SPEC", "STATE", "ACTION"};
  return std::string(kinds[position % 3]) + "_" + std::to_string(position / 3);
}

AttentionExport inspect_attention(const model::PastelModel& model, const stl::Formula& f,
                                  std::span<const env::State> x0, const env::EnvironmentSpec& env) {
  if (x0.empty()) throw Error(ErrorCategory::usage, "attention inspection needs at least one initial state");
  check_capacity(model, f);
  const auto results = model::rollout_batch(model, f, x0, env, model::RolloutMode::dynamics_consistent);
  const auto spec = model.tokenize(f);
  const int S = spec.horizon;
  model::SequenceBatch batch;
  batch.steps = S;
  batch.spec_ids.assign(x0.size(), spec.ids);
  batch.states.resize(static_cast<Eigen::Index>(x0.size()) * S, 4);
  batch.actions.resize(static_cast<Eigen::Index>(x0.size()) * S, 2);
  for (std::size_t b = 0; b < results.size(); ++b) {
    const auto& tr = results[b].trajectory;
    for (int t = 0; t < S; ++t) {
      const auto row = static_cast<Eigen::Index>(b) * S + t;
      const auto& x = tr.states[static_cast<std::size_t>(t)];
      const auto& a = tr.actions[static_cast<std::size_t>(t)];
      batch.states.row(row) << x.px, x.py, x.vx, x.vy;
      batch.actions.row(row) << a.ax, a.ay;
    }
  }
  AttentionExport out;
  ad::Tape tape(false);
  out.forward = model.forward(tape, batch, {false, !model.config().ablation, true});

  out.spec_tokens = spec.tokens;
  for (const auto& layer : out.forward.self_attention) {
    double mass = 0.0;
    std::size_t rows = 0;
    for (const auto& w : layer) {
      for (int t = 0; t < S; ++t) {
        const int p = model::sequence_position(t, 1);
        for (int k = 0; k <= t; ++k) mass += w(p, model::sequence_position(k, 0));
        ++rows;
      }
    }
    out.summary.spec_mass_by_layer.push_back(mass / static_cast<double>(rows));
  }
  double uniform = 0.0;
  for (int t = 0; t < S; ++t) uniform += static_cast<double>(t + 1) / static_cast<double>(3 * t + 2);
  out.summary.uniform_spec_mass = uniform / S;
  return out;
}

namespace {

void write_matrix_csv(const std::filesystem::path& path, const ad::Matrix& m, const std::vector<std::string>& rows,
                      const std::vector<std::string>& cols) {
  std::string s = "row";
  for (const auto& c : cols) s += "," + c;
  s += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    s += rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.cols(); ++j) s += "," + format_double(m(i, j));
    s += "\n";
  }
  write_file_atomic(path, s);
}

} // namespace

void write_attention_csv(const AttentionExport& a, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCategory::io, "cannot create " + out_dir.string() + ": " + ec.message());
  const auto& fw = a.forward;
  std::vector<std::string> labels;
  for (int p = 0; p < 3 * fw.steps; ++p) labels.push_back(position_label(p));
  for (std::size_t l = 0; l < fw.self_attention.size(); ++l) {
    const auto& layer = fw.self_attention[l];
    const std::size_t heads = layer.size() / static_cast<std::size_t>(fw.batch);
    for (std::size_t h = 0; h < heads; ++h) {
      write_matrix_csv(out_dir / ("layer" + std::to_string(l) + "_head" + std::to_string(h) + ".csv"), layer[h],
                       labels, labels);
    }
  }
  if (!fw.cross_attention.empty()) {
    const std::size_t heads = fw.cross_attention.size() / static_cast<std::size_t>(fw.batch);
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < a.spec_tokens.size(); ++i) tokens.push_back("TOKEN_" + std::to_string(i) + ":" + a.spec_tokens[i]);
    for (std::size_t h = 0; h < heads; ++h) {
      write_matrix_csv(out_dir / ("cross_head" + std::to_string(h) + ".csv"), fw.cross_attention[h], tokens, labels);
    }
  }
}

} // namespace pastel::eval
