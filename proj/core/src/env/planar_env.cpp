#include "pastel/env/planar_env.hpp"

#include "pastel/common/error.hpp"
#include "pastel/common/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace pastel::env {

namespace {

using nlohmann::json;

bool finite(const State& x) {
  return std::isfinite(x.px) && std::isfinite(x.py) && std::isfinite(x.vx) &&
         std::isfinite(x.vy);
}

std::string rect_text(const Rect& r) {
  std::ostringstream os;
  os << "[" << r.xlo << "," << r.xhi << "]x[" << r.ylo << "," << r.yhi << "]";
  return os.str();
}

Rect rect_from_json(const json& j, const std::string& what) {
  if (!j.contains("x") || !j.contains("y") || !j["x"].is_array() || !j["y"].is_array() ||
      j["x"].size() != 2 || j["y"].size() != 2) {
    throw Error(ErrorCategory::config, what + ": expected \"x\": [lo, hi] and \"y\": [lo, hi]");
  }
  return Rect{j["x"][0].get<double>(), j["x"][1].get<double>(), j["y"][0].get<double>(),
              j["y"][1].get<double>()};
}

json rect_to_json(const Rect& r) {
  return json{{"x", {r.xlo, r.xhi}}, {"y", {r.ylo, r.yhi}}};
}

} // namespace

EnvironmentSpec::EnvironmentSpec(Rect workspace, std::vector<Region> regions, double a_max,
                                 double dt, double v_max)
    : workspace_(workspace), regions_(std::move(regions)), a_max_(a_max), dt_(dt),
      v_max_(v_max) {
  validate();
}

void EnvironmentSpec::validate() const {
  if (!(workspace_.xlo < workspace_.xhi) || !(workspace_.ylo < workspace_.yhi)) {
    throw Error(ErrorCategory::config, "workspace is empty: " + rect_text(workspace_));
  }
  if (!(a_max_ > 0.0) || !(dt_ > 0.0) || !(v_max_ > 0.0)) {
    throw Error(ErrorCategory::config, "a_max, dt and v_max must be positive");
  }
  std::set<std::string> names;
  for (const auto& r : regions_) {
    if (r.name.empty()) throw Error(ErrorCategory::config, "region with empty name");
    if (!names.insert(r.name).second) {
      throw Error(ErrorCategory::config, "duplicate region name '" + r.name + "'");
    }
    if (!(r.bounds.xlo < r.bounds.xhi) || !(r.bounds.ylo < r.bounds.yhi)) {
      throw Error(ErrorCategory::config, "region '" + r.name + "' is empty");
    }
    if (!workspace_.contains(r.bounds)) {
      throw Error(ErrorCategory::config, "region '" + r.name + "' " + rect_text(r.bounds) +
                                             " leaves the workspace " + rect_text(workspace_));
    }
  }
}

EnvironmentSpec EnvironmentSpec::default_world() {
  return EnvironmentSpec(Rect{0, 10, 0, 10},
                         {
                             {"O1", Rect{4, 6, 4, 6}, RegionRole::obstacle},
                             {"R1", Rect{6, 8, 6, 8}, RegionRole::goal},
                             {"R2", Rect{1, 3, 6, 8}, RegionRole::goal},
                             {"R3", Rect{6, 8, 1, 3}, RegionRole::goal},
                         },
                         1.0, 1.0, 2.0);
}

const Region* EnvironmentSpec::find_region(std::string_view name) const noexcept {
  for (const auto& r : regions_) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const Region& EnvironmentSpec::region(std::string_view name) const {
  if (const auto* r = find_region(name)) return *r;
  throw Error(ErrorCategory::domain, "unknown region '" + std::string(name) + "'");
}

std::vector<std::string> EnvironmentSpec::region_names() const {
  std::vector<std::string> out;
  out.reserve(regions_.size());
  for (const auto& r : regions_) out.push_back(r.name);
  return out;
}

EnvironmentSpec parse_environment(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::config, std::string("environment is not valid JSON: ") + e.what());
  }
  if (!j.contains("format_version")) {
    throw Error(ErrorCategory::schema, "environment lacks format_version");
  }
  if (j["format_version"].get<int>() != kEnvironmentFormatVersion) {
    throw Error(ErrorCategory::schema,
                "environment format_version " + j["format_version"].dump() +
                    " unsupported (expected " + std::to_string(kEnvironmentFormatVersion) + ")");
  }
  try {
    const Rect workspace = rect_from_json(j.at("workspace"), "workspace");
    const auto& dyn = j.at("dynamics");
    std::vector<Region> regions;
    for (const auto& [name, body] : j.at("regions").items()) {
      const auto role_text = body.at("role").get<std::string>();
      RegionRole role;
      if (role_text == "goal") {
        role = RegionRole::goal;
      } else if (role_text == "obstacle") {
        role = RegionRole::obstacle;
      } else {
        throw Error(ErrorCategory::config,
                    "region '" + name + "' has unknown role '" + role_text + "'");
      }
      regions.push_back(Region{name, rect_from_json(body, "region " + name), role});
    }
    return EnvironmentSpec(workspace, std::move(regions), dyn.at("a_max").get<double>(),
                           dyn.at("dt").get<double>(), dyn.at("v_max").get<double>());
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::config, std::string("malformed environment: ") + e.what());
  }
}

EnvironmentSpec load_environment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot open environment file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_environment(buffer.str());
}

std::string serialize_environment(const EnvironmentSpec& env) {
  json regions = json::object();
  for (const auto& r : env.regions()) {
    json body = rect_to_json(r.bounds);
    body["role"] = r.role == RegionRole::goal ? "goal" : "obstacle";
    regions[r.name] = body;
  }
  json j{{"format_version", kEnvironmentFormatVersion},
         {"workspace", rect_to_json(env.workspace())},
         {"dynamics", {{"dt", env.dt()}, {"a_max", env.a_max()}, {"v_max", env.v_max()}}},
         {"regions", regions}};
  return j.dump(2) + "\n";
}

Action clamp_action(const Action& a, const EnvironmentSpec& env) noexcept {
  return Action{std::clamp(a.ax, -env.a_max(), env.a_max()),
                std::clamp(a.ay, -env.a_max(), env.a_max())};
}

State step(const State& x, const Action& a, const EnvironmentSpec& env) {
  if (!finite(x) || !std::isfinite(a.ax) || !std::isfinite(a.ay)) {
    throw Error(ErrorCategory::numeric, "step: non-finite state or action");
  }
  const Action c = clamp_action(a, env);
  const double dt = env.dt();
  State next;
  next.px = x.px + x.vx * dt + 0.5 * c.ax * dt * dt;
  next.py = x.py + x.vy * dt + 0.5 * c.ay * dt * dt;
  next.vx = std::clamp(x.vx + c.ax * dt, -env.v_max(), env.v_max());
  next.vy = std::clamp(x.vy + c.ay * dt, -env.v_max(), env.v_max());
  return next;
}

double rect_margin(const Rect& r, double x, double y) noexcept {
  return std::min({x - r.xlo, r.xhi - x, y - r.ylo, r.yhi - y});
}

double atom_margin(std::string_view region_name, Polarity polarity, const State& x,
                   const EnvironmentSpec& env) {
  const double m = rect_margin(env.region(region_name).bounds, x.px, x.py);
  return polarity == Polarity::inside ? m : -m;
}

State sample_initial_state(std::uint64_t seed, const EnvironmentSpec& env) {
  constexpr int kBudget = 10000;
  Rng rng(seed);
  const Rect& ws = env.workspace();
  for (int attempt = 0; attempt < kBudget; ++attempt) {
    const double px = uniform(rng, ws.xlo, ws.xhi);
    const double py = uniform(rng, ws.ylo, ws.yhi);
    const bool blocked = std::any_of(env.regions().begin(), env.regions().end(), [&](const Region& r) {
      return r.role == RegionRole::obstacle && r.bounds.strictly_contains(px, py);
    });
    if (blocked) continue;
    const double vx = uniform(rng, -0.5, 0.5);
    const double vy = uniform(rng, -0.5, 0.5);
    return State{px, py, vx, vy};
  }
  throw Error(ErrorCategory::config,
              "initial-state rejection budget exhausted; obstacles cover the workspace");
}

Trajectory rollout_actions(const State& x0, const std::vector<Action>& actions,
                           const EnvironmentSpec& env) {
  Trajectory t;
  t.states.reserve(actions.size() + 1);
  t.states.push_back(x0);
  for (const auto& a : actions) t.states.push_back(step(t.states.back(), a, env));
  t.actions = actions;
  return t;
}

bool dynamics_consistent(const Trajectory& traj, const EnvironmentSpec& env, double tol) {
  if (!traj.lengths_consistent()) return false;
  for (std::size_t t = 0; t < traj.actions.size(); ++t) {
    const State expect = step(traj.states[t], traj.actions[t], env);
    const State& got = traj.states[t + 1];
    if (std::abs(expect.px - got.px) > tol || std::abs(expect.py - got.py) > tol ||
        std::abs(expect.vx - got.vx) > tol || std::abs(expect.vy - got.vy) > tol) {
      return false;
    }
  }
  return true;
}

} // namespace pastel::env
