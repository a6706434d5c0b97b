#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pastel::env {

inline constexpr int kEnvironmentFormatVersion = 1;

/// Axis-aligned rectangle [xlo, xhi] x [ylo, yhi] in meters.
struct Rect {
  double xlo = 0.0;
  double xhi = 0.0;
  double ylo = 0.0;
  double yhi = 0.0;

  double width() const noexcept { return xhi - xlo; }
  double height() const noexcept { return yhi - ylo; }
  bool contains(const Rect& other) const noexcept {
    return other.xlo >= xlo && other.xhi <= xhi && other.ylo >= ylo && other.yhi <= yhi;
  }
  bool strictly_contains(double x, double y) const noexcept {
    return x > xlo && x < xhi && y > ylo && y < yhi;
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

enum class RegionRole { goal, obstacle };

/// Which side of a region boundary makes an atomic predicate true.
enum class Polarity { inside, outside };

struct Region {
  std::string name;
  Rect bounds;
  RegionRole role = RegionRole::goal;
  friend bool operator==(const Region&, const Region&) = default;
};

struct State {
  double px = 0.0;
  double py = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  friend bool operator==(const State&, const State&) = default;
};

struct Action {
  double ax = 0.0;
  double ay = 0.0;
  friend bool operator==(const Action&, const Action&) = default;
};

/// Workspace, named regions and double-integrator limits. Immutable once validated.
class EnvironmentSpec {
public:
  EnvironmentSpec() = default;
  EnvironmentSpec(Rect workspace, std::vector<Region> regions, double a_max, double dt,
                  double v_max);

  /// R1=[6,8]x[6,8], R2=[1,3]x[6,8], R3=[6,8]x[1,3], O1=[4,6]x[4,6] in [0,10]^2.
  static EnvironmentSpec default_world();

  const Rect& workspace() const noexcept { return workspace_; }
  const std::vector<Region>& regions() const noexcept { return regions_; }
  double a_max() const noexcept { return a_max_; }
  double dt() const noexcept { return dt_; }
  double v_max() const noexcept { return v_max_; }

  /// Throws Error(domain) naming the region when absent.
  const Region& region(std::string_view name) const;
  const Region* find_region(std::string_view name) const noexcept;
  std::vector<std::string> region_names() const;

  friend bool operator==(const EnvironmentSpec&, const EnvironmentSpec&) = default;

private:
  void validate() const;

  Rect workspace_{};
  std::vector<Region> regions_;
  double a_max_ = 1.0;
  double dt_ = 1.0;
  double v_max_ = 2.0;
};

/// Reads the JSON environment schema (see README). Rejects unknown format_version.
EnvironmentSpec load_environment(const std::filesystem::path& path);
EnvironmentSpec parse_environment(std::string_view json_text);
std::string serialize_environment(const EnvironmentSpec& env);

Action clamp_action(const Action& a, const EnvironmentSpec& env) noexcept;

/// Double integrator: p' = p + v dt + a dt^2 / 2, v' = clamp(v + a dt, +-v_max),
/// with `a` clamped to +-a_max per axis first.
State step(const State& x, const Action& a, const EnvironmentSpec& env);

/// Signed rectangle margin of (px, py); positive iff strictly inside for
/// Polarity::inside. Outside polarity negates.
double atom_margin(std::string_view region_name, Polarity polarity, const State& x,
                   const EnvironmentSpec& env);
double rect_margin(const Rect& r, double x, double y) noexcept;

/// Uniform position over the workspace minus obstacle interiors, velocity
/// uniform in [-0.5, 0.5] per axis. Deterministic in `seed`.
State sample_initial_state(std::uint64_t seed, const EnvironmentSpec& env);

struct Trajectory {
  std::vector<State> states;
  std::vector<Action> actions;
  std::string spec_id;
  double robustness_at_generation = 0.0;

  std::size_t horizon() const noexcept { return actions.size(); }
  /// states.size() == actions.size() + 1.
  bool lengths_consistent() const noexcept {
    return !states.empty() && states.size() == actions.size() + 1;
  }
};

/// Folds step() from x0 over the action sequence.
Trajectory rollout_actions(const State& x0, const std::vector<Action>& actions,
                           const EnvironmentSpec& env);

/// True iff every state equals step() of its predecessor within `tol` per component.
bool dynamics_consistent(const Trajectory& traj, const EnvironmentSpec& env, double tol = 0.0);

} // namespace pastel::env
