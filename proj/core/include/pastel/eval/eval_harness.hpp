#pragma once

#include "pastel/env/planar_env.hpp"
#include "pastel/model/pastel_model.hpp"
#include "pastel/model/rollout.hpp"
#include "pastel/oracle/dataset.hpp"
#include "pastel/stl/formula.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pastel::eval {

inline constexpr int kReportFormatVersion = 1;

/// Rollouts are evaluated in fixed chunks of this many initial states, so
/// results do not depend on the worker count.
inline constexpr std::size_t kRolloutChunk = 25;

struct EvalOptions {
  int n_samples = 100;
  std::uint64_t seed = 0;
  model::RolloutMode mode = model::RolloutMode::dynamics_consistent;
  unsigned jobs = 1;
  /// Keep the rolled-out trajectories in the result (for plots).
  bool keep_trajectories = false;
};

/// Initial state i is sample_initial_state(derive_seed(seed, i)).
std::vector<env::State> sample_initial_states(int n, std::uint64_t seed, const env::EnvironmentSpec& env);

struct ActuationAudit {
  std::size_t actions = 0;
  std::size_t violations = 0;
  double max_abs_action = 0.0;
};

/// Counts action components beyond a_max (either axis) over every sequence.
ActuationAudit actuation_audit(std::span<const std::vector<env::Action>> actions,
                               const env::EnvironmentSpec& env);
ActuationAudit actuation_audit(std::span<const env::Trajectory> trajectories, const env::EnvironmentSpec& env);

struct RobustnessStats {
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
};

RobustnessStats robustness_stats(std::vector<double> values);

struct RolloutOutcome {
  bool satisfied = false;
  double robustness = 0.0;
};

struct SpecEvaluation {
  std::string spec_id;
  std::string formula;
  int n_samples = 0;
  int satisfied = 0;
  double percentage = 0.0;
  RobustnessStats robustness;
  /// Pre-clamp head outputs in dynamics-consistent mode; applied actions in open-loop mode.
  ActuationAudit actuation;
  std::vector<RolloutOutcome> rollouts;
  std::vector<env::Trajectory> trajectories;
};

/// Rolls the model out from n seeded initial states conditioned on f and
/// checks each trajectory against f. Throws Error(domain) when horizon(f)
/// exceeds the checkpoint's horizon capacity.
SpecEvaluation satisfaction_rate(const model::PastelModel& model, const oracle::NamedSpec& spec,
                                 const env::EnvironmentSpec& env, const EvalOptions& opt);

/// Satisfaction of stored trajectories against their own formula tokens,
/// bypassing any model.
SpecEvaluation replay_satisfaction(std::span<const oracle::DatasetRecord> records, const env::EnvironmentSpec& env);

struct EvalReport {
  std::string checkpoint_digest;
  std::string config_fingerprint;
  bool ablation = false;
  model::RolloutMode mode = model::RolloutMode::dynamics_consistent;
  std::uint64_t seed = 0;
  int n_samples = 0;
  std::vector<SpecEvaluation> specs;
};

EvalReport evaluate(const model::PastelModel& model, const std::string& checkpoint_digest,
                    std::span<const oracle::NamedSpec> specs, const env::EnvironmentSpec& env,
                    const EvalOptions& opt);

/// Deterministic JSON with a per-rollout outcome list; trajectories are not serialised.
std::string report_to_json(const EvalReport& report);
/// Throws Error(schema) on a missing field or an unknown format_version.
EvalReport report_from_json(std::string_view text);
std::string report_table(const EvalReport& report);

/// (new - old) / old; nullopt when old is zero.
std::optional<double> relative_improvement(double old_rate, double new_rate);

struct Perturbation {
  std::string name;
  std::string formula;
};

/// Identity plus every pairwise swap of the goal regions referenced by f.
std::vector<Perturbation> default_perturbations(const stl::Formula& f, const env::EnvironmentSpec& env);

/// Canonical text of f with regions a and b exchanged.
std::string swap_regions(const stl::Formula& f, const std::string& a, const std::string& b);

struct PerturbationRow {
  std::string name;
  std::string formula;
  bool skipped = false;
  std::string reason;
  /// Rollouts conditioned on the perturbed formula, scored against it.
  double rate_perturbed = 0.0;
  /// The same rollouts scored against the original formula; absent when the
  /// horizons differ.
  std::optional<double> rate_original;
};

struct PerturbationStudy {
  std::string formula;
  std::string checkpoint_digest;
  bool ablation = false;
  model::RolloutMode mode = model::RolloutMode::dynamics_consistent;
  std::uint64_t seed = 0;
  int n_samples = 0;
  std::vector<PerturbationRow> rows;
};

PerturbationStudy perturbation_study(const model::PastelModel& model, const std::string& checkpoint_digest,
                                     const stl::Formula& f, std::span<const Perturbation> perturbations,
                                     const env::EnvironmentSpec& env, const EvalOptions& opt);

std::string study_to_json(const PerturbationStudy& study);
std::string study_table(const PerturbationStudy& study);

/// Writes traj_NNN.svg per trajectory and trajectories.csv; nothing for an
/// empty list. Output bytes depend only on the inputs.
void export_plots(std::span<const env::Trajectory> trajectories, const env::EnvironmentSpec& env,
                  const std::filesystem::path& out_dir);
std::string render_svg(const env::Trajectory& trajectory, const env::EnvironmentSpec& env);

/// Label of sequence position p: SPEC_t, STATE_t or ACTION_t.
std::string position_label(int position);

struct AttentionSummary {
  /// Mean share of each STATE_t row's self-attention that lands on SPEC
  /// columns, per layer (averaged over heads, rows and samples).
  std::vector<double> spec_mass_by_layer;
  /// The same share for a uniform causal row, for reference.
  double uniform_spec_mass = 0.0;
};

struct AttentionExport {
  model::ForwardResult forward;
  std::vector<std::string> spec_tokens;
  AttentionSummary summary;
};

/// Rolls out from x0, then runs one forward over the whole trajectory with
/// attention kept.
AttentionExport inspect_attention(const model::PastelModel& model, const stl::Formula& f,
                                  std::span<const env::State> x0, const env::EnvironmentSpec& env);

/// layerL_headH.csv for every decoder layer and head of sample 0, plus
/// cross_headH.csv when present. Row and column headers carry position labels.
void write_attention_csv(const AttentionExport& a, const std::filesystem::path& out_dir);

} // namespace pastel::eval
