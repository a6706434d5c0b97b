#pragma once

#include "pastel/env/planar_env.hpp"
#include "pastel/oracle/oracle_planner.hpp"
#include "pastel/stl/formula.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pastel::oracle {

/// One verified (spec, trajectory) pair; one JSON-Lines row on disk.
struct DatasetRecord {
  std::string spec_id;
  std::vector<std::string> tokens;
  env::Trajectory trajectory;
  double rho = 0.0;
  std::uint64_t seed = 0;
};

struct NamedSpec {
  std::string id;
  stl::Formula formula;
};

struct GenerationConfig {
  int per_spec_count = 1000;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  /// Fresh initial states tried per record before the run is declared infeasible.
  int max_attempts_per_record = 20;
  /// accepted / attempted below this aborts the run.
  double min_success_rate = 0.2;
  OracleConfig oracle;
};

struct SpecSummary {
  std::string spec_id;
  int accepted = 0;
  int attempts = 0;
  double rho_min = 0.0;
  double rho_median = 0.0;
  double rho_max = 0.0;

  double success_rate() const noexcept {
    return attempts == 0 ? 0.0 : static_cast<double>(accepted) / attempts;
  }
};

struct GenerationResult {
  std::vector<DatasetRecord> records;
  std::vector<SpecSummary> summaries;
};

/// Seed of attempt `attempt` for record `index` of `spec_id`.
std::uint64_t record_seed(std::uint64_t seed, std::string_view spec_id, int index, int attempt);

/// Runs the oracle for every spec. Records are ordered by spec, then index,
/// independent of `jobs`. Throws Error(verification) when a spec's success
/// rate falls below the floor or a record exhausts its attempts.
GenerationResult generate_records(const std::vector<NamedSpec>& specs,
                                  const env::EnvironmentSpec& env, const GenerationConfig& cfg);

/// Config file form; `jobs` is a runtime setting and is not serialised.
/// Missing keys keep the values of `base`; unknown keys are Error(config).
std::string generation_config_to_json(const GenerationConfig& cfg);
GenerationConfig generation_config_from_json(std::string_view json_text, GenerationConfig base = {});

std::string record_to_json_line(const DatasetRecord& record);
DatasetRecord record_from_json_line(std::string_view line);

void write_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path);

struct VerificationIssue {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct VerificationReport {
  std::size_t records = 0;
  std::vector<VerificationIssue> issues;
  /// Actions with |a| > a_max on either axis.
  std::size_t actuation_violations = 0;
  double max_abs_action = 0.0;

  bool ok() const noexcept { return issues.empty() && actuation_violations == 0; }
};

/// Independent audit: re-parses each token stream, checks dynamics
/// consistency, actuation bounds, exact satisfaction, and that the stored rho
/// matches a recomputation and exceeds `margin`.
VerificationReport verify_records(const std::vector<DatasetRecord>& records,
                                  const env::EnvironmentSpec& env, double margin);

/// read_dataset + verify_records; throws Error(verification) on any issue.
std::vector<DatasetRecord> load_verified_dataset(const std::filesystem::path& path,
                                                 const env::EnvironmentSpec& env, double margin);

} // namespace pastel::oracle
