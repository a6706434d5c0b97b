#pragma once

#include "pastel/ad/tensor.hpp"
#include "pastel/model/pastel_model.hpp"
#include "pastel/oracle/dataset.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pastel::train {

struct TrainConfig {
  int batch_size = 32;
  int epochs = 50;
  double learning_rate = 3e-4;
  /// Fraction of all optimizer steps spent in linear warmup; cosine decay follows.
  double warmup_fraction = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Decoupled decay, applied to weight matrices and embeddings only.
  double weight_decay = 0.01;
  /// Global gradient-norm clip; 0 disables.
  double max_grad_norm = 1.0;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  /// Extra numbered checkpoints every k epochs (0: only the rolling one).
  int checkpoint_every = 0;
  /// When true the "train" metrics row is a fresh no-dropout pass over the
  /// training split after the epoch; otherwise the running minibatch mean is
  /// logged under "train_running".
  bool evaluate_train_split = true;
  model::ModelConfig model;

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected (Error(config)).
TrainConfig train_config_from_json(std::string_view json_text, TrainConfig base = {});

struct LossSummary {
  double state = 0.0;
  double action = 0.0;
  double spec = 0.0;
  double total = 0.0;
  std::size_t samples = 0;
};

struct EpochMetrics {
  int epoch = 0;
  std::string split;
  LossSummary loss;
  double wall_time = 0.0;
};

/// One line per metrics row: epoch,split,L_state,L_action,L_spec,L_total,wall_time.
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

/// Content hash of one trajectory (spec tokens, states, actions).
std::uint64_t trajectory_hash(const oracle::DatasetRecord& rec);

struct DataSplit {
  std::vector<const oracle::DatasetRecord*> train;
  std::vector<const oracle::DatasetRecord*> validation;
};

/// Whole trajectories go to one side, chosen by a seeded shuffle. Both sides
/// are non-empty when there are at least two records.
DataSplit split_records(const std::vector<oracle::DatasetRecord>& records, double validation_fraction,
                        std::uint64_t seed);

/// Number of trajectory hashes present in both splits (0 for a valid split).
std::size_t split_overlap(const DataSplit& split);

/// Linear warmup to `learning_rate`, then cosine decay to zero at `total_steps`.
double learning_rate_at(const TrainConfig& cfg, long step, long total_steps);

class AdamW {
public:
  AdamW(std::vector<ad::Parameter*> params, const TrainConfig& cfg);
  /// Returns the global gradient norm before clipping.
  double step(double lr);
  long steps_taken() const noexcept { return t_; }

private:
  std::vector<ad::Parameter*> params_;
  std::vector<ad::Matrix> m_, v_;
  std::vector<bool> decay_;
  TrainConfig cfg_;
  long t_ = 0;
};

/// Forward-only pass over `records` in the given order, batched like training,
/// no dropout, parameters untouched. Batch losses are weighted by batch size.
/// Throws Error(usage) for an empty split and Error(config) when a record's
/// tokens are not in the model vocabulary.
LossSummary evaluate_losses(const model::PastelModel& model,
                            std::span<const oracle::DatasetRecord* const> records, int batch_size);

struct TrainOutputs {
  std::filesystem::path directory;
  /// Rolling last-good checkpoint, rewritten after every finished epoch.
  std::filesystem::path checkpoint() const { return directory / "checkpoint.pstl"; }
  std::filesystem::path metrics() const { return directory / "metrics.csv"; }
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  std::filesystem::path checkpoint;
  std::size_t train_records = 0;
  std::size_t validation_records = 0;
  std::size_t parameter_count = 0;
};

/// Called after every epoch with the rows just logged.
using EpochCallback = std::function<void(const std::vector<EpochMetrics>&)>;

/// Deterministic for a fixed config and record list. A non-finite loss or
/// gradient throws Error(numeric); the rolling checkpoint then still holds the
/// last finished epoch (or the initial weights).
TrainResult train(const TrainConfig& cfg, const std::vector<oracle::DatasetRecord>& records,
                  const TrainOutputs& outputs, const EpochCallback& on_epoch = {});

} // namespace pastel::train
