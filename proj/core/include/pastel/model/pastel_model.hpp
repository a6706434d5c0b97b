#pragma once

#include "pastel/ad/ops.hpp"
#include "pastel/ad/tensor.hpp"
#include "pastel/common/rng.hpp"
#include "pastel/env/planar_env.hpp"
#include "pastel/oracle/dataset.hpp"
#include "pastel/stl/formula.hpp"

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pastel::model {

/// Fixed affine maps between physical units and the network's input/output
/// scale. Derived from the environment so that positions land in [-1, 1].
struct Normalization {
  double px_center = 5.0;
  double py_center = 5.0;
  double pos_scale = 5.0;
  double vel_scale = 2.0;
  double act_scale = 1.0;

  static Normalization from_environment(const env::EnvironmentSpec& env);

  /// Physical (rows x 4) states to network units, and back.
  ad::Matrix states_to_unit(const ad::Matrix& states) const;
  ad::Matrix states_from_unit(const ad::Matrix& unit) const;
  ad::Matrix actions_to_unit(const ad::Matrix& actions) const { return actions / act_scale; }
  friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 3;
  int d_tok = 32;
  int d_ff = 256;
  double dropout = 0.1;
  /// Largest horizon (and largest interval bound token) the model accepts.
  int h_max = 64;
  /// PACT ablation: a learned null token fills the spec positions and there is
  /// no spec encoder, no cross-attention and no spec loss.
  bool ablation = false;
  /// Region identifiers in the vocabulary, in order.
  std::vector<std::string> regions{"O1", "R1", "R2", "R3"};
  Normalization norm;

  /// Throws Error(config) on inconsistent sizes.
  void validate() const;
  /// 16 hex digits over the canonical JSON form.
  std::string fingerprint() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(std::string_view json_text);

/// Closed STL token vocabulary: operators, brackets, integers 0..h_max, region names.
class Vocabulary {
public:
  Vocabulary(int h_max, const std::vector<std::string>& regions);

  /// Throws Error(domain) for out-of-vocabulary tokens.
  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const noexcept { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> index_;
};

struct SpecTokens {
  std::vector<std::string> tokens;
  std::vector<int> ids;
  int horizon = 0;
};

/// Stacked model input. Every sample has the same number of timesteps.
struct SequenceBatch {
  int steps = 0;
  std::vector<std::vector<int>> spec_ids;
  /// Row b * steps + t holds x_t of sample b (physical units).
  ad::Matrix states;
  /// Row b * steps + t holds a_t of sample b.
  ad::Matrix actions;

  int batch() const noexcept { return static_cast<int>(spec_ids.size()); }
};

struct ForwardOptions {
  /// Enables dropout; needs a recording tape and an rng.
  bool training = false;
  bool cross_attention = true;
  bool keep_attention = false;
};

struct ForwardResult {
  int batch = 0;
  int steps = 0;
  /// Projected spec token embeddings (sum of token counts x d_model); absent in ablation.
  ad::Tensor spec_tokens;
  /// Per-sample mean of spec_tokens (B x d_model), the repeated spec token.
  ad::Tensor spec_pooled;
  /// Final-norm decoder output, 3 * steps rows per sample.
  ad::Tensor backbone;
  /// Action head on STATE_t positions, network units: row b * steps + t is a_t.
  ad::Tensor action_head;
  /// State head on ACTION_t positions, network units: row b * steps + t is x_{t+1}.
  ad::Tensor state_head;
  /// The same predictions in physical units.
  ad::Matrix actions;
  ad::Matrix next_states;
  /// Normalised cross-attention output per spec token, and its per-sample mean.
  ad::Tensor cross_rows;
  ad::Tensor cross_pooled;
  /// [layer][segment * heads + head] causal self-attention weights.
  std::vector<std::vector<ad::Matrix>> self_attention;
  /// [segment * heads + head] cross-attention weights (tokens x 3 * steps).
  std::vector<ad::Matrix> cross_attention;
  std::vector<int> spec_lengths;
};

/// Index of the sequence position for timestep t and slot (0 spec, 1 state, 2 action).
constexpr int sequence_position(int t, int slot) noexcept { return 3 * t + slot; }

class PastelModel {
public:
  /// Every parameter is initialised from derive_seed(seed, name), so models of
  /// both kinds built from one seed share the weights they have in common.
  PastelModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }
  std::uint64_t init_seed() const noexcept { return seed_; }

  std::vector<ad::Parameter*> parameters() const;
  /// Throws Error(domain) for unknown names.
  ad::Parameter& parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  /// Canonical in-order symbol tokens. Throws Error(domain) when the horizon
  /// exceeds h_max or a token is not in the vocabulary.
  SpecTokens tokenize(const stl::Formula& f) const;

  ForwardResult forward(ad::Tape& tape, const SequenceBatch& batch, const ForwardOptions& opt,
                        Rng* dropout_rng = nullptr) const;

  /// Decoder stack only, given ready-made spec rows (B * steps x d_model).
  ad::Tensor backbone(ad::Tape& tape, const ad::Tensor& spec_rows, const SequenceBatch& batch,
                      const ForwardOptions& opt, Rng* dropout_rng,
                      std::vector<std::vector<ad::Matrix>>* attention) const;

private:
  struct Linear {
    ad::Parameter* w = nullptr;
    ad::Parameter* b = nullptr;
  };
  struct Norm {
    ad::Parameter* gain = nullptr;
    ad::Parameter* bias = nullptr;
  };
  struct Block {
    Norm ln1, ln2;
    Linear q, k, v, o, ff1, ff2;
  };

  ad::Parameter* add_parameter(const std::string& name, ad::Matrix value);
  Linear make_linear(const std::string& name, int in, int out);
  Norm make_norm(const std::string& name, int width);
  ad::Tensor apply(ad::Tape& tape, const Linear& l, const ad::Tensor& x) const;
  ad::Tensor apply(ad::Tape& tape, const Norm& n, const ad::Tensor& x) const;
  ad::Tensor mlp(ad::Tape& tape, const Linear& a, const Linear& b, const ad::Tensor& x) const;

  ModelConfig cfg_;
  Vocabulary vocab_;
  std::uint64_t seed_;
  std::vector<std::unique_ptr<ad::Parameter>> params_;

  ad::Parameter* token_table_ = nullptr;
  Linear proj1_, proj2_;
  ad::Parameter* null_spec_ = nullptr;
  Linear state_enc1_, state_enc2_, action_enc1_, action_enc2_;
  ad::Parameter* positions_ = nullptr;
  std::vector<Block> blocks_;
  Norm final_norm_;
  Linear cross_q_, cross_k_, cross_v_, cross_o_;
  Norm cross_norm_;
  Linear action_head1_, action_head2_, state_head1_, state_head2_;
};

/// Stacks dataset records (same horizon) into inputs and regression targets.
struct TrainingBatch {
  SequenceBatch inputs;
  /// Row b * steps + t holds x_{t+1}.
  ad::Matrix target_states;
  ad::Matrix target_actions;
};

/// Throws Error(shape) when records disagree on horizon.
TrainingBatch make_training_batch(const PastelModel& model,
                                  std::span<const oracle::DatasetRecord* const> records);

struct LossTerms {
  ad::Tensor state;
  ad::Tensor action;
  ad::Tensor spec;
  ad::Tensor total;
  /// Set when a pooled vector had (near) zero norm and the cosine was guarded.
  bool spec_degenerate = false;
};

/// mean((p - t)^2) + mean(|p - t|) over every entry.
ad::Tensor regression_loss(const ad::Tensor& prediction, const ad::Matrix& target);

/// 1 - cos(mean over rows of t_emb, mean over rows of c). When the product of
/// norms falls below `eps` the denominator is held at `eps` and `degenerate` is set.
ad::Tensor spec_relevance_loss(const ad::Tensor& t_emb, const ad::Tensor& c, bool* degenerate = nullptr,
                               double eps = 1e-12);

/// Unweighted sum of the three terms; spec is a constant 0 when `ablation`.
/// Targets are physical; both regression terms are taken in network units
/// (see Normalization) so that positions and velocities weigh alike.
LossTerms compute_loss(ad::Tape& tape, const ForwardResult& out, const ad::Matrix& target_states,
                       const ad::Matrix& target_actions, const Normalization& norm, bool ablation);

} // namespace pastel::model
