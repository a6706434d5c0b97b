#include "pastel/model/pastel_model.hpp"

#include "pastel/common/error.hpp"
#include "pastel/stl/linearize.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>

namespace pastel::model {

using ad::Matrix;
using ad::Tape;
using ad::Tensor;

Normalization Normalization::from_environment(const env::EnvironmentSpec& env) {
  const auto& ws = env.workspace();
  Normalization n;
  n.px_center = 0.5 * (ws.xlo + ws.xhi);
  n.py_center = 0.5 * (ws.ylo + ws.yhi);
  n.pos_scale = 0.5 * std::max(ws.width(), ws.height());
  n.vel_scale = env.v_max();
  n.act_scale = env.a_max();
  return n;
}

ad::Matrix Normalization::states_to_unit(const ad::Matrix& states) const {
  ad::Matrix s = states;
  s.col(0).array() = (s.col(0).array() - px_center) / pos_scale;
  s.col(1).array() = (s.col(1).array() - py_center) / pos_scale;
  s.col(2) /= vel_scale;
  s.col(3) /= vel_scale;
  return s;
}

ad::Matrix Normalization::states_from_unit(const ad::Matrix& unit) const {
  ad::Matrix s = unit;
  s.col(0).array() = s.col(0).array() * pos_scale + px_center;
  s.col(1).array() = s.col(1).array() * pos_scale + py_center;
  s.col(2) *= vel_scale;
  s.col(3) *= vel_scale;
  return s;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCategory::config, "model config: " + m); };
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_tok < 1 || d_ff < 1) fail("sizes must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (h_max < 1) fail("h_max must be at least 1");
  if (regions.empty()) fail("no region identifiers");
  if (!(norm.pos_scale > 0 && norm.vel_scale > 0 && norm.act_scale > 0)) fail("normalisation scales must be positive");
}

namespace {

nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["d_tok"] = c.d_tok;
  j["d_ff"] = c.d_ff;
  j["dropout"] = c.dropout;
  j["h_max"] = c.h_max;
  j["ablation"] = c.ablation;
  j["regions"] = c.regions;
  j["normalization"] = {{"px_center", c.norm.px_center},
                        {"py_center", c.norm.py_center},
                        {"pos_scale", c.norm.pos_scale},
                        {"vel_scale", c.norm.vel_scale},
                        {"act_scale", c.norm.act_scale}};
  return j;
}

} // namespace

std::string config_to_json(const ModelConfig& cfg) { return to_json(cfg).dump(); }

ModelConfig config_from_json(std::string_view json_text) {
  try {
    const auto j = nlohmann::json::parse(json_text);
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.d_tok = j.at("d_tok").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.h_max = j.at("h_max").get<int>();
    c.ablation = j.at("ablation").get<bool>();
    c.regions = j.at("regions").get<std::vector<std::string>>();
    const auto& n = j.at("normalization");
    c.norm.px_center = n.at("px_center").get<double>();
    c.norm.py_center = n.at("py_center").get<double>();
    c.norm.pos_scale = n.at("pos_scale").get<double>();
    c.norm.vel_scale = n.at("vel_scale").get<double>();
    c.norm.act_scale = n.at("act_scale").get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::schema, std::string("model config: ") + e.what());
  }
}

std::string ModelConfig::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(config_to_json(*this))));
  return buf;
}

Vocabulary::Vocabulary(int h_max, const std::vector<std::string>& regions) {
  tokens_ = {"F", "G", "U", "!", "&", "|", "[", "]", ",", "(", ")"};
  for (int i = 0; i <= h_max; ++i) tokens_.push_back(std::to_string(i));
  for (const auto& r : regions) tokens_.push_back(r);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw Error(ErrorCategory::config, "duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

int Vocabulary::id(const std::string& token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) throw Error(ErrorCategory::domain, "token '" + token + "' is not in the vocabulary");
  return it->second;
}

namespace {

Matrix uniform_matrix(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols, double limit) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -limit, limit);
  return m;
}

} // namespace

ad::Parameter* PastelModel::add_parameter(const std::string& name, Matrix value) {
  params_.push_back(std::make_unique<ad::Parameter>(name, std::move(value)));
  return params_.back().get();
}

PastelModel::Linear PastelModel::make_linear(const std::string& name, int in, int out) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.w = add_parameter(name + ".w", uniform_matrix(derive_seed({seed_, fnv1a(name + ".w")}), in, out, limit));
  l.b = add_parameter(name + ".b", Matrix::Zero(1, out));
  return l;
}

PastelModel::Norm PastelModel::make_norm(const std::string& name, int width) {
  Norm n;
  n.gain = add_parameter(name + ".gain", Matrix::Ones(1, width));
  n.bias = add_parameter(name + ".bias", Matrix::Zero(1, width));
  return n;
}

PastelModel::PastelModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_((cfg_.validate(), cfg_.h_max), cfg_.regions), seed_(seed) {
  const int d = cfg_.d_model;
  auto table = [&](const std::string& name, int rows, int cols, double limit) {
    return add_parameter(name, uniform_matrix(derive_seed({seed_, fnv1a(name)}), rows, cols, limit));
  };
  if (!cfg_.ablation) {
    token_table_ = table("spec.embed", vocab_.size(), cfg_.d_tok, 1.0);
    proj1_ = make_linear("spec.proj1", cfg_.d_tok, d);
    proj2_ = make_linear("spec.proj2", d, d);
  } else {
    null_spec_ = table("spec.null", 1, d, 1.0 / std::sqrt(static_cast<double>(d)));
  }
  state_enc1_ = make_linear("enc.state1", 4, d);
  state_enc2_ = make_linear("enc.state2", d, d);
  action_enc1_ = make_linear("enc.action1", 2, d);
  action_enc2_ = make_linear("enc.action2", d, d);
  positions_ = table("pos", 3 * cfg_.h_max, d, 0.1);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b;
    b.ln1 = make_norm(p + "ln1", d);
    b.q = make_linear(p + "attn.q", d, d);
    b.k = make_linear(p + "attn.k", d, d);
    b.v = make_linear(p + "attn.v", d, d);
    b.o = make_linear(p + "attn.o", d, d);
    b.ln2 = make_norm(p + "ln2", d);
    b.ff1 = make_linear(p + "ff1", d, cfg_.d_ff);
    b.ff2 = make_linear(p + "ff2", cfg_.d_ff, d);
    blocks_.push_back(b);
  }
  final_norm_ = make_norm("final_norm", d);
  if (!cfg_.ablation) {
    cross_q_ = make_linear("cross.q", d, d);
    cross_k_ = make_linear("cross.k", d, d);
    cross_v_ = make_linear("cross.v", d, d);
    cross_o_ = make_linear("cross.o", d, d);
    cross_norm_ = make_norm("cross.norm", d);
  }
  action_head1_ = make_linear("head.action1", d, d);
  action_head2_ = make_linear("head.action2", d, 2);
  state_head1_ = make_linear("head.state1", d, d);
  state_head2_ = make_linear("head.state2", d, 4);
}

std::vector<ad::Parameter*> PastelModel::parameters() const {
  std::vector<ad::Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

ad::Parameter& PastelModel::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw Error(ErrorCategory::domain, "model has no parameter '" + std::string(name) + "'");
}

std::size_t PastelModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->size());
  return n;
}

SpecTokens PastelModel::tokenize(const stl::Formula& f) const {
  SpecTokens out;
  out.horizon = stl::horizon(f);
  if (out.horizon > cfg_.h_max) {
    throw Error(ErrorCategory::domain, "spec horizon " + std::to_string(out.horizon) +
                                           " exceeds model capacity h_max=" + std::to_string(cfg_.h_max));
  }
  out.tokens = stl::linearize(f, stl::Traversal::in_order, stl::WordForm::symbol, cfg_.h_max).tokens;
  for (const auto& t : out.tokens) out.ids.push_back(vocab_.id(t));
  return out;
}

Tensor PastelModel::apply(Tape& tape, const Linear& l, const Tensor& x) const {
  return ad::add_rowwise(ad::matmul(x, tape.parameter(*l.w)), tape.parameter(*l.b));
}

Tensor PastelModel::apply(Tape& tape, const Norm& n, const Tensor& x) const {
  return ad::layer_norm(x, tape.parameter(*n.gain), tape.parameter(*n.bias));
}

Tensor PastelModel::mlp(Tape& tape, const Linear& a, const Linear& b, const Tensor& x) const {
  return apply(tape, b, ad::gelu(apply(tape, a, x)));
}

namespace {

void check_batch(const SequenceBatch& batch, int h_max) {
  const int B = batch.batch();
  if (B < 1) throw Error(ErrorCategory::shape, "empty batch");
  if (batch.steps < 1 || batch.steps > h_max) {
    throw Error(ErrorCategory::domain, "batch has " + std::to_string(batch.steps) +
                                           " steps; model supports 1.." + std::to_string(h_max));
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(B) * batch.steps;
  if (batch.states.rows() != rows || batch.states.cols() != 4 || batch.actions.rows() != rows ||
      batch.actions.cols() != 2) {
    throw Error(ErrorCategory::shape, "batch arrays do not match " + std::to_string(B) + " samples x " +
                                          std::to_string(batch.steps) + " steps");
  }
}

} // namespace

Tensor PastelModel::backbone(Tape& tape, const Tensor& spec_rows, const SequenceBatch& batch,
                             const ForwardOptions& opt, Rng* dropout_rng,
                             std::vector<std::vector<Matrix>>* attention) const {
  check_batch(batch, cfg_.h_max);
  const int B = batch.batch();
  const int S = batch.steps;
  const int BS = B * S;
  if (spec_rows.rows() != BS || spec_rows.cols() != cfg_.d_model) {
    throw Error(ErrorCategory::shape, "spec rows " + spec_rows.shape_string() + " do not match batch");
  }
  const bool drop = opt.training && cfg_.dropout > 0.0;
  if (drop && dropout_rng == nullptr) throw Error(ErrorCategory::internal, "training forward needs an rng");
  auto maybe_drop = [&](const Tensor& x) { return drop ? ad::dropout(x, cfg_.dropout, *dropout_rng) : x; };

  const Tensor state_emb = mlp(tape, state_enc1_, state_enc2_, tape.constant(cfg_.norm.states_to_unit(batch.states)));
  const Tensor action_emb =
      mlp(tape, action_enc1_, action_enc2_, tape.constant(cfg_.norm.actions_to_unit(batch.actions)));
  const Tensor parts[] = {spec_rows, state_emb, action_emb};
  const Tensor stacked = ad::concat(parts, ad::Axis::rows);

  std::vector<int> order(static_cast<std::size_t>(3 * BS));
  std::vector<int> pos_ids(order.size());
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < S; ++t) {
      for (int slot = 0; slot < 3; ++slot) {
        const auto row = static_cast<std::size_t>(b * 3 * S + sequence_position(t, slot));
        order[row] = slot * BS + b * S + t;
        pos_ids[row] = sequence_position(t, slot);
      }
    }
  }
  Tensor h = ad::add(ad::gather(stacked, order), ad::gather(tape.parameter(*positions_), pos_ids));
  h = maybe_drop(h);

  ad::AttentionLayout causal{cfg_.n_heads, true, {}};
  for (int b = 0; b < B; ++b) causal.segments.push_back({3 * S * b, 3 * S, 3 * S * b, 3 * S});
  if (attention != nullptr) attention->assign(blocks_.size(), {});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& blk = blocks_[l];
    const Tensor x = apply(tape, blk.ln1, h);
    const Tensor att = ad::attention(apply(tape, blk.q, x), apply(tape, blk.k, x), apply(tape, blk.v, x), causal,
                                     attention != nullptr ? &(*attention)[l] : nullptr);
    h = ad::add(h, maybe_drop(apply(tape, blk.o, att)));
    h = ad::add(h, maybe_drop(mlp(tape, blk.ff1, blk.ff2, apply(tape, blk.ln2, h))));
  }
  return apply(tape, final_norm_, h);
}

ForwardResult PastelModel::forward(Tape& tape, const SequenceBatch& batch, const ForwardOptions& opt,
                                   Rng* dropout_rng) const {
  check_batch(batch, cfg_.h_max);
  const int B = batch.batch();
  const int S = batch.steps;
  ForwardResult r;
  r.batch = B;
  r.steps = S;

  std::vector<int> repeat(static_cast<std::size_t>(B * S));
  Tensor spec_rows;
  if (!cfg_.ablation) {
    std::vector<int> ids;
    for (const auto& s : batch.spec_ids) {
      if (s.empty()) throw Error(ErrorCategory::shape, "sample without spec tokens");
      for (int id : s) {
        if (id < 0 || id >= vocab_.size()) throw Error(ErrorCategory::domain, "token id out of range");
      }
      r.spec_lengths.push_back(static_cast<int>(s.size()));
      ids.insert(ids.end(), s.begin(), s.end());
    }
    r.spec_tokens = mlp(tape, proj1_, proj2_, ad::gather(tape.parameter(*token_table_), ids));
    r.spec_pooled = ad::segment_mean(r.spec_tokens, r.spec_lengths);
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < S; ++t) repeat[static_cast<std::size_t>(b * S + t)] = b;
    }
    spec_rows = ad::gather(r.spec_pooled, repeat);
  } else {
    spec_rows = ad::gather(tape.parameter(*null_spec_), repeat);
  }

  r.backbone = backbone(tape, spec_rows, batch, opt, dropout_rng,
                        opt.keep_attention ? &r.self_attention : nullptr);

  std::vector<int> state_rows, action_rows;
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < S; ++t) {
      state_rows.push_back(3 * S * b + sequence_position(t, 1));
      action_rows.push_back(3 * S * b + sequence_position(t, 2));
    }
  }
  r.action_head = mlp(tape, action_head1_, action_head2_, ad::gather(r.backbone, state_rows));
  r.state_head = mlp(tape, state_head1_, state_head2_, ad::gather(r.backbone, action_rows));
  r.actions = r.action_head.value() * cfg_.norm.act_scale;
  r.next_states = cfg_.norm.states_from_unit(r.state_head.value());

  if (!cfg_.ablation && opt.cross_attention) {
    ad::AttentionLayout cross{cfg_.n_heads, false, {}};
    int q_at = 0;
    for (int b = 0; b < B; ++b) {
      const int len = r.spec_lengths[static_cast<std::size_t>(b)];
      cross.segments.push_back({q_at, len, 3 * S * b, 3 * S});
      q_at += len;
    }
    const Tensor att = ad::attention(apply(tape, cross_q_, r.spec_tokens), apply(tape, cross_k_, r.backbone),
                                     apply(tape, cross_v_, r.backbone), cross,
                                     opt.keep_attention ? &r.cross_attention : nullptr);
    r.cross_rows = apply(tape, cross_norm_, apply(tape, cross_o_, att));
    r.cross_pooled = ad::segment_mean(r.cross_rows, r.spec_lengths);
  }
  return r;
}

TrainingBatch make_training_batch(const PastelModel& model,
                                  std::span<const oracle::DatasetRecord* const> records) {
  if (records.empty()) throw Error(ErrorCategory::shape, "empty batch");
  const int S = static_cast<int>(records.front()->trajectory.actions.size());
  const auto B = static_cast<Eigen::Index>(records.size());
  TrainingBatch tb;
  tb.inputs.steps = S;
  tb.inputs.states.resize(B * S, 4);
  tb.inputs.actions.resize(B * S, 2);
  tb.target_states.resize(B * S, 4);
  tb.target_actions.resize(B * S, 2);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& rec = *records[static_cast<std::size_t>(b)];
    const auto& tr = rec.trajectory;
    if (static_cast<int>(tr.actions.size()) != S || !tr.lengths_consistent()) {
      throw Error(ErrorCategory::shape, "horizon mismatch within batch: " + std::to_string(tr.actions.size()) +
                                            " vs " + std::to_string(S));
    }
    std::vector<int> ids;
    for (const auto& tok : rec.tokens) ids.push_back(model.vocabulary().id(tok));
    tb.inputs.spec_ids.push_back(std::move(ids));
    for (int t = 0; t < S; ++t) {
      const Eigen::Index row = b * S + t;
      const auto& x = tr.states[static_cast<std::size_t>(t)];
      const auto& xn = tr.states[static_cast<std::size_t>(t) + 1];
      const auto& u = tr.actions[static_cast<std::size_t>(t)];
      tb.inputs.states.row(row) << x.px, x.py, x.vx, x.vy;
      tb.inputs.actions.row(row) << u.ax, u.ay;
      tb.target_states.row(row) << xn.px, xn.py, xn.vx, xn.vy;
      tb.target_actions.row(row) << u.ax, u.ay;
    }
  }
  return tb;
}

Tensor regression_loss(const Tensor& prediction, const Matrix& target) {
  const Tensor diff = ad::sub(prediction, prediction.tape().constant(target));
  return ad::add(ad::mean(ad::mul(diff, diff)), ad::mean(ad::abs(diff)));
}

Tensor spec_relevance_loss(const Tensor& t_emb, const Tensor& c, bool* degenerate, double eps) {
  if (t_emb.cols() != c.cols()) {
    throw Error(ErrorCategory::shape, "spec loss: " + t_emb.shape_string() + " vs " + c.shape_string());
  }
  Tape& tape = t_emb.tape();
  const Tensor tm = ad::mean_rows(t_emb);
  const Tensor cm = ad::mean_rows(c);
  const Tensor dot = ad::sum(ad::mul(tm, cm));
  const Tensor tt = ad::sum(ad::mul(tm, tm));
  const Tensor cc = ad::sum(ad::mul(cm, cm));
  const bool guard = !(std::sqrt(tt.value()(0, 0)) * std::sqrt(cc.value()(0, 0)) >= eps);
  if (degenerate != nullptr) *degenerate = guard;
  const Tensor denom = guard ? tape.constant(Matrix::Constant(1, 1, eps)) : ad::mul(ad::sqrt(tt), ad::sqrt(cc));
  return ad::add_scalar(ad::scale(ad::div(dot, denom), -1.0), 1.0);
}

LossTerms compute_loss(Tape& tape, const ForwardResult& out, const Matrix& target_states,
                       const Matrix& target_actions, const Normalization& norm, bool ablation) {
  LossTerms l;
  l.state = regression_loss(out.state_head, norm.states_to_unit(target_states));
  l.action = regression_loss(out.action_head, norm.actions_to_unit(target_actions));
  if (ablation) {
    l.spec = tape.constant(Matrix::Zero(1, 1));
  } else {
    if (!out.cross_pooled.valid()) throw Error(ErrorCategory::internal, "spec loss needs cross-attention output");
    l.spec = spec_relevance_loss(out.spec_pooled, out.cross_pooled, &l.spec_degenerate);
  }
  l.total = ad::add(ad::add(l.state, l.action), l.spec);
  return l;
}

} // namespace pastel::model
