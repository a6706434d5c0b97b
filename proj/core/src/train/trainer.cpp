#include "pastel/train/trainer.hpp"

#include "pastel/common/error.hpp"
#include "pastel/common/format.hpp"
#include "pastel/common/io.hpp"
#include "pastel/model/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

namespace pastel::train {

using oracle::DatasetRecord;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCategory::config, "train config: " + m); };
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (epochs < 1) fail("epochs must be at least 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(max_grad_norm >= 0.0)) fail("max_grad_norm must be non-negative");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) fail("validation_fraction must lie in (0, 1)");
  if (checkpoint_every < 0) fail("checkpoint_every must be non-negative");
  model.validate();
}

namespace {

nlohmann::ordered_json model_section(const model::ModelConfig& m) {
  return nlohmann::ordered_json::parse(model::config_to_json(m));
}

} // namespace

std::string train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["warmup_fraction"] = c.warmup_fraction;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["weight_decay"] = c.weight_decay;
  j["max_grad_norm"] = c.max_grad_norm;
  j["validation_fraction"] = c.validation_fraction;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["evaluate_train_split"] = c.evaluate_train_split;
  j["model"] = model_section(c.model);
  return j.dump();
}

TrainConfig train_config_from_json(std::string_view json_text, TrainConfig base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::config, std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCategory::config, "train config must be a JSON object");
  TrainConfig c = std::move(base);
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "warmup_fraction") c.warmup_fraction = v.get<double>();
      else if (key == "beta1") c.beta1 = v.get<double>();
      else if (key == "beta2") c.beta2 = v.get<double>();
      else if (key == "adam_eps") c.adam_eps = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "max_grad_norm") c.max_grad_norm = v.get<double>();
      else if (key == "validation_fraction") c.validation_fraction = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = v.get<int>();
      else if (key == "evaluate_train_split") c.evaluate_train_split = v.get<bool>();
      else if (key == "model") {
        for (const auto& [mk, mv] : v.items()) {
          if (mk == "d_model") c.model.d_model = mv.get<int>();
          else if (mk == "n_heads") c.model.n_heads = mv.get<int>();
          else if (mk == "n_layers") c.model.n_layers = mv.get<int>();
          else if (mk == "d_tok") c.model.d_tok = mv.get<int>();
          else if (mk == "d_ff") c.model.d_ff = mv.get<int>();
          else if (mk == "dropout") c.model.dropout = mv.get<double>();
          else if (mk == "h_max") c.model.h_max = mv.get<int>();
          else if (mk == "ablation") c.model.ablation = mv.get<bool>();
          else if (mk == "regions" || mk == "normalization") {
            // Derived from the environment file; accepted so manifests round-trip.
          } else {
            throw Error(ErrorCategory::config, "unknown model config key '" + mk + "'");
          }
        }
      } else {
        throw Error(ErrorCategory::config, "unknown train config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::config, std::string("train config: ") + e.what());
  }
  return c;
}

std::string metrics_csv_header() { return "epoch,split,L_state,L_action,L_spec,L_total,wall_time"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + "," + m.split + "," + format_double(m.loss.state) + "," +
         format_double(m.loss.action) + "," + format_double(m.loss.spec) + "," + format_double(m.loss.total) +
         "," + format_double(m.wall_time);
}

std::uint64_t trajectory_hash(const DatasetRecord& rec) {
  std::string bytes;
  for (const auto& t : rec.tokens) bytes += t + '\x1f';
  auto put = [&](double v) { bytes.append(reinterpret_cast<const char*>(&v), sizeof v); };
  for (const auto& x : rec.trajectory.states) {
    put(x.px);
    put(x.py);
    put(x.vx);
    put(x.vy);
  }
  for (const auto& a : rec.trajectory.actions) {
    put(a.ax);
    put(a.ay);
  }
  return fnv1a(bytes);
}

namespace {

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

/// Groups by horizon (ascending), preserving order inside a group, then chunks.
std::vector<std::vector<const DatasetRecord*>> make_batches(std::span<const DatasetRecord* const> records,
                                                            int batch_size) {
  std::map<std::size_t, std::vector<const DatasetRecord*>> buckets;
  for (const auto* r : records) buckets[r->trajectory.actions.size()].push_back(r);
  std::vector<std::vector<const DatasetRecord*>> out;
  for (auto& [h, recs] : buckets) {
    for (std::size_t i = 0; i < recs.size(); i += static_cast<std::size_t>(batch_size)) {
      const auto end = std::min(recs.size(), i + static_cast<std::size_t>(batch_size));
      out.emplace_back(recs.begin() + static_cast<std::ptrdiff_t>(i), recs.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return out;
}

model::TrainingBatch batch_for(const model::PastelModel& m, std::span<const DatasetRecord* const> recs) {
  try {
    return model::make_training_batch(m, recs);
  } catch (const Error& e) {
    if (e.category() == ErrorCategory::domain) {
      throw Error(ErrorCategory::config, std::string("dataset/spec-vocabulary mismatch: ") + e.what());
    }
    throw;
  }
}

} // namespace

DataSplit split_records(const std::vector<DatasetRecord>& records, double validation_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  shuffle(idx, rng);
  auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(records.size())));
  if (records.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, records.size() - 1);
  std::vector<bool> is_val(records.size(), false);
  for (std::size_t i = 0; i < n_val && i < idx.size(); ++i) is_val[idx[i]] = true;
  DataSplit s;
  for (std::size_t i = 0; i < records.size(); ++i) (is_val[i] ? s.validation : s.train).push_back(&records[i]);
  return s;
}

std::size_t split_overlap(const DataSplit& split) {
  std::set<std::uint64_t> train;
  for (const auto* r : split.train) train.insert(trajectory_hash(*r));
  std::set<std::uint64_t> shared;
  for (const auto* r : split.validation) {
    const auto h = trajectory_hash(*r);
    if (train.count(h) != 0) shared.insert(h);
  }
  return shared.size();
}

double learning_rate_at(const TrainConfig& cfg, long step, long total_steps) {
  const long warmup = static_cast<long>(std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const long span = std::max<long>(1, total_steps - warmup);
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<ad::Parameter*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) {
    m_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    const std::string& n = p->name;
    const bool matrix = n.size() > 2 && n.compare(n.size() - 2, 2, ".w") == 0;
    decay_.push_back(matrix || n == "spec.embed" || n == "spec.null" || n == "pos");
  }
}

double AdamW::step(double lr) {
  double sq = 0.0;
  for (auto* p : params_) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw Error(ErrorCategory::numeric, "non-finite gradient");
  const double clip = (cfg_.max_grad_norm > 0.0 && norm > cfg_.max_grad_norm) ? cfg_.max_grad_norm / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    const ad::Matrix g = p.grad * clip;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    if (decay_[i]) p.value *= 1.0 - lr * cfg_.weight_decay;
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.adam_eps);
  }
  return norm;
}

LossSummary evaluate_losses(const model::PastelModel& m, std::span<const DatasetRecord* const> records,
                            int batch_size) {
  if (records.empty()) throw Error(ErrorCategory::usage, "cannot evaluate losses on an empty split");
  if (batch_size < 1) throw Error(ErrorCategory::config, "batch_size must be at least 1");
  const bool ablation = m.config().ablation;
  LossSummary s;
  for (const auto& batch : make_batches(records, batch_size)) {
    const auto tb = batch_for(m, batch);
    ad::Tape tape(false);
    const auto out = m.forward(tape, tb.inputs, {false, !ablation, false});
    const auto l = model::compute_loss(tape, out, tb.target_states, tb.target_actions, m.config().norm, ablation);
    const double w = static_cast<double>(batch.size());
    s.state += w * l.state.value()(0, 0);
    s.action += w * l.action.value()(0, 0);
    s.spec += w * l.spec.value()(0, 0);
    s.samples += batch.size();
  }
  const double n = static_cast<double>(s.samples);
  s.state /= n;
  s.action /= n;
  s.spec /= n;
  s.total = s.state + s.action + s.spec;
  return s;
}

TrainResult train(const TrainConfig& cfg, const std::vector<DatasetRecord>& records, const TrainOutputs& outputs,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (records.size() < 2) throw Error(ErrorCategory::usage, "training needs at least two records");
  const auto t0 = std::chrono::steady_clock::now();
  model::PastelModel m(cfg.model, derive_seed({cfg.seed, 1}));
  for (const auto& r : records) batch_for(m, std::span<const DatasetRecord* const>(std::array{&r}));

  const DataSplit split = split_records(records, cfg.validation_fraction, derive_seed({cfg.seed, 2}));
  if (split_overlap(split) != 0) throw Error(ErrorCategory::verification, "trajectory appears in both splits");

  TrainResult result;
  result.train_records = split.train.size();
  result.validation_records = split.validation.size();
  result.parameter_count = m.parameter_count();
  result.checkpoint = outputs.checkpoint();

  std::filesystem::create_directories(outputs.directory);
  auto metadata = [&](int epoch) {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["train_config"] = nlohmann::ordered_json::parse(train_config_to_json(cfg));
    return j.dump();
  };
  model::save_checkpoint(outputs.checkpoint(), m, metadata(0));
  write_file_atomic(outputs.metrics(), metrics_csv_header() + "\n");

  const long steps_per_epoch = static_cast<long>(make_batches(split.train, cfg.batch_size).size());
  const long total_steps = steps_per_epoch * cfg.epochs;
  AdamW opt(m.parameters(), cfg);
  const bool ablation = cfg.model.ablation;
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng order_rng(derive_seed({cfg.seed, 3, static_cast<std::uint64_t>(epoch)}));
    Rng drop_rng(derive_seed({cfg.seed, 4, static_cast<std::uint64_t>(epoch)}));
    std::vector<const DatasetRecord*> order = split.train;
    shuffle(order, order_rng);
    auto batches = make_batches(order, cfg.batch_size);
    shuffle(batches, order_rng);

    LossSummary running;
    for (const auto& batch : batches) {
      for (auto* p : m.parameters()) p->zero_grad();
      const auto tb = batch_for(m, batch);
      ad::Tape tape;
      const auto out = m.forward(tape, tb.inputs, {true, !ablation, false}, &drop_rng);
      const auto l = model::compute_loss(tape, out, tb.target_states, tb.target_actions, m.config().norm, ablation);
      const double total = l.total.value()(0, 0);
      auto abort = [&](const std::string& what) {
        throw Error(ErrorCategory::numeric, what + " at epoch " + std::to_string(epoch) + ", step " +
                                                std::to_string(step) + "; last good checkpoint kept at " +
                                                outputs.checkpoint().string());
      };
      if (!std::isfinite(total)) abort("non-finite loss");
      tape.backward(l.total);
      try {
        opt.step(learning_rate_at(cfg, step, total_steps));
      } catch (const Error& e) {
        abort(e.what());
      }
      ++step;
      const double w = static_cast<double>(batch.size());
      running.state += w * l.state.value()(0, 0);
      running.action += w * l.action.value()(0, 0);
      running.spec += w * l.spec.value()(0, 0);
      running.samples += batch.size();
    }

    std::vector<EpochMetrics> rows;
    if (cfg.evaluate_train_split) {
      rows.push_back({epoch, "train", evaluate_losses(m, split.train, cfg.batch_size), 0.0});
    } else {
      const double n = static_cast<double>(running.samples);
      running.state /= n;
      running.action /= n;
      running.spec /= n;
      running.total = running.state + running.action + running.spec;
      rows.push_back({epoch, "train_running", running, 0.0});
    }
    rows.push_back({epoch, "validation", evaluate_losses(m, split.validation, cfg.batch_size), 0.0});
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string lines;
    for (auto& r : rows) {
      r.wall_time = wall;
      lines += metrics_csv_row(r) + "\n";
      result.metrics.push_back(r);
    }
    {
      std::ofstream csv(outputs.metrics(), std::ios::app | std::ios::binary);
      csv << lines;
      if (!csv) throw Error(ErrorCategory::io, "cannot append to " + outputs.metrics().string());
    }
    model::save_checkpoint(outputs.checkpoint(), m, metadata(epoch));
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "checkpoint_e%03d.pstl", epoch);
      model::save_checkpoint(outputs.directory / name, m, metadata(epoch));
    }
    if (on_epoch) on_epoch(rows);
  }
  return result;
}

} // namespace pastel::train
