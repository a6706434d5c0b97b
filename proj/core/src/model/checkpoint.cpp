#include "pastel/model/checkpoint.hpp"

#include "pastel/ad/tensor_io.hpp"
#include "pastel/common/error.hpp"
#include "pastel/common/io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>

namespace pastel::model {

std::string digest_bytes(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

std::string encode_checkpoint(const PastelModel& model, const std::string& metadata) {
  nlohmann::ordered_json h;
  h["format"] = "pastel-checkpoint";
  h["format_version"] = kCheckpointFormatVersion;
  h["config"] = nlohmann::ordered_json::parse(config_to_json(model.config()));
  h["config_fingerprint"] = model.config().fingerprint();
  h["vocabulary"] = model.vocabulary().tokens();
  h["init_seed"] = model.init_seed();
  try {
    h["metadata"] = nlohmann::ordered_json::parse(metadata);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::internal, std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  ad::TensorFile file;
  file.header = h.dump();
  for (const auto* p : model.parameters()) file.tensors.push_back({p->name, p->value});
  return ad::encode_tensor_file(file);
}

void save_checkpoint(const std::filesystem::path& path, const PastelModel& model, const std::string& metadata) {
  write_file_atomic(path, encode_checkpoint(model, metadata));
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  const ad::TensorFile file = ad::decode_tensor_file(bytes);
  auto fail = [](const std::string& m) -> void { throw Error(ErrorCategory::schema, "checkpoint: " + m); };
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(file.header);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::schema, std::string("checkpoint header: ") + e.what());
  }
  Checkpoint out;
  try {
    if (h.value("format", "") != "pastel-checkpoint") fail("not a model checkpoint");
    const int version = h.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      fail("format_version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointFormatVersion));
    }
    const ModelConfig cfg = config_from_json(h.at("config").dump());
    if (cfg.fingerprint() != h.at("config_fingerprint").get<std::string>()) fail("config fingerprint mismatch");
    out.model = std::make_unique<PastelModel>(cfg, h.at("init_seed").get<std::uint64_t>());
    if (h.at("vocabulary").get<std::vector<std::string>>() != out.model->vocabulary().tokens()) {
      fail("vocabulary does not match the config");
    }
    out.metadata = h.contains("metadata") ? h.at("metadata").dump() : "{}";
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::schema, std::string("checkpoint header: ") + e.what());
  }
  const auto params = out.model->parameters();
  if (params.size() != file.tensors.size()) {
    fail("expected " + std::to_string(params.size()) + " tensors, found " + std::to_string(file.tensors.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = file.tensors[i];
    auto* p = params[i];
    if (t.name != p->name) fail("tensor " + std::to_string(i) + " is '" + t.name + "', expected '" + p->name + "'");
    if (t.value.rows() != p->value.rows() || t.value.cols() != p->value.cols()) fail("tensor '" + t.name + "' has the wrong shape");
    p->value = t.value;
    p->zero_grad();
  }
  out.digest = digest_bytes(bytes);
  return out;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const Error& e) {
    if (e.category() == ErrorCategory::io) throw;
    throw Error(e.category(), path.string() + ": " + e.what());
  }
}

} // namespace pastel::model
