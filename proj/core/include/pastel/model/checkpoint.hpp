#pragma once

#include "pastel/model/pastel_model.hpp"

#include <filesystem>
#include <string>

namespace pastel::model {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  std::unique_ptr<PastelModel> model;
  /// Caller metadata stored alongside the weights (JSON text, "{}" if none).
  std::string metadata = "{}";
  /// 16 hex digits over the file bytes; identifies the exact weights.
  std::string digest;
};

/// Tensor file whose header holds the format version, the model config and
/// its fingerprint, the vocabulary, the init seed and `metadata`.
std::string encode_checkpoint(const PastelModel& model, const std::string& metadata = "{}");
void save_checkpoint(const std::filesystem::path& path, const PastelModel& model,
                     const std::string& metadata = "{}");

/// Rejects unknown format versions, fingerprint or vocabulary mismatches, and
/// missing or misshapen parameters (all Error(schema)).
Checkpoint decode_checkpoint(const std::string& bytes);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string digest_bytes(std::string_view bytes);

} // namespace pastel::model
