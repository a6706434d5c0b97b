#pragma once

#include "pastel/ad/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace pastel::ad {

struct NamedTensor {
  std::string name;
  Matrix value;
};

enum class DType { f64, f32 };

/// Container layout (all integers little-endian):
///   magic "PSTLTENS", u32 format version, u64 header length, header bytes,
///   u64 block count, then per block: u32 name length, name, u8 dtype tag
///   (1 = f64, 2 = f32), u32 rank, u64 dims[rank], raw little-endian data.
struct TensorFile {
  static constexpr std::uint32_t kFormatVersion = 1;

  /// Free-form metadata owned by the caller (the model stores JSON here).
  std::string header;
  std::vector<NamedTensor> tensors;
};

std::string encode_tensor_file(const TensorFile& file, DType dtype = DType::f64);
TensorFile decode_tensor_file(const std::string& bytes);

void save_tensor_file(const std::filesystem::path& path, const TensorFile& file, DType dtype = DType::f64);
TensorFile load_tensor_file(const std::filesystem::path& path);

} // namespace pastel::ad
