#include "pastel/ad/tensor_io.hpp"

#include "pastel/common/error.hpp"
#include "pastel/common/io.hpp"

#include <bit>
#include <algorithm>
#include <cstring>

namespace pastel::ad {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'T', 'L', 'T', 'E', 'N', 'S'};
constexpr std::uint8_t kTagF64 = 1;
constexpr std::uint8_t kTagF32 = 2;

template <class T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.append(reinterpret_cast<const char*>(raw), sizeof(T));
}

class Reader {
public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) {
      throw Error(ErrorCategory::schema, "tensor file truncated at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

} // namespace

std::string encode_tensor_file(const TensorFile& file, DType dtype) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, TensorFile::kFormatVersion);
  put<std::uint64_t>(out, file.header.size());
  out += file.header;
  put<std::uint64_t>(out, file.tensors.size());
  for (const auto& t : file.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, dtype == DType::f64 ? kTagF64 : kTagF32);
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      if (dtype == DType::f64) {
        put<double>(out, t.value.data()[i]);
      } else {
        put<float>(out, static_cast<float>(t.value.data()[i]));
      }
    }
  }
  return out;
}

TensorFile decode_tensor_file(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw Error(ErrorCategory::schema, "not a tensor file (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != TensorFile::kFormatVersion) {
    throw Error(ErrorCategory::schema, "tensor file format version " + std::to_string(version) +
                                           ", expected " + std::to_string(TensorFile::kFormatVersion));
  }
  TensorFile file;
  file.header = in.take(in.get<std::uint64_t>());
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = in.take(in.get<std::uint32_t>());
    const auto tag = in.get<std::uint8_t>();
    if (tag != kTagF64 && tag != kTagF32) {
      throw Error(ErrorCategory::schema, "tensor '" + t.name + "' has unknown dtype tag " + std::to_string(tag));
    }
    const auto rank = in.get<std::uint32_t>();
    if (rank != 2) throw Error(ErrorCategory::schema, "tensor '" + t.name + "' has rank " + std::to_string(rank));
    const auto rows = in.get<std::uint64_t>();
    const auto cols = in.get<std::uint64_t>();
    if (rows > (1u << 24) || cols > (1u << 24)) {
      throw Error(ErrorCategory::schema, "tensor '" + t.name + "' has implausible shape");
    }
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      t.value.data()[i] = tag == kTagF64 ? in.get<double>() : static_cast<double>(in.get<float>());
    }
    file.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw Error(ErrorCategory::schema, "trailing bytes after tensor blocks");
  return file;
}

void save_tensor_file(const std::filesystem::path& path, const TensorFile& file, DType dtype) {
  write_file_atomic(path, encode_tensor_file(file, dtype));
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  try {
    return decode_tensor_file(read_file(path));
  } catch (const Error& e) {
    if (e.category() == ErrorCategory::io) throw;
    throw Error(e.category(), path.string() + ": " + e.what());
  }
}

} // namespace pastel::ad
