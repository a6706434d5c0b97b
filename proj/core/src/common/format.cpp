#include "pastel/common/format.hpp"

#include <charconv>

namespace pastel {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

} // namespace pastel
