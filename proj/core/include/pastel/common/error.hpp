#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pastel {

/// Coarse failure classes. The CLI maps each one to a distinct exit code.
enum class ErrorCategory {
  internal,
  usage,
  io,
  schema,
  syntax,
  config,
  verification,
  numeric,
  shape,
  domain,
};

std::string_view to_string(ErrorCategory category) noexcept;

class Error : public std::runtime_error {
public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

private:
  ErrorCategory category_;
};

/// Parse failure carrying the byte offset of the offending input.
class SyntaxError : public Error {
public:
  SyntaxError(std::size_t offset, const std::string& message)
      : Error(ErrorCategory::syntax,
              message + " at offset " + std::to_string(offset)),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

} // namespace pastel
