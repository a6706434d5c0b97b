#include "pastel/common/error.hpp"

namespace pastel {

std::string_view to_string(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::internal: return "internal";
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::io: return "io";
    case ErrorCategory::schema: return "schema";
    case ErrorCategory::syntax: return "syntax";
    case ErrorCategory::config: return "config";
    case ErrorCategory::verification: return "verification";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::domain: return "domain";
  }
  return "internal";
}

} // namespace pastel
