#pragma once

#include "pastel/stl/formula.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace pastel::stl {

/// Parses the textual STL grammar:
///
///   or     := and ('|' and)*
///   and    := until ('&' until)*
///   until  := unary ('U' '[' a ',' b ']' unary)*
///   unary  := '!' unary | 'F' '[' a ',' b ']' unary | 'G' '[' a ',' b ']' unary | primary
///   primary:= '(' or ')' | '!' REGION | REGION | linexpr ('>' | '<') linexpr
///
/// Binary operators are left-associative. `!R1` directly before a region name
/// is an outside-polarity atom; `!(R1)` is a negation node. Throws SyntaxError.
Formula parse(std::string_view text);

/// Reads a spec file: `#` starts a comment, the first non-blank line is the formula.
Formula load_spec_file(const std::filesystem::path& path);
std::string read_spec_text(const std::filesystem::path& path);

} // namespace pastel::stl
