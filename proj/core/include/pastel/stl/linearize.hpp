#pragma once

#include "pastel/stl/formula.hpp"

#include <string>
#include <vector>

namespace pastel::stl {

enum class Traversal { in_order, pre_order, post_order };
enum class WordForm { symbol, word };

/// Largest integer token a linearized interval bound may use.
inline constexpr int kDefaultMaxBound = 64;

struct TokenStream {
  std::vector<std::string> tokens;
  friend bool operator==(const TokenStream&, const TokenStream&) = default;
};

/// Deterministic token rendering. in_order + symbol is canonical: joining its
/// tokens yields text that parse() maps back to the same formula. Intervals
/// emit as `[`, lo, `,`, hi, `]` (pre/post orders drop the brackets).
/// Throws Error(domain) if a bound exceeds `max_bound`.
TokenStream linearize(const Formula& f, Traversal style = Traversal::in_order,
                      WordForm form = WordForm::symbol, int max_bound = kDefaultMaxBound);

/// Canonical text: the in-order symbol tokens with single spaces around `&`,
/// `|` and `U[a,b]`. Bit-exact; used for golden files.
std::string render_canonical(const Formula& f);

/// Joins canonical tokens back into parseable text (inverse of linearize for in_order/symbol).
std::string join_tokens(const std::vector<std::string>& tokens);

/// Textual form of an affine atom, e.g. `px>4` or `2*px-vy>-0.5`.
std::string render_affine(const AffineAtom& atom);

} // namespace pastel::stl
