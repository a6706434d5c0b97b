#include "pastel/stl/parser.hpp"

#include "pastel/common/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace pastel::stl {

namespace {

enum class Tok {
  ident,
  number,
  lparen,
  rparen,
  lbrack,
  rbrack,
  comma,
  bang,
  amp,
  pipe,
  greater,
  less,
  plus,
  minus,
  star,
  end,
};

struct Token {
  Tok kind;
  std::string_view text;
  std::size_t offset;
};

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

std::vector<Token> lex(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto unknown = [&](std::size_t len) {
    throw SyntaxError(i, "unknown operator '" + std::string(text.substr(i, len)) + "'");
  };
  while (i < n) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (is_ident_start(c)) {
      std::size_t j = i + 1;
      while (j < n && is_ident_char(text[j])) ++j;
      out.push_back({Tok::ident, text.substr(i, j - i), i});
      i = j;
      continue;
    }
    if (is_digit(c) || (c == '.' && i + 1 < n && is_digit(text[i + 1]))) {
      std::size_t j = i;
      while (j < n && is_digit(text[j])) ++j;
      if (j < n && text[j] == '.') {
        ++j;
        while (j < n && is_digit(text[j])) ++j;
      }
      if (j < n && (text[j] == 'e' || text[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < n && (text[k] == '+' || text[k] == '-')) ++k;
        if (k < n && is_digit(text[k])) {
          while (k < n && is_digit(text[k])) ++k;
          j = k;
        }
      }
      out.push_back({Tok::number, text.substr(i, j - i), i});
      i = j;
      continue;
    }
    const std::string_view two = text.substr(i, 2);
    if (two == "->" || two == "=>" || two == "<-" || two == "==" || two == ">=" ||
        two == "<=" || two == "&&" || two == "||" || two == "!=") {
      unknown(two == "<-" && text.substr(i, 3) == "<->" ? 3 : 2);
    }
    Tok kind;
    switch (c) {
      case '(': kind = Tok::lparen; break;
      case ')': kind = Tok::rparen; break;
      case '[': kind = Tok::lbrack; break;
      case ']': kind = Tok::rbrack; break;
      case ',': kind = Tok::comma; break;
      case '!': kind = Tok::bang; break;
      case '&': kind = Tok::amp; break;
      case '|': kind = Tok::pipe; break;
      case '>': kind = Tok::greater; break;
      case '<': kind = Tok::less; break;
      case '+': kind = Tok::plus; break;
      case '-': kind = Tok::minus; break;
      case '*': kind = Tok::star; break;
      default: unknown(1);
    }
    out.push_back({kind, text.substr(i, 1), i});
    ++i;
  }
  out.push_back({Tok::end, {}, n});
  return out;
}

int variable_index(std::string_view name) {
  for (std::size_t k = 0; k < kSignalVariables.size(); ++k) {
    if (kSignalVariables[k] == name) return static_cast<int>(k);
  }
  return -1;
}

bool is_keyword(std::string_view name) { return name == "F" || name == "G" || name == "U"; }

struct Linear {
  std::vector<double> weights;
  double constant = 0.0;

  void add_weight(std::size_t k, double w) {
    if (weights.size() <= k) weights.resize(k + 1, 0.0);
    weights[k] += w;
  }
};

class Parser {
public:
  explicit Parser(std::string_view text) : tokens_(lex(text)) {}

  Formula parse_all() {
    Formula f = parse_or();
    if (peek().kind != Tok::end) fail("unexpected '" + std::string(peek().text) + "'");
    return f;
  }

private:
  const Token& peek(std::size_t ahead = 0) const {
    return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
  }
  const Token& advance() { return tokens_[pos_ < tokens_.size() - 1 ? pos_++ : pos_]; }

  [[noreturn]] void fail(const std::string& message) const {
    throw SyntaxError(peek().offset, "syntax error: " + message);
  }

  const Token& expect(Tok kind, std::string_view what) {
    if (peek().kind != kind) {
      fail("expected " + std::string(what) +
           (peek().kind == Tok::end ? ", found end of input"
                                    : ", found '" + std::string(peek().text) + "'"));
    }
    return advance();
  }

  Formula parse_or() {
    Formula lhs = parse_and();
    while (peek().kind == Tok::pipe) {
      advance();
      lhs = Formula::disjunction(std::move(lhs), parse_and());
    }
    return lhs;
  }

  Formula parse_and() {
    Formula lhs = parse_until();
    while (peek().kind == Tok::amp) {
      advance();
      lhs = Formula::conjunction(std::move(lhs), parse_until());
    }
    return lhs;
  }

  Formula parse_until() {
    Formula lhs = parse_unary();
    while (peek().kind == Tok::ident && peek().text == "U") {
      advance();
      const Interval window = parse_interval();
      lhs = Formula::until(window, std::move(lhs), parse_unary());
    }
    return lhs;
  }

  Formula parse_unary() {
    const Token& t = peek();
    if (t.kind == Tok::bang) {
      advance();
      const Token& next = peek();
      if (next.kind == Tok::ident && !is_keyword(next.text) && variable_index(next.text) < 0 &&
          peek(1).kind != Tok::lbrack) {
        advance();
        return Formula::region(std::string(next.text), env::Polarity::outside);
      }
      return Formula::negation(parse_unary());
    }
    if (t.kind == Tok::ident && (t.text == "F" || t.text == "G")) {
      const bool eventually = t.text == "F";
      advance();
      const Interval window = parse_interval();
      Formula body = parse_unary();
      return eventually ? Formula::eventually(window, std::move(body))
                        : Formula::always(window, std::move(body));
    }
    return parse_primary();
  }

  Formula parse_primary() {
    const Token& t = peek();
    if (t.kind == Tok::lparen) {
      advance();
      Formula inner = parse_or();
      expect(Tok::rparen, "')'");
      return inner;
    }
    if (t.kind == Tok::ident) {
      if (t.text == "U") fail("'U' needs a left operand");
      if (peek(1).kind == Tok::lbrack) {
        throw SyntaxError(t.offset, "unknown operator '" + std::string(t.text) + "'");
      }
      if (variable_index(t.text) < 0) {
        advance();
        return Formula::region(std::string(t.text));
      }
    }
    if (t.kind == Tok::ident || t.kind == Tok::number || t.kind == Tok::minus) {
      return parse_affine();
    }
    if (t.kind == Tok::end) fail("unexpected end of input");
    fail("unexpected '" + std::string(t.text) + "'");
  }

  Formula parse_affine() {
    Linear lhs = parse_linear();
    const Token& cmp = peek();
    if (cmp.kind != Tok::greater && cmp.kind != Tok::less) {
      fail("expected '>' or '<' in predicate");
    }
    const bool greater = cmp.kind == Tok::greater;
    advance();
    Linear rhs = parse_linear();
    // lhs > rhs  <=>  (lhs - rhs) > 0 ; lhs < rhs  <=>  (rhs - lhs) > 0
    Linear& pos = greater ? lhs : rhs;
    Linear& neg = greater ? rhs : lhs;
    for (std::size_t k = 0; k < neg.weights.size(); ++k) pos.add_weight(k, -neg.weights[k]);
    return Formula::affine(std::move(pos.weights), pos.constant - neg.constant);
  }

  Linear parse_linear() {
    Linear out;
    double sign = 1.0;
    if (peek().kind == Tok::minus) {
      advance();
      sign = -1.0;
    }
    parse_term(out, sign);
    while (peek().kind == Tok::plus || peek().kind == Tok::minus) {
      sign = advance().kind == Tok::plus ? 1.0 : -1.0;
      parse_term(out, sign);
    }
    return out;
  }

  void parse_term(Linear& out, double sign) {
    const Token& t = peek();
    if (t.kind == Tok::number) {
      const double value = parse_number(advance());
      if (peek().kind == Tok::star) {
        advance();
        const Token& var = expect(Tok::ident, "signal variable after '*'");
        const int k = variable_index(var.text);
        if (k < 0) {
          throw SyntaxError(var.offset,
                            "syntax error: unknown signal variable '" + std::string(var.text) + "'");
        }
        out.add_weight(static_cast<std::size_t>(k), sign * value);
      } else {
        out.constant += sign * value;
      }
      return;
    }
    if (t.kind == Tok::ident) {
      const int k = variable_index(t.text);
      if (k < 0) fail("unknown signal variable '" + std::string(t.text) + "'");
      advance();
      out.add_weight(static_cast<std::size_t>(k), sign);
      return;
    }
    fail("expected a number or signal variable");
  }

  static double parse_number(const Token& t) {
    double v = 0.0;
    const auto* first = t.text.data();
    const auto* last = first + t.text.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) {
      throw SyntaxError(t.offset, "syntax error: bad number '" + std::string(t.text) + "'");
    }
    return v;
  }

  long long parse_bound() {
    const Token& t = peek();
    if (t.kind == Tok::minus) {
      throw SyntaxError(t.offset, "malformed interval: negative bound");
    }
    if (t.kind != Tok::number) fail("expected an integer interval bound");
    const bool integral = std::all_of(t.text.begin(), t.text.end(), is_digit);
    if (!integral) {
      throw SyntaxError(t.offset,
                        "malformed interval: non-integer bound '" + std::string(t.text) + "'");
    }
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc{} || v > 1'000'000) {
      throw SyntaxError(t.offset, "malformed interval: bound out of range");
    }
    advance();
    return v;
  }

  Interval parse_interval() {
    const std::size_t start = peek().offset;
    expect(Tok::lbrack, "'[' opening a time interval");
    const long long lo = parse_bound();
    expect(Tok::comma, "',' in time interval");
    const long long hi = parse_bound();
    expect(Tok::rbrack, "']' closing a time interval");
    if (hi < lo) {
      throw SyntaxError(start, "malformed interval: hi " + std::to_string(hi) + " < lo " +
                                   std::to_string(lo));
    }
    return Interval{static_cast<int>(lo), static_cast<int>(hi)};
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

} // namespace

Formula parse(std::string_view text) { return Parser(text).parse_all(); }

std::string read_spec_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot open spec file " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r\n");
    return line.substr(first, last - first + 1);
  }
  throw Error(ErrorCategory::syntax, "spec file " + path.string() + " contains no formula");
}

Formula load_spec_file(const std::filesystem::path& path) { return parse(read_spec_text(path)); }

} // namespace pastel::stl
