#pragma once

// Rule-based tokenizer for French clinical notes. Numeric lexemes are split
// from glued units ("50-60mmHg" -> "50-60" + "mmHg") and every digit-bearing
// token is typed as a quantitative value, a code number, or a unit.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "numlesa/errors.hpp"

namespace numlesa {

enum class TokenKind { Word, Quant, Code, Unit, Punct };

inline const char* to_string(TokenKind k) {
  switch (k) {
    case TokenKind::Word: return "Word";
    case TokenKind::Quant: return "Quant";
    case TokenKind::Code: return "Code";
    case TokenKind::Unit: return "Unit";
    case TokenKind::Punct: return "Punct";
  }
  return "?";
}

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive, byte offset
  bool operator==(const Span&) const = default;
};

struct Token {
  std::string text;
  Span span;
  TokenKind kind = TokenKind::Word;
  bool operator==(const Token&) const = default;
};

struct Scalar {
  double value = 0.0;
  bool operator==(const Scalar&) const = default;
};
struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};
struct Sequence {
  std::vector<double> values;
  bool operator==(const Sequence&) const = default;
};
struct Date {
  int day = 1;
  int month = 1;
  bool operator==(const Date&) const = default;
};

using NumericForm = std::variant<Scalar, Range, Sequence, Date>;

struct NumericLexeme {
  std::string raw;
  NumericForm form;
  std::optional<std::string> unit_hint;
  bool operator==(const NumericLexeme&) const = default;
};

inline const char* form_name(const NumericForm& f) {
  switch (f.index()) {
    case 0: return "Scalar";
    case 1: return "Range";
    case 2: return "Sequence";
    default: return "Date";
  }
}

// Numeric components of a lexeme in reading order; empty for dates.
inline std::vector<double> components(const NumericForm& f) {
  if (auto s = std::get_if<Scalar>(&f)) return {s->value};
  if (auto r = std::get_if<Range>(&f)) return {r->lo, r->hi};
  if (auto q = std::get_if<Sequence>(&f)) return q->values;
  return {};
}

struct TokenizerConfig {
  std::vector<std::string> units{"%",  "mmHg", "bpm", "mm", "cm",  "kg",
                                 "Kg", "g",    "mm2", "cm3", "min"};
  // Left neighbours that turn a bare number into a code ("trisomie 21").
  std::vector<std::string> code_contexts{"trisomie", "monosomie", "chromosome", "del",
                                         "délétion", "deletion"};

  bool is_unit(std::string_view s) const {
    return std::find(units.begin(), units.end(), s) != units.end();
  }
};

namespace detail {

struct CodePoint {
  char32_t cp = 0;
  std::size_t len = 1;
  bool valid = false;
};

inline CodePoint decode_utf8(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1, true};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {b0, 1, false};
  }
  if (i + len > s.size()) return {b0, 1, false};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return {b0, 1, false};
    cp = (cp << 6) | (b & 0x3F);
  }
  return {cp, len, true};
}

inline bool is_space(const CodePoint& c) {
  if (!c.valid) return false;
  switch (c.cp) {
    case U' ': case U'\t': case U'\n': case U'\r': case U'\v': case U'\f':
    case 0x00A0: case 0x202F: case 0x2009:
      return true;
    default:
      return false;
  }
}

inline bool is_digit(char32_t cp) { return cp >= U'0' && cp <= U'9'; }

inline bool is_letter(const CodePoint& c) {
  if (!c.valid) return false;
  const char32_t cp = c.cp;
  if ((cp >= U'a' && cp <= U'z') || (cp >= U'A' && cp <= U'Z')) return true;
  if (cp == 0x00B5) return true;  // micro sign
  if (cp >= 0x00C0 && cp <= 0x024F && cp != 0x00D7 && cp != 0x00F7) return true;
  return false;
}

inline bool is_alnum(const CodePoint& c) { return c.valid && (is_digit(c.cp) || is_letter(c)); }

inline bool has_digit(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char ch) { return ch >= '0' && ch <= '9'; });
}

inline bool has_letter(std::string_view s) {
  for (std::size_t i = 0; i < s.size();) {
    auto c = decode_utf8(s, i);
    if (is_letter(c)) return true;
    i += c.len;
  }
  return false;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& ch : out)
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  return out;
}

inline std::optional<double> parse_decimal(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::string buf;
  int seps = 0;
  for (char ch : s) {
    if (ch >= '0' && ch <= '9') {
      buf.push_back(ch);
    } else if (ch == '.' || ch == ',') {
      buf.push_back('.');
      ++seps;
    } else {
      return std::nullopt;
    }
  }
  if (seps > 1 || buf.front() == '.' || buf.back() == '.') return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc() || ptr != buf.data() + buf.size()) return std::nullopt;
  return v;
}

inline std::optional<int> parse_small_int(std::string_view s) {
  if (s.empty() || s.size() > 4) return std::nullopt;
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

// Letters followed by a 2/3 exponent, e.g. "mm2", "cm3".
inline bool is_exponent_unit(std::string_view s, const TokenizerConfig& cfg) {
  if (cfg.is_unit(s) && has_digit(s)) return true;
  if (s.size() < 2) return false;
  const char last = s.back();
  if (last != '2' && last != '3') return false;
  const auto stem = s.substr(0, s.size() - 1);
  return stem == "mm" || stem == "cm" || stem == "m" || stem == "dm";
}

}  // namespace detail

// Parses a quantitative token into its numeric form. Decimal commas are
// accepted; the raw text is kept verbatim.
inline NumericLexeme parse_numeric(const Token& token) {
  const std::string_view t = token.text;
  NumericLexeme lex{token.text, Scalar{}, std::nullopt};
  if (!detail::has_digit(t) || detail::has_letter(t))
    throw MalformedNumeric("not a numeric lexeme: '" + token.text + "'");

  if (t.find('/') != std::string_view::npos) {
    if (t.find('-') != std::string_view::npos)
      throw MalformedNumeric("mixed separators: '" + token.text + "'");
    auto parts = detail::split(t, '/');
    if (parts.size() == 2 || parts.size() == 3) {
      auto day = detail::parse_small_int(parts[0]);
      auto month = detail::parse_small_int(parts[1]);
      bool year_ok = true;
      if (parts.size() == 3) {
        year_ok = (parts[2].size() == 2 || parts[2].size() == 4) &&
                  detail::parse_small_int(parts[2]).has_value();
      }
      if (day && month && year_ok && parts[0].size() <= 2 && parts[1].size() <= 2 &&
          *day >= 1 && *day <= 31 && *month >= 1 && *month <= 12) {
        lex.form = Date{*day, *month};
        return lex;
      }
    }
    throw MalformedNumeric("slash numeric outside date bounds: '" + token.text + "'");
  }

  if (t.find('-') != std::string_view::npos) {
    auto parts = detail::split(t, '-');
    std::vector<double> values;
    for (auto p : parts) {
      auto v = detail::parse_decimal(p);
      if (!v) throw MalformedNumeric("bad component in '" + token.text + "'");
      values.push_back(*v);
    }
    if (values.size() == 2) {
      lex.form = Range{std::min(values[0], values[1]), std::max(values[0], values[1])};
    } else {
      lex.form = Sequence{std::move(values)};
    }
    return lex;
  }

  auto v = detail::parse_decimal(t);
  if (!v) throw MalformedNumeric("unparseable number '" + token.text + "'");
  lex.form = Scalar{*v};
  return lex;
}

// Types a digit-bearing token. Neighbours are the adjacent token texts.
inline TokenKind classify_number_kind(std::string_view token_text,
                                      std::optional<std::string_view> left_neighbor,
                                      std::optional<std::string_view> right_neighbor,
                                      const TokenizerConfig& cfg = {}) {
  (void)right_neighbor;
  if (detail::has_letter(token_text)) {
    if (detail::is_exponent_unit(token_text, cfg)) return TokenKind::Unit;
    return TokenKind::Code;
  }
  if (left_neighbor) {
    const auto left = detail::ascii_lower(*left_neighbor);
    for (const auto& ctx : cfg.code_contexts)
      if (left == detail::ascii_lower(ctx)) return TokenKind::Code;
  }
  return TokenKind::Quant;
}

namespace detail {

struct Piece {
  Span span;
  bool alnum_run = false;
  bool percent = false;
  bool invalid = false;
};

// Splits a run that starts with a number into (number, glued unit) when the
// trailing letters are a known unit.
inline std::optional<std::size_t> numeric_prefix_end(std::string_view run,
                                                     const TokenizerConfig& cfg) {
  if (run.empty() || !(run[0] >= '0' && run[0] <= '9')) return std::nullopt;
  std::size_t i = 0;
  while (i < run.size()) {
    const char ch = run[i];
    if (ch >= '0' && ch <= '9') {
      ++i;
    } else if ((ch == '-' || ch == '/' || ch == '.' || ch == ',') && i + 1 < run.size() &&
               run[i + 1] >= '0' && run[i + 1] <= '9') {
      ++i;
    } else {
      break;
    }
  }
  if (i == run.size()) return std::nullopt;
  const auto suffix = run.substr(i);
  if (cfg.is_unit(suffix) && !has_digit(suffix)) return i;
  return std::nullopt;
}

}  // namespace detail

inline std::vector<Token> tokenize(std::string_view source, const TokenizerConfig& cfg = {}) {
  using namespace detail;
  std::vector<Piece> pieces;
  std::size_t i = 0;
  while (i < source.size()) {
    auto c = decode_utf8(source, i);
    if (is_space(c)) {
      i += c.len;
      continue;
    }
    if (is_alnum(c)) {
      const std::size_t start = i;
      CodePoint prev = c;
      i += c.len;
      while (i < source.size()) {
        auto n = decode_utf8(source, i);
        if (is_alnum(n)) {
          prev = n;
          i += n.len;
          continue;
        }
        if (n.valid && (n.cp == U'-' || n.cp == U'/' || n.cp == U'.' || n.cp == U',') &&
            i + 1 < source.size()) {
          auto after = decode_utf8(source, i + 1);
          const bool numeric_sep = n.cp == U'.' || n.cp == U',';
          const bool ok = numeric_sep ? (is_digit(prev.cp) && after.valid && is_digit(after.cp))
                                      : is_alnum(after);
          if (ok) {
            prev = after;
            i += 1 + after.len;
            continue;
          }
        }
        break;
      }
      pieces.push_back({{start, i}, true, false, false});
      continue;
    }
    if (!c.valid) {
      const std::size_t start = i;
      while (i < source.size() && !decode_utf8(source, i).valid) ++i;
      pieces.push_back({{start, i}, false, false, true});
      continue;
    }
    pieces.push_back({{i, i + c.len}, false, c.cp == U'%', false});
    i += c.len;
  }

  std::vector<Token> tokens;
  tokens.reserve(pieces.size() + 4);
  auto text_of = [&](Span s) { return std::string(source.substr(s.begin, s.end - s.begin)); };

  for (const auto& p : pieces) {
    const std::string text = text_of(p.span);
    if (p.invalid) {
      tokens.push_back({text, p.span, TokenKind::Word});
    } else if (p.percent) {
      tokens.push_back({text, p.span, TokenKind::Unit});
    } else if (!p.alnum_run) {
      tokens.push_back({text, p.span, TokenKind::Punct});
    } else if (!has_digit(text)) {
      tokens.push_back({text, p.span, TokenKind::Word});
    } else if (auto cut = numeric_prefix_end(text, cfg)) {
      const Span num{p.span.begin, p.span.begin + *cut};
      const Span unit{p.span.begin + *cut, p.span.end};
      tokens.push_back({text_of(num), num, TokenKind::Quant});
      tokens.push_back({text_of(unit), unit, TokenKind::Unit});
    } else {
      // Kind is resolved below once neighbours are known.
      tokens.push_back({text, p.span, TokenKind::Quant});
    }
  }

  for (std::size_t k = 0; k < tokens.size(); ++k) {
    auto& tok = tokens[k];
    if (tok.kind == TokenKind::Word && k > 0 && tokens[k - 1].kind == TokenKind::Quant &&
        cfg.is_unit(tok.text)) {
      tok.kind = TokenKind::Unit;
      continue;
    }
    if (tok.kind != TokenKind::Quant) continue;
    // Quant tokens produced by the glued-unit split are already final, but
    // re-checking them is harmless and keeps one code path.
    std::optional<std::string_view> left, right;
    if (k > 0) left = tokens[k - 1].text;
    if (k + 1 < tokens.size()) right = tokens[k + 1].text;
    tok.kind = classify_number_kind(tok.text, left, right, cfg);
    if (tok.kind == TokenKind::Quant) {
      try {
        (void)parse_numeric(tok);
      } catch (const MalformedNumeric&) {
        tok.kind = TokenKind::Code;
      }
    }
  }
  return tokens;
}

// Rebuilds text from tokens, reusing the inter-token gaps of `source`.
// Token texts may differ from source[span] (blinded placeholders).
inline std::string render(std::string_view source, const std::vector<Token>& tokens) {
  std::string out;
  std::size_t cursor = 0;
  for (const auto& t : tokens) {
    if (t.span.begin > cursor) out.append(source.substr(cursor, t.span.begin - cursor));
    out += t.text;
    cursor = t.span.end;
  }
  if (cursor < source.size()) out.append(source.substr(cursor));
  return out;
}

}  // namespace numlesa
