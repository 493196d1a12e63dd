#pragma once

// Blind-dataset transform: every quantitative lexeme becomes one placeholder
// word while code numbers and units pass through untouched.

#include <string>
#include <vector>

#include "numlesa/errors.hpp"
#include "numlesa/label_space.hpp"
#include "numlesa/tokenizer.hpp"

namespace numlesa {

inline constexpr const char* kDefaultPlaceholder = "nombre";

struct AlignmentEntry {
  std::size_t blinded_index = 0;
  Span original_span;
  NumericLexeme lexeme;
  bool operator==(const AlignmentEntry&) const = default;
};

struct BlindedText {
  std::vector<Token> tokens;
  std::vector<AlignmentEntry> alignment;
};

inline BlindedText blind(const std::vector<Token>& tokens,
                         const std::string& placeholder = kDefaultPlaceholder) {
  BlindedText out;
  out.tokens.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Token& t = tokens[i];
    if (t.kind != TokenKind::Quant) {
      out.tokens.push_back(t);
      continue;
    }
    NumericLexeme lex = parse_numeric(t);
    if (i + 1 < tokens.size() && tokens[i + 1].kind == TokenKind::Unit)
      lex.unit_hint = tokens[i + 1].text;
    out.alignment.push_back({i, t.span, std::move(lex)});
    out.tokens.push_back({placeholder, t.span, TokenKind::Word});
  }
  return out;
}

// Inverse of blind(): puts the raw numeric text back at every placeholder.
inline std::vector<Token> unblind(const BlindedText& b) {
  std::vector<Token> tokens = b.tokens;
  for (const auto& a : b.alignment) {
    auto& t = tokens.at(a.blinded_index);
    t.text = a.lexeme.raw;
    t.kind = TokenKind::Quant;
  }
  return tokens;
}

struct ProjectedValue {
  NumericLexeme lexeme;
  ClassLabel label = ClassLabel::O;
  Span span;
  std::size_t token_index = 0;
};

inline std::vector<ProjectedValue> project_predictions(const BlindedText& blinded,
                                                       const std::vector<ClassLabel>& labels) {
  if (labels.size() != blinded.tokens.size())
    throw LengthMismatch("got " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(blinded.tokens.size()) + " tokens");
  std::vector<ProjectedValue> rows;
  rows.reserve(blinded.alignment.size());
  for (const auto& a : blinded.alignment)
    rows.push_back({a.lexeme, labels[a.blinded_index], a.original_span, a.blinded_index});
  return rows;
}

}  // namespace numlesa
