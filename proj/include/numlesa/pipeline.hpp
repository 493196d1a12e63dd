#pragma once

// End-to-end glue: note encoding for the classifier, value extraction from
// predictions or gold annotations, and the criticality table.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "numlesa/blinding.hpp"
#include "numlesa/corpus.hpp"
#include "numlesa/criticality.hpp"
#include "numlesa/metrics.hpp"
#include "numlesa/model.hpp"
#include "numlesa/split.hpp"
#include "numlesa/tokenizer.hpp"

namespace numlesa {

// Token texts as the classifier sees them.
inline std::vector<std::string> model_inputs(const std::vector<Token>& tokens, bool blinded,
                                             const std::string& placeholder = kDefaultPlaceholder) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  if (blinded) {
    for (const auto& t : blind(tokens, placeholder).tokens) out.push_back(t.text);
  } else {
    for (const auto& t : tokens) out.push_back(t.text);
  }
  return out;
}

inline std::vector<std::vector<std::string>> model_sentences(
    const std::vector<AnnotatedNote>& notes, const std::vector<std::size_t>& which, bool blinded) {
  std::vector<std::vector<std::string>> out;
  out.reserve(which.size());
  for (auto i : which) out.push_back(model_inputs(tokenize(notes[i].text), blinded));
  return out;
}

inline Example encode_example(const AnnotatedNote& note, const Vocab& vocab, bool blinded) {
  const auto tokens = tokenize(note.text);
  return {vocab.encode(model_inputs(tokens, blinded)), token_labels(note, tokens)};
}

inline std::vector<Example> encode_examples(const std::vector<AnnotatedNote>& notes,
                                            const std::vector<std::size_t>& which,
                                            const Vocab& vocab, bool blinded) {
  std::vector<Example> out;
  out.reserve(which.size());
  for (auto i : which) out.push_back(encode_example(notes[i], vocab, blinded));
  return out;
}

// Per-token labels for raw text from a trained model.
inline std::vector<ClassLabel> predict_tokens(const TokenClassifier& model,
                                              const std::vector<Token>& tokens) {
  return predict(model, model.vocab.encode(model_inputs(tokens, model.blinded)));
}

struct ValueRow {
  std::string value;
  ClassLabel label = ClassLabel::O;
  std::string form;
  std::optional<std::string> unit;
  Span span;
  std::size_t token_index = 0;
  std::optional<CriticalityVerdict> verdict;
};

// One row per quantitative token, labelled from a per-token label vector.
inline std::vector<ValueRow> value_rows(const std::vector<Token>& tokens,
                                        const std::vector<ClassLabel>& labels) {
  const auto blinded = blind(tokens);
  std::vector<ValueRow> rows;
  for (const auto& p : project_predictions(blinded, labels))
    rows.push_back({p.lexeme.raw, p.label, std::string(form_name(p.lexeme.form)),
                    p.lexeme.unit_hint, p.span, p.token_index, std::nullopt});
  return rows;
}

inline void assess_rows(std::vector<ValueRow>& rows, const std::vector<Token>& tokens,
                        const PatientContext& ctx, const ThresholdTables& tables,
                        RangePolicy policy) {
  for (auto& r : rows) {
    const auto lex = parse_numeric(tokens.at(r.token_index));
    r.verdict = assess(lex, r.label, ctx, tables, policy, ValueContext::around(tokens, r.token_index));
  }
}

inline std::string attribute_text(const ValueRow& r) {
  if (r.label == ClassLabel::O && r.form == "Date") return "O (date)";
  return std::string(to_string(r.label));
}

inline std::string critical_text(Status s) {
  switch (s) {
    case Status::Critical: return "Yes";
    case Status::Normal: return "No";
    case Status::ExpertReview: return "Expert review";
    case Status::Unknown: return "Unknown";
  }
  return "?";
}

inline nlohmann::json row_json(const ValueRow& r) {
  nlohmann::json j{{"value", r.value},
                   {"label", std::string(to_string(r.label))},
                   {"form", r.form},
                   {"unit", r.unit ? nlohmann::json(*r.unit) : nlohmann::json()},
                   {"start", r.span.begin},
                   {"end", r.span.end}};
  if (r.verdict) {
    j["status"] = to_string(r.verdict->status);
    j["range"] = r.verdict->applied_range
                     ? nlohmann::json{r.verdict->applied_range->lo,
                                      r.verdict->applied_range->hi
                                          ? nlohmann::json(*r.verdict->applied_range->hi)
                                          : nlohmann::json()}
                     : nlohmann::json();
    j["note"] = r.verdict->note;
  }
  return j;
}

inline ValueRow row_from_json(const nlohmann::json& j) {
  ValueRow r;
  try {
    r.value = j.at("value").get<std::string>();
    const auto name = j.at("label").get<std::string>();
    auto label = parse_label(name);
    if (!label) throw FormatError("unknown class label '" + name + "'");
    r.label = *label;
    r.form = j.value("form", "");
    if (j.contains("unit") && !j.at("unit").is_null()) r.unit = j.at("unit").get<std::string>();
    r.span = {j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("value row: ") + e.what());
  }
  return r;
}

// Re-attaches rows read back from JSON to the tokens of their note.
inline void bind_rows(std::vector<ValueRow>& rows, const std::vector<Token>& tokens) {
  for (auto& r : rows) {
    auto it = std::find_if(tokens.begin(), tokens.end(), [&](const Token& t) {
      return t.span == r.span && t.kind == TokenKind::Quant;
    });
    if (it == tokens.end())
      throw FormatError("value '" + r.value + "' does not align with a quantitative token");
    r.token_index = static_cast<std::size_t>(it - tokens.begin());
  }
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

inline std::string rows_csv_header() { return "record,value,attributes,unit,critical,status,note"; }

inline std::string rows_csv(std::size_t note, const std::vector<ValueRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    const auto status = r.verdict ? r.verdict->status : Status::Unknown;
    out += std::to_string(note) + "," + csv_field(r.value) + "," + csv_field(attribute_text(r)) +
           "," + csv_field(r.unit.value_or("")) + "," + csv_field(critical_text(status)) + "," +
           to_string(status) + "," + csv_field(r.verdict ? r.verdict->note : "") + "\n";
  }
  return out;
}

// Human-readable table in the Value | Attributes | Unit | Critical layout.
inline std::string rows_table(const std::vector<ValueRow>& rows) {
  std::vector<std::array<std::string, 5>> cells;
  cells.push_back({"Value", "Attributes", "Unit", "Critical", ""});
  for (const auto& r : rows)
    cells.push_back({r.value, attribute_text(r), r.unit.value_or("-"),
                     critical_text(r.verdict ? r.verdict->status : Status::Unknown),
                     r.verdict ? r.verdict->note : ""});
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s)
      if ((ch & 0xC0) != 0x80) ++w;
    return w;
  };
  std::array<std::size_t, 4> widths{};
  for (const auto& row : cells)
    for (std::size_t k = 0; k < 4; ++k) widths[k] = std::max(widths[k], width(row[k]));
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::string line = "|";
    for (std::size_t k = 0; k < 4; ++k)
      line += " " + cells[i][k] + std::string(widths[k] - width(cells[i][k]), ' ') + " |";
    if (!cells[i][4].empty()) line += " " + cells[i][4];
    out += line + "\n";
    if (i == 0) {
      std::string sep = "|";
      for (std::size_t k = 0; k < 4; ++k) sep += std::string(widths[k] + 2, '-') + "|";
      out += sep + "\n";
    }
  }
  return out;
}

// One training configuration of the classifier.
struct ExperimentSpec {
  std::string name;
  ModelConfig model;
  TrainConfig train;
  bool blinded = true;
  KeywordTable keywords = KeywordTable::defaults();
};

struct SeedOutcome {
  RunMetrics test;
  TrainResult result;
  TokenClassifier model;
};

// Builds the vocabulary on the training notes, trains with early stopping on
// validation, and scores the restored best model on the test notes.
inline SeedOutcome run_seed(const std::vector<AnnotatedNote>& notes, const SplitResult& split,
                            const ExperimentSpec& spec, std::uint64_t seed,
                            const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  auto vocab = Vocab::build(model_sentences(notes, split.train(), spec.blinded), spec.keywords);
  ModelConfig cfg = spec.model;
  cfg.seed = seed;
  auto model = make_model(cfg, std::move(vocab), spec.keywords, spec.blinded);
  const auto train_set = encode_examples(notes, split.train(), model.vocab, spec.blinded);
  const auto val_set = encode_examples(notes, split.val(), model.vocab, spec.blinded);
  const auto test_set = encode_examples(notes, split.test(), model.vocab, spec.blinded);
  auto result = train(model, train_set, val_set, spec.train, seed, on_epoch);
  RunMetrics m;
  m.model = spec.name;
  m.seed = seed;
  m.f1 = f1_per_class(evaluate(model, test_set)).f1;
  m.macro = macro_f1(m.f1);
  return {m, std::move(result), std::move(model)};
}

}  // namespace numlesa
