#include <gtest/gtest.h>

#include "numlesa/blinding.hpp"
#include "numlesa/corpus.hpp"

using namespace numlesa;

namespace {
std::string blind_text(const std::string& src) {
  return render(src, blind(tokenize(src)).tokens);
}
}  // namespace

TEST(Blind, SingleScalar) {
  auto b = blind(tokenize("FC 120"));
  EXPECT_EQ(render("FC 120", b.tokens), "FC nombre");
  ASSERT_EQ(b.alignment.size(), 1u);
  EXPECT_EQ(b.alignment[0].blinded_index, 1u);
  EXPECT_EQ(b.alignment[0].lexeme.form, NumericForm(Scalar{120}));
}

TEST(Blind, BirthSentence) {
  const std::string src = "PN 3.23 Kg, APGAR 8-9-9.";
  auto b = blind(tokenize(src));
  EXPECT_EQ(render(src, b.tokens), "PN nombre Kg, APGAR nombre.");
  ASSERT_EQ(b.alignment.size(), 2u);
  EXPECT_EQ(b.alignment[0].lexeme.unit_hint, std::optional<std::string>("Kg"));
  EXPECT_EQ(b.alignment[1].lexeme.form, NumericForm(Sequence{{8, 9, 9}}));
}

TEST(Blind, CodeNumbersUnchanged) {
  EXPECT_EQ(blind_text("délétion 22q11"), "délétion 22q11");
  EXPECT_EQ(blind_text("G1P3, B1B2 souffle, 4 mm2 et 2 cm3"),
            "G1P3, B1B2 souffle, nombre mm2 et nombre cm3");
}

TEST(Blind, DatesAreBlinded) {
  EXPECT_EQ(blind_text("Écho cardiaque (14/08): gradient"), "Écho cardiaque (nombre): gradient");
}

TEST(Blind, CustomPlaceholder) {
  auto b = blind(tokenize("sat 92%"), "NUM");
  EXPECT_EQ(b.tokens[1].text, "NUM");
}

TEST(Blind, IdempotentReversibleLengthPreserving) {
  const std::string src =
      "Heterotaxie. Écho cardiaque (14/08): gradient VD-VG AP de 50-60mmHg. saturation "
      "habituelle 80-85 % trisomie 21, FE 3,5-4.";
  auto toks = tokenize(src);
  auto b = blind(toks);
  EXPECT_EQ(b.tokens.size(), toks.size());
  auto again = blind(b.tokens);
  EXPECT_EQ(again.tokens, b.tokens);
  EXPECT_TRUE(again.alignment.empty());
  EXPECT_EQ(unblind(b), toks);
  for (const auto& a : b.alignment) EXPECT_EQ(b.tokens[a.blinded_index].text, "nombre");
  std::size_t quant = 0;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i].kind == TokenKind::Quant) {
      ++quant;
    } else {
      EXPECT_EQ(toks[i], b.tokens[i]);
    }
  }
  EXPECT_EQ(quant, b.alignment.size());
}

TEST(ProjectPredictions, DirectLookup) {
  const std::string src = "saturation habituelle de 80-85 %";
  auto b = blind(tokenize(src));
  std::vector<ClassLabel> labels(b.tokens.size(), ClassLabel::O);
  labels[3] = ClassLabel::SO2;
  auto rows = project_predictions(b, labels);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].lexeme.form, NumericForm(Range{80, 85}));
  EXPECT_EQ(rows[0].label, ClassLabel::SO2);
  EXPECT_EQ(src.substr(rows[0].span.begin, rows[0].span.end - rows[0].span.begin), "80-85");
}

TEST(ProjectPredictions, NoQuantities) {
  auto b = blind(tokenize("souffle systolique"));
  EXPECT_TRUE(project_predictions(b, std::vector<ClassLabel>(b.tokens.size())).empty());
}

TEST(ProjectPredictions, LengthMismatch) {
  auto b = blind(tokenize("FC 120"));
  EXPECT_THROW(project_predictions(b, {ClassLabel::O}), LengthMismatch);
}

TEST(Blind, PropertiesOnGeneratedNotes) {
  GenSpec spec;
  spec.note_count = 1000;
  std::size_t quants = 0;
  for (const auto& note : generate(spec)) {
    const auto toks = tokenize(note.text);
    const auto b = blind(toks);
    ASSERT_EQ(b.tokens.size(), toks.size()) << note.text;
    EXPECT_EQ(blind(b.tokens).tokens, b.tokens) << note.text;
    EXPECT_EQ(unblind(b), toks) << note.text;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (toks[i].kind == TokenKind::Quant) {
        ++quants;
        EXPECT_EQ(b.tokens[i].text, kDefaultPlaceholder);
      } else {
        EXPECT_EQ(b.tokens[i], toks[i]);
      }
    }
  }
  EXPECT_GT(quants, 1000u);
}
