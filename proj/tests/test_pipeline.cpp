#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "numlesa/config.hpp"
#include "numlesa/pipeline.hpp"

using namespace numlesa;

namespace {

const std::string kGoal =
    "Heterotaxie avec isomerisme gauche. Écho cardiaque (14/08): gradient VD-VG AP de "
    "50-60mmHg. en attente de Chx → dérivation cavo-pulmonaire.  Suivi par Dr. F.  "
    "saturation habituelle 80-85 % Polysplénie Malrotation intestinale opéré.";

AnnotatedNote goal_note() {
  AnnotatedNote n;
  n.text = kGoal;
  for (auto [value, label] : {std::pair{"50-60", ClassLabel::G}, {"80-85", ClassLabel::SO2}}) {
    const auto at = kGoal.find(value);
    n.entities.push_back({at, at + std::string(value).size(), label});
  }
  return n;
}

}  // namespace

TEST(ValueRows, GoalNoteWithGoldLabels) {
  const auto note = goal_note();
  const auto tokens = tokenize(note.text);
  auto rows = value_rows(tokens, token_labels(note, tokens));
  ASSERT_EQ(rows.size(), 3u);
  assess_rows(rows, tokens, {}, ThresholdTables{}, RangePolicy::Any);

  EXPECT_EQ(rows[0].value, "14/08");
  EXPECT_EQ(attribute_text(rows[0]), "O (date)");
  EXPECT_EQ(rows[0].verdict->status, Status::Unknown);

  EXPECT_EQ(rows[1].value, "50-60");
  EXPECT_EQ(rows[1].label, ClassLabel::G);
  EXPECT_EQ(rows[1].unit, std::optional<std::string>("mmHg"));
  EXPECT_EQ(rows[1].verdict->status, Status::ExpertReview);

  EXPECT_EQ(rows[2].value, "80-85");
  EXPECT_EQ(rows[2].label, ClassLabel::SO2);
  EXPECT_EQ(rows[2].unit, std::optional<std::string>("%"));
  EXPECT_EQ(rows[2].verdict->status, Status::Critical);
  EXPECT_NE(rows[2].verdict->note.find("habitual baseline"), std::string::npos);
}

TEST(ValueRows, RangePolicyChangesMixedVerdict) {
  const std::string text = "saturation 95-98 %";
  const auto tokens = tokenize(text);
  std::vector<ClassLabel> labels(tokens.size(), ClassLabel::O);
  labels[1] = ClassLabel::SO2;
  auto any = value_rows(tokens, labels), all = any, mid = any;
  assess_rows(any, tokens, {}, ThresholdTables{}, RangePolicy::Any);
  assess_rows(all, tokens, {}, ThresholdTables{}, RangePolicy::All);
  assess_rows(mid, tokens, {}, ThresholdTables{}, RangePolicy::Midpoint);
  EXPECT_EQ(any[0].verdict->status, Status::Critical);
  EXPECT_EQ(all[0].verdict->status, Status::Normal);
  EXPECT_EQ(mid[0].verdict->status, Status::Normal);
}

TEST(ValueRows, JsonRoundTripRebindsToTokens) {
  const auto note = goal_note();
  const auto tokens = tokenize(note.text);
  const auto rows = value_rows(tokens, token_labels(note, tokens));
  std::vector<ValueRow> back;
  for (const auto& r : rows) back.push_back(row_from_json(row_json(r)));
  bind_rows(back, tokens);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].token_index, rows[i].token_index);
    EXPECT_EQ(back[i].label, rows[i].label);
    EXPECT_EQ(back[i].unit, rows[i].unit);
  }
  auto stray = back;
  stray[0].span = {0, 3};
  EXPECT_THROW(bind_rows(stray, tokens), FormatError);
  EXPECT_THROW(row_from_json({{"value", "1"}, {"label", "XX"}, {"start", 0}, {"end", 1}}),
               FormatError);
}

TEST(Render, CsvAndTable) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  const auto note = goal_note();
  const auto tokens = tokenize(note.text);
  auto rows = value_rows(tokens, token_labels(note, tokens));
  assess_rows(rows, tokens, {}, ThresholdTables{}, RangePolicy::Any);
  const auto csv = rows_csv(0, rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "0,14/08,O (date),,Unknown,Unknown,out of class: no range applies");
  const auto table = rows_table(rows);
  EXPECT_EQ(table.substr(0, table.find('\n')), "| Value | Attributes | Unit | Critical      |");
  EXPECT_NE(table.find("| 80-85 | SO2        | %    | Yes           |"), std::string::npos);
}

TEST(Encoding, BlindedInputsUsePlaceholder) {
  const auto tokens = tokenize("FC 120 bpm");
  EXPECT_EQ(model_inputs(tokens, true), (std::vector<std::string>{"FC", "nombre", "bpm"}));
  EXPECT_EQ(model_inputs(tokens, false), (std::vector<std::string>{"FC", "120", "bpm"}));
}

TEST(RunConfig, DefaultsRoundTripThroughJson) {
  RunConfig c;
  const auto j = c.to_json();
  const auto back = RunConfig::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  EXPECT_EQ(j.at("train").at("patience"), 10);
  EXPECT_EQ(j.at("range_policy"), "any");
  EXPECT_EQ(j.at("corpus").at("note_count"), 1000);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, PartialDocumentKeepsDefaults) {
  auto c = RunConfig::from_json(
      {{"train", {{"learning_rate", 0.01}}}, {"range_policy", "midpoint"}, {"blinded", false}});
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.01);
  EXPECT_EQ(c.train.batch_size, desk_train_config().batch_size);
  EXPECT_EQ(c.range_policy, RangePolicy::Midpoint);
  EXPECT_FALSE(c.blinded);
  EXPECT_EQ(c.model.dim, desk_model_config().dim);
}

TEST(RunConfig, RejectsBadValues) {
  EXPECT_THROW(RunConfig::from_json({{"range_policy", "sometimes"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"train", {{"patience", "four"}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(nlohmann::json::array()), ConfigError);
  RunConfig c;
  c.thresholds_path = "/nonexistent/thresholds.json";
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig();
  c.model.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig();
  c.train.split = {0.5, 0.5, 0.5};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfig, ResolvesFromEnvironment) {
  const auto path = std::filesystem::temp_directory_path() / "numlesa_env_config.json";
  {
    std::ofstream out(path);
    out << R"({"split_seed": 7, "thresholds": ")" << NUMLESA_DATA_DIR << R"(/thresholds.json"})";
  }
  ::setenv(kConfigEnvVar, path.c_str(), 1);
  auto c = RunConfig::resolve(std::nullopt);
  ::unsetenv(kConfigEnvVar);
  EXPECT_EQ(c.split_seed, 7u);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.tables().to_json(), ThresholdTables{}.to_json());
  EXPECT_EQ(RunConfig::resolve(std::nullopt).split_seed, 1u);
  EXPECT_THROW(RunConfig::resolve(std::string("/nonexistent.json")), ConfigError);
  std::filesystem::remove(path);
}

TEST(GenSpecJson, RoundTrip) {
  GenSpec g;
  g.note_count = 12;
  g.template_pool = {"apgar", "heart_rate"};
  g.seed = 99;
  const auto back = gen_spec_from_json(gen_spec_json(g));
  EXPECT_EQ(back.note_count, 12u);
  EXPECT_EQ(back.template_pool, g.template_pool);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.class_frequency, g.class_frequency);
}
