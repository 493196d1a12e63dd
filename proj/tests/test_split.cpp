#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "numlesa/split.hpp"

using namespace numlesa;

namespace {

const std::array<double, 3> kFractions{0.70, 0.15, 0.15};

void expect_within_one(const std::vector<ClassCounts>& units, const SplitResult& r) {
  ClassCounts totals{};
  for (const auto& u : units)
    for (std::size_t c = 0; c < kNumClasses; ++c) totals[c] += u[c];
  for (std::size_t p = 0; p < 3; ++p) {
    ClassCounts got{};
    for (auto i : r.parts[p])
      for (std::size_t c = 0; c < kNumClasses; ++c) got[c] += units[i][c];
    for (std::size_t c = 0; c < kNumClasses; ++c)
      EXPECT_LE(std::abs(static_cast<double>(got[c]) - kFractions[p] * static_cast<double>(totals[c])),
                1.0 + 1e-9)
          << "part " << p << " class " << kLabelNames[c];
  }
}

}  // namespace

TEST(StratifiedSplit, SingleClassHundred) {
  std::vector<ClassCounts> units(100);
  for (auto& u : units) u[index_of(ClassLabel::FC)] = 1;
  auto r = stratified_split(units, kFractions, 1);
  EXPECT_EQ(r.train().size(), 70u);
  EXPECT_EQ(r.val().size(), 15u);
  EXPECT_EQ(r.test().size(), 15u);
}

TEST(StratifiedSplit, DeterministicAndPartition) {
  std::mt19937_64 rng(5);
  std::vector<ClassCounts> units(300);
  for (auto& u : units)
    for (std::size_t c = 0; c < kNumClasses; ++c) u[c] = rng() % 6 == 0 ? 1 + rng() % 2 : 0;
  auto a = stratified_split(units, kFractions, 42);
  auto b = stratified_split(units, kFractions, 42);
  EXPECT_EQ(a.parts, b.parts);
  std::vector<int> seen(units.size(), 0);
  for (const auto& p : a.parts)
    for (auto i : p) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
  expect_within_one(units, a);
}

TEST(StratifiedSplit, SyntheticCorpusRecount) {
  GenSpec spec;
  auto notes = generate(spec);
  std::vector<ClassCounts> units;
  for (const auto& n : notes) units.push_back(entity_counts(n));
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto r = stratified_split(notes, kFractions, seed);
    EXPECT_TRUE(r.warnings.empty());
    expect_within_one(units, r);
  }
}

TEST(StratifiedSplit, TinyClassGoesToTrainWithWarning) {
  std::vector<ClassCounts> units(40);
  for (auto& u : units) u[index_of(ClassLabel::SO2)] = 1;
  units[7][index_of(ClassLabel::Cp)] = 1;
  units[9][index_of(ClassLabel::Cp)] = 1;
  auto r = stratified_split(units, kFractions, 3);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.warnings[0].kind, "ClassTooSmall");
  EXPECT_EQ(r.warnings[0].label, ClassLabel::Cp);
  const auto& train = r.train();
  EXPECT_NE(std::find(train.begin(), train.end(), 7u), train.end());
  EXPECT_NE(std::find(train.begin(), train.end(), 9u), train.end());
}

TEST(StratifiedSplit, RejectsBadFractions) {
  EXPECT_THROW(stratified_split(std::vector<ClassCounts>(3), {0.5, 0.5, 0.5}, 1), ConfigError);
}
