#pragma once

// Token-level per-class F1 and the unweighted macro average over all eight
// classes (out-of-class included).

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "numlesa/errors.hpp"
#include "numlesa/label_space.hpp"

namespace numlesa {

using ClassScores = std::array<double, kNumClasses>;

struct ConfusionCounts {
  std::array<std::uint64_t, kNumClasses> tp{};
  std::array<std::uint64_t, kNumClasses> fp{};
  std::array<std::uint64_t, kNumClasses> fn{};
  std::uint64_t total = 0;

  void add(ClassLabel gold, ClassLabel pred) {
    ++total;
    if (gold == pred) {
      ++tp[index_of(gold)];
    } else {
      ++fp[index_of(pred)];
      ++fn[index_of(gold)];
    }
  }

  void add(const std::vector<ClassLabel>& gold, const std::vector<ClassLabel>& pred) {
    if (gold.size() != pred.size())
      throw LengthMismatch("gold/pred lengths differ: " + std::to_string(gold.size()) + " vs " +
                           std::to_string(pred.size()));
    for (std::size_t i = 0; i < gold.size(); ++i) add(gold[i], pred[i]);
  }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      tp[c] += o.tp[c];
      fp[c] += o.fp[c];
      fn[c] += o.fn[c];
    }
    total += o.total;
    return *this;
  }
};

struct F1Result {
  ClassScores f1{};
  std::vector<ClassLabel> degenerate;  // classes with TP = FP = FN = 0
};

inline F1Result f1_per_class(const ConfusionCounts& counts) {
  F1Result r;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double tp = static_cast<double>(counts.tp[c]);
    const double den = 2.0 * tp + static_cast<double>(counts.fp[c] + counts.fn[c]);
    if (den == 0.0) {
      r.f1[c] = 0.0;
      r.degenerate.push_back(label_from_index(c));
    } else {
      r.f1[c] = 2.0 * tp / den;
    }
  }
  return r;
}

inline double macro_f1(const ClassScores& per_class) {
  double s = 0.0;
  for (double v : per_class) s += v;
  return s / static_cast<double>(kNumClasses);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / n)};
}

// One evaluated run (one seed of one configuration).
struct RunMetrics {
  std::string model;
  std::uint64_t seed = 0;
  ClassScores f1{};
  double macro = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t c = 0; c < kNumClasses; ++c) per[std::string(kLabelNames[c])] = f1[c];
    return {{"model", model}, {"seed", seed}, {"per_class_f1", per}, {"macro_f1", macro}};
  }

  static RunMetrics from_json(const nlohmann::json& j) {
    RunMetrics m;
    try {
      m.model = j.value("model", "");
      m.seed = j.value("seed", std::uint64_t{0});
      const auto& per = j.at("per_class_f1");
      for (std::size_t c = 0; c < kNumClasses; ++c)
        m.f1[c] = per.at(std::string(kLabelNames[c])).get<double>();
      m.macro = j.at("macro_f1").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("metrics record: ") + e.what());
    }
    return m;
  }
};

struct AggregateRow {
  std::string model;
  std::size_t runs = 0;
  std::array<MeanStd, kNumClasses> per_class{};
  MeanStd macro;
};

inline AggregateRow aggregate(const std::string& model, const std::vector<RunMetrics>& runs) {
  AggregateRow row;
  row.model = model;
  row.runs = runs.size();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<double> xs;
    for (const auto& r : runs) xs.push_back(r.f1[c]);
    row.per_class[c] = mean_std(xs);
  }
  std::vector<double> ms;
  for (const auto& r : runs) ms.push_back(r.macro);
  row.macro = mean_std(ms);
  return row;
}

inline std::string format_mean_std(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", m.mean, m.std);
  return buf;
}

inline std::string aggregate_csv_header() {
  std::string h = "model,runs";
  for (auto name : kLabelNames) h += "," + std::string(name);
  return h + ",macro";
}

inline std::string aggregate_csv_line(const AggregateRow& row) {
  std::string line = row.model + "," + std::to_string(row.runs);
  for (const auto& m : row.per_class) line += "," + format_mean_std(m);
  return line + "," + format_mean_std(row.macro);
}

inline nlohmann::json aggregate_json(const AggregateRow& row) {
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t c = 0; c < kNumClasses; ++c)
    per[std::string(kLabelNames[c])] = {{"mean", row.per_class[c].mean},
                                        {"std", row.per_class[c].std}};
  return {{"model", row.model},
          {"runs", row.runs},
          {"per_class_f1", per},
          {"macro_f1", {{"mean", row.macro.mean}, {"std", row.macro.std}}}};
}

}  // namespace numlesa
