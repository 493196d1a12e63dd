#pragma once

// Range checks for classified numeric values given patient context.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "numlesa/errors.hpp"
#include "numlesa/label_space.hpp"
#include "numlesa/tokenizer.hpp"

namespace numlesa {

struct PatientContext {
  std::optional<double> age_months;
  std::optional<double> weight_kg;

  void validate() const {
    if (age_months && *age_months < 0) throw ConfigError("age must be >= 0 months");
    if (weight_kg && *weight_kg <= 0) throw ConfigError("weight must be > 0 kg");
  }
};

struct HeartRateRow {
  int min_months = 0;
  std::optional<int> max_months;  // inclusive; open-ended when absent
  double bpm_lo = 0;
  double bpm_hi = 0;
  std::string label;
};

struct DiameterRow {
  double weight_kg = 0;
  double diameter_mm = 0;
};

// Age brackets resolved to months: <1, [1,11], [12,35], [36,59], [60,83],
// [84,119], >=120. The last bracket absorbs 10-year-olds.
struct ThresholdTables {
  std::vector<HeartRateRow> heart_rate{
      {0, 0, 70, 190, "< 1 month"},   {1, 11, 80, 160, "1-11 months"},
      {12, 35, 80, 130, "1-2 years"}, {36, 59, 80, 120, "3-4 years"},
      {60, 83, 75, 115, "5-6 years"}, {84, 119, 70, 110, "7-9 years"},
      {120, std::nullopt, 60, 100, "> 10 years"}};
  std::vector<DiameterRow> pulmonary_diameter{
      {3, 4.2},  {4, 5.3},   {5, 6.0},   {6, 6.7},   {7, 7.0},   {8, 7.8},
      {9, 8.2},  {10, 8.5},  {12, 9.2},  {14, 9.5},  {16, 10.2}, {18, 10.6},
      {20, 11.0}, {25, 11.7}, {30, 12.4}, {35, 12.8}};
  double spo2_min = 96;  // exclusive
  double ejection_lo = 50, ejection_hi = 70;
  double shortening_lo = 20, shortening_hi = 40;
  // Relative tolerance around the nominal diameter. Engineering default,
  // not a clinically validated value.
  double diameter_tolerance = 0.20;

  void validate() const {
    if (heart_rate.empty() || heart_rate.front().min_months != 0)
      throw ConfigError("heart-rate brackets must start at 0 months");
    for (std::size_t i = 0; i < heart_rate.size(); ++i) {
      const auto& r = heart_rate[i];
      const bool last = i + 1 == heart_rate.size();
      if (last != !r.max_months.has_value())
        throw ConfigError("only the last heart-rate bracket may be open-ended");
      if (!last && heart_rate[i + 1].min_months != *r.max_months + 1)
        throw ConfigError("heart-rate brackets must be contiguous");
      if (r.max_months && *r.max_months < r.min_months)
        throw ConfigError("heart-rate bracket with max < min");
    }
    if (pulmonary_diameter.size() < 2) throw ConfigError("diameter table needs >= 2 rows");
    for (std::size_t i = 1; i < pulmonary_diameter.size(); ++i)
      if (!(pulmonary_diameter[i].weight_kg > pulmonary_diameter[i - 1].weight_kg &&
            pulmonary_diameter[i].diameter_mm > pulmonary_diameter[i - 1].diameter_mm))
        throw ConfigError("diameter rows must be strictly increasing");
    if (diameter_tolerance < 0) throw ConfigError("diameter tolerance must be >= 0");
  }

  nlohmann::json to_json() const {
    nlohmann::json hr = nlohmann::json::array();
    for (const auto& r : heart_rate) {
      nlohmann::json row{{"age_months_min", r.min_months},
                         {"bpm_lo", r.bpm_lo},
                         {"bpm_hi", r.bpm_hi},
                         {"label", r.label}};
      row["age_months_max"] = r.max_months ? nlohmann::json(*r.max_months) : nlohmann::json();
      hr.push_back(row);
    }
    nlohmann::json pd = nlohmann::json::array();
    for (const auto& r : pulmonary_diameter)
      pd.push_back({{"weight_kg", r.weight_kg}, {"diameter_mm", r.diameter_mm}});
    return {{"heart_rate", hr},
            {"pulmonary_diameter", {{"rows", pd}, {"tolerance", diameter_tolerance}}},
            {"spo2", {{"min_exclusive", spo2_min}}},
            {"contractility",
             {{"ejection", {ejection_lo, ejection_hi}},
              {"shortening", {shortening_lo, shortening_hi}}}}};
  }

  static ThresholdTables from_json(const nlohmann::json& j) {
    ThresholdTables t;
    try {
      t.heart_rate.clear();
      for (const auto& r : j.at("heart_rate")) {
        HeartRateRow row;
        row.min_months = r.at("age_months_min").get<int>();
        if (r.contains("age_months_max") && !r.at("age_months_max").is_null())
          row.max_months = r.at("age_months_max").get<int>();
        row.bpm_lo = r.at("bpm_lo").get<double>();
        row.bpm_hi = r.at("bpm_hi").get<double>();
        row.label = r.value("label", "");
        t.heart_rate.push_back(row);
      }
      const auto& pd = j.at("pulmonary_diameter");
      t.pulmonary_diameter.clear();
      for (const auto& r : pd.at("rows"))
        t.pulmonary_diameter.push_back({r.at("weight_kg").get<double>(),
                                        r.at("diameter_mm").get<double>()});
      t.diameter_tolerance = pd.value("tolerance", t.diameter_tolerance);
      t.spo2_min = j.at("spo2").at("min_exclusive").get<double>();
      const auto& c = j.at("contractility");
      t.ejection_lo = c.at("ejection").at(0).get<double>();
      t.ejection_hi = c.at("ejection").at(1).get<double>();
      t.shortening_lo = c.at("shortening").at(0).get<double>();
      t.shortening_hi = c.at("shortening").at(1).get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("threshold tables: ") + e.what());
    }
    t.validate();
    return t;
  }

  static ThresholdTables load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open threshold tables '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("threshold tables '" + path + "': " + e.what());
    }
    return from_json(j);
  }
};

inline std::pair<double, double> heart_rate_range(double age_months,
                                                  const ThresholdTables& tables) {
  if (age_months < 0) throw ConfigError("age must be >= 0 months");
  const int months = static_cast<int>(std::floor(age_months));
  for (const auto& r : tables.heart_rate)
    if (months >= r.min_months && (!r.max_months || months <= *r.max_months))
      return {r.bpm_lo, r.bpm_hi};
  throw ConfigError("heart-rate brackets do not cover age " + std::to_string(months));
}

// Nominal diameter, linearly interpolated between table rows.
inline double pulmonary_diameter_nominal(double weight_kg, const ThresholdTables& tables) {
  const auto& rows = tables.pulmonary_diameter;
  if (!(weight_kg >= rows.front().weight_kg && weight_kg <= rows.back().weight_kg))
    throw OutOfTableRange("weight " + std::to_string(weight_kg) + " kg outside [" +
                          std::to_string(rows.front().weight_kg) + ", " +
                          std::to_string(rows.back().weight_kg) + "]");
  auto it = std::lower_bound(rows.begin(), rows.end(), weight_kg,
                             [](const DiameterRow& r, double w) { return r.weight_kg < w; });
  if (it->weight_kg == weight_kg) return it->diameter_mm;
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double t = (weight_kg - lo.weight_kg) / (hi.weight_kg - lo.weight_kg);
  return lo.diameter_mm + t * (hi.diameter_mm - lo.diameter_mm);
}

enum class Status { Normal, Critical, ExpertReview, Unknown };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Normal: return "Normal";
    case Status::Critical: return "Critical";
    case Status::ExpertReview: return "ExpertReview";
    case Status::Unknown: return "Unknown";
  }
  return "?";
}

enum class RangePolicy { Any, All, Midpoint };

inline const char* to_string(RangePolicy p) {
  switch (p) {
    case RangePolicy::Any: return "any";
    case RangePolicy::All: return "all";
    case RangePolicy::Midpoint: return "midpoint";
  }
  return "?";
}

inline std::optional<RangePolicy> parse_range_policy(std::string_view s) {
  if (s == "any") return RangePolicy::Any;
  if (s == "all") return RangePolicy::All;
  if (s == "midpoint") return RangePolicy::Midpoint;
  return std::nullopt;
}

struct AppliedRange {
  double lo = 0;
  std::optional<double> hi;
  bool lo_exclusive = false;

  bool contains(double v) const {
    if (lo_exclusive ? !(v > lo) : v < lo) return false;
    return !hi || v <= *hi;
  }
  bool operator==(const AppliedRange&) const = default;
};

struct CriticalityVerdict {
  Status status = Status::Unknown;
  std::optional<AppliedRange> applied_range;
  std::string note;
};

// Tokens around the value, used to resolve contractility measures. Distance
// is measured in tokens from the value itself.
struct ValueContext {
  std::vector<std::pair<std::string, int>> neighbors;  // (text, signed offset)

  static ValueContext around(const std::vector<Token>& tokens, std::size_t index,
                             int window = 5) {
    ValueContext c;
    const int n = static_cast<int>(tokens.size());
    const int i = static_cast<int>(index);
    for (int k = std::max(0, i - window); k <= std::min(n - 1, i + window); ++k)
      if (k != i) c.neighbors.emplace_back(tokens[static_cast<std::size_t>(k)].text, k - i);
    return c;
  }
};

enum class ContractilityMeasure { Ejection, Shortening };

inline std::optional<ContractilityMeasure> resolve_contractility(
    const ValueContext& ctx, const std::vector<double>& values) {
  const bool fr_plausible =
      !values.empty() &&
      std::all_of(values.begin(), values.end(), [](double v) { return v >= 15 && v <= 45; });
  int best_ej = 1 << 20, best_sh = 1 << 20;
  for (const auto& [text, offset] : ctx.neighbors) {
    const int dist = std::abs(offset);
    const auto low = detail::ascii_lower(text);
    if (low == "éjection" || low == "ejection" || low == "simpson" || text == "FE" ||
        text == "Éjection")
      best_ej = std::min(best_ej, dist);
    if (low == "raccourcissement" || (text == "FR" && fr_plausible))
      best_sh = std::min(best_sh, dist);
  }
  if (best_ej < best_sh) return ContractilityMeasure::Ejection;
  if (best_sh < best_ej) return ContractilityMeasure::Shortening;
  return std::nullopt;
}

namespace detail {

inline std::string format_number(double v) {
  std::string s = std::to_string(v);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

inline std::string describe(const AppliedRange& r) {
  if (!r.hi) return (r.lo_exclusive ? "> " : ">= ") + format_number(r.lo);
  return "[" + format_number(r.lo) + ", " + format_number(*r.hi) + "]";
}

inline CriticalityVerdict judge(const std::vector<double>& values, const AppliedRange& range,
                                RangePolicy policy, std::string note) {
  bool critical = false;
  if (policy == RangePolicy::Midpoint) {
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    critical = !range.contains((*mn + *mx) / 2.0);
  } else {
    std::size_t bad = 0;
    for (double v : values)
      if (!range.contains(v)) ++bad;
    critical = policy == RangePolicy::Any ? bad > 0 : bad == values.size();
  }
  std::string full = describe(range);
  if (!note.empty()) full += "; " + note;
  return {critical ? Status::Critical : Status::Normal, range, full};
}

}  // namespace detail

inline CriticalityVerdict assess(const NumericLexeme& value, ClassLabel label,
                                 const PatientContext& ctx, const ThresholdTables& tables,
                                 RangePolicy policy = RangePolicy::Any,
                                 const ValueContext& context = {}) {
  switch (label) {
    case ClassLabel::O:
      return {Status::Unknown, std::nullopt, "out of class: no range applies"};
    case ClassLabel::APGAR:
    case ClassLabel::G:
    case ClassLabel::CIA_CIV:
      return {Status::ExpertReview, std::nullopt, "no standard range; expert evaluation"};
    default:
      break;
  }
  const auto values = components(value.form);
  if (values.empty())
    return {Status::Unknown, std::nullopt, "date values carry no physiological range"};

  switch (label) {
    case ClassLabel::FC: {
      if (!ctx.age_months) return {Status::Unknown, std::nullopt, "heart rate needs patient age"};
      auto [lo, hi] = heart_rate_range(*ctx.age_months, tables);
      return detail::judge(values, {lo, hi, false}, policy, "bpm for age");
    }
    case ClassLabel::SO2:
      return detail::judge(values, {tables.spo2_min, std::nullopt, true}, policy,
                           "SpO2 must exceed " + detail::format_number(tables.spo2_min) +
                               "%; applied strictly, so a habitual baseline below it is still "
                               "flagged even where a clinician would call it expected");
    case ClassLabel::Cp: {
      auto measure = resolve_contractility(context, values);
      if (!measure)
        return {Status::ExpertReview, std::nullopt,
                "contractility measure (ejection vs shortening) unresolved"};
      if (*measure == ContractilityMeasure::Ejection)
        return detail::judge(values, {tables.ejection_lo, tables.ejection_hi, false}, policy,
                             "ejection fraction %");
      return detail::judge(values, {tables.shortening_lo, tables.shortening_hi, false}, policy,
                           "shortening fraction %");
    }
    case ClassLabel::D: {
      if (!ctx.weight_kg)
        return {Status::Unknown, std::nullopt, "diameter needs patient weight"};
      double nominal = 0;
      try {
        nominal = pulmonary_diameter_nominal(*ctx.weight_kg, tables);
      } catch (const OutOfTableRange& e) {
        return {Status::Unknown, std::nullopt, e.what()};
      }
      const double tol = tables.diameter_tolerance;
      return detail::judge(values, {nominal * (1 - tol), nominal * (1 + tol), false}, policy,
                           "nominal " + detail::format_number(nominal) + " mm +/- " +
                               detail::format_number(tol * 100) +
                               "% (non-clinical tolerance)");
    }
    default:
      return {Status::Unknown, std::nullopt, "unhandled class"};
  }
}

}  // namespace numlesa
