#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "numlesa/errors.hpp"
#include "numlesa/matrix.hpp"

namespace numlesa {

// The eight physiological classes. Indices are stable and used as model
// output columns:
//   0 O        out of class
//   1 Cp       contractility (ejection / shortening fraction)
//   2 FC       heart rate
//   3 D        pulmonary artery diameter
//   4 SO2      oxygen saturation
//   5 APGAR    APGAR score
//   6 G        ventricular gradient
//   7 CIA_CIV  atrial/ventricular septal defect size
enum class ClassLabel : int { O = 0, Cp, FC, D, SO2, APGAR, G, CIA_CIV };

inline constexpr std::size_t kNumClasses = 8;

inline constexpr std::array<ClassLabel, kNumClasses> kAllLabels{
    ClassLabel::O,   ClassLabel::Cp,    ClassLabel::FC, ClassLabel::D,
    ClassLabel::SO2, ClassLabel::APGAR, ClassLabel::G,  ClassLabel::CIA_CIV};

inline constexpr std::array<std::string_view, kNumClasses> kLabelNames{
    "O", "Cp", "FC", "D", "SO2", "APGAR", "G", "CIA_CIV"};

inline constexpr std::size_t index_of(ClassLabel l) { return static_cast<std::size_t>(l); }

inline std::string_view to_string(ClassLabel l) { return kLabelNames[index_of(l)]; }

inline ClassLabel label_from_index(std::size_t i) {
  if (i >= kNumClasses) throw IndexOutOfRange("class index " + std::to_string(i));
  return static_cast<ClassLabel>(i);
}

inline std::optional<ClassLabel> parse_label(std::string_view s) {
  if (s == "CIA-CIV" || s == "CIA/CIV") return ClassLabel::CIA_CIV;
  for (std::size_t i = 0; i < kNumClasses; ++i)
    if (kLabelNames[i] == s) return static_cast<ClassLabel>(i);
  return std::nullopt;
}

// Per-class keyword lists used to seed the label embeddings.
struct KeywordTable {
  std::array<std::vector<std::string>, kNumClasses> keywords;

  static KeywordTable defaults() {
    KeywordTable t;
    t.keywords = {{
        {"mot", "patient", "historique"},
        {"fraction", "ejection", "raccourcissement"},
        {"cardiaque", "coeur", "frequence"},
        {"diamètre", "pulmonaire", "artère"},
        {"oxygène", "O2", "sat"},
        {"apgar", "minute", "nombre"},
        {"gradient", "pulmonaire", "ventricule"},
        {"cia", "civ", "inter"},
    }};
    return t;
  }

  const std::vector<std::string>& of(ClassLabel l) const { return keywords[index_of(l)]; }

  void validate() const {
    for (std::size_t i = 0; i < kNumClasses; ++i)
      if (keywords[i].empty())
        throw ConfigError("keyword table: class " + std::string(kLabelNames[i]) +
                          " has no keywords");
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < kNumClasses; ++i) j[std::string(kLabelNames[i])] = keywords[i];
    return j;
  }

  // Classes missing from the document keep their defaults.
  static KeywordTable from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("keyword table must be a JSON object");
    KeywordTable t = defaults();
    for (auto it = j.begin(); it != j.end(); ++it) {
      auto label = parse_label(it.key());
      if (!label) throw ConfigError("keyword table: unknown class '" + it.key() + "'");
      t.keywords[index_of(*label)] = it.value().get<std::vector<std::string>>();
    }
    t.validate();
    return t;
  }
};

using EmbedFn = std::function<std::vector<double>(const std::string&)>;

// Row i is the mean of the embeddings of class i's keywords. Shape is
// always (8, dim).
inline Matrix build_label_matrix(const KeywordTable& keywords, const EmbedFn& embed,
                                 std::size_t dim) {
  keywords.validate();
  Matrix xl(kNumClasses, dim);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& words = keywords.keywords[c];
    for (const auto& w : words) {
      const auto e = embed(w);
      if (e.size() != dim)
        throw DimensionMismatch("embedding of '" + w + "' has length " +
                                std::to_string(e.size()) + ", expected " + std::to_string(dim));
      for (std::size_t k = 0; k < dim; ++k) xl(c, k) += e[k];
    }
    const double inv = 1.0 / static_cast<double>(words.size());
    for (std::size_t k = 0; k < dim; ++k) xl(c, k) *= inv;
  }
  if (!xl.all_finite()) throw NumericalError("label matrix has non-finite entries");
  return xl;
}

}  // namespace numlesa
