#pragma once

// Annotated notes, their JSONL interchange format, a synthetic generator of
// French clinical notes, and corpus validation.
//
// JSONL record (one per line, offsets are UTF-8 byte offsets):
//   {"text": "...", "entities": [[start, end, "SO2"], ...],
//    "meta": {"age_months": 24, "weight_kg": 12.0}}

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "numlesa/criticality.hpp"
#include "numlesa/errors.hpp"
#include "numlesa/label_space.hpp"
#include "numlesa/tokenizer.hpp"

namespace numlesa {

struct Entity {
  std::size_t begin = 0;
  std::size_t end = 0;
  ClassLabel label = ClassLabel::O;
  bool operator==(const Entity&) const = default;
};

struct AnnotatedNote {
  std::string text;
  std::vector<Entity> entities;
  std::optional<PatientContext> meta;
};

inline nlohmann::json to_json(const AnnotatedNote& n) {
  nlohmann::json ents = nlohmann::json::array();
  for (const auto& e : n.entities) ents.push_back({e.begin, e.end, std::string(to_string(e.label))});
  nlohmann::json j{{"text", n.text}, {"entities", ents}};
  if (n.meta) {
    nlohmann::json m = nlohmann::json::object();
    if (n.meta->age_months) m["age_months"] = *n.meta->age_months;
    if (n.meta->weight_kg) m["weight_kg"] = *n.meta->weight_kg;
    j["meta"] = m;
  }
  return j;
}

inline AnnotatedNote note_from_json(const nlohmann::json& j) {
  AnnotatedNote n;
  try {
    n.text = j.at("text").get<std::string>();
    for (const auto& e : j.value("entities", nlohmann::json::array())) {
      const auto name = e.at(2).get<std::string>();
      auto label = parse_label(name);
      if (!label) throw FormatError("unknown class label '" + name + "'");
      n.entities.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), *label});
    }
    if (j.contains("meta") && j.at("meta").is_object()) {
      PatientContext ctx;
      const auto& m = j.at("meta");
      if (m.contains("age_months") && !m.at("age_months").is_null())
        ctx.age_months = m.at("age_months").get<double>();
      if (m.contains("weight_kg") && !m.at("weight_kg").is_null())
        ctx.weight_kg = m.at("weight_kg").get<double>();
      n.meta = ctx;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("note record: ") + e.what());
  }
  return n;
}

inline void write_jsonl(std::ostream& out, const std::vector<AnnotatedNote>& notes) {
  for (const auto& n : notes) out << to_json(n).dump() << '\n';
}

inline std::vector<AnnotatedNote> read_jsonl(std::istream& in) {
  std::vector<AnnotatedNote> notes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      notes.push_back(note_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return notes;
}

inline std::vector<AnnotatedNote> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open corpus '" + path + "'");
  return read_jsonl(in);
}

inline void save_corpus(const std::string& path, const std::vector<AnnotatedNote>& notes) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write corpus '" + path + "'");
  write_jsonl(out, notes);
}

// Per-token gold labels: entity tokens carry their class, everything else O.
// Throws TemplateError when an entity does not cover exactly one Quant token.
inline std::vector<ClassLabel> token_labels(const AnnotatedNote& note,
                                            const std::vector<Token>& tokens) {
  std::vector<ClassLabel> labels(tokens.size(), ClassLabel::O);
  for (const auto& e : note.entities) {
    auto it = std::find_if(tokens.begin(), tokens.end(), [&](const Token& t) {
      return t.span.begin == e.begin && t.span.end == e.end;
    });
    if (it == tokens.end() || it->kind != TokenKind::Quant)
      throw TemplateError("entity [" + std::to_string(e.begin) + "," + std::to_string(e.end) +
                          ") does not match a quantitative token");
    labels[static_cast<std::size_t>(it - tokens.begin())] = e.label;
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Synthetic generation

// Default weights follow the annotated class counts of the source study:
// O 27387, Cp 21, FC 80, D 57, SO2 143, APGAR 130, G 41, CIA_CIV 58.
struct GenSpec {
  std::size_t note_count = 1000;
  std::array<double, kNumClasses> class_frequency{27387, 21, 80, 57, 143, 130, 41, 58};
  double mean_tokens_per_note = 28.0;
  double abbreviation_rate = 0.3;
  double typo_rate = 0.02;
  std::vector<std::string> template_pool;  // empty: every family
  std::uint64_t seed = 20240601;

  void validate() const {
    for (double w : class_frequency)
      if (!(w > 0)) throw ConfigError("class weights must be > 0");
    if (!(mean_tokens_per_note >= 8)) throw ConfigError("mean_tokens_per_note must be >= 8");
    if (abbreviation_rate < 0 || abbreviation_rate > 1 || typo_rate < 0 || typo_rate > 1)
      throw ConfigError("noise rates must lie in [0, 1]");
  }

  // Entity count per class: share of the expected token total.
  std::array<std::size_t, kNumClasses> entity_quota() const {
    const double total_w = std::accumulate(class_frequency.begin(), class_frequency.end(), 0.0);
    const double tokens = static_cast<double>(note_count) * mean_tokens_per_note;
    std::array<std::size_t, kNumClasses> q{};
    for (std::size_t c = 1; c < kNumClasses; ++c)
      q[c] = static_cast<std::size_t>(std::llround(tokens * class_frequency[c] / total_w));
    return q;
  }
};

namespace synth {

using Rng = std::mt19937_64;

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}
inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}
inline bool chance(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& xs) {
  return xs[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(xs.size()) - 1))];
}

inline std::string fixed(double v, int decimals, bool comma = false) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (comma) std::replace(s.begin(), s.end(), '.', ',');
  return s;
}

// Drops French accents from the common lowercase letters.
inline std::string strip_accents(const std::string& w) {
  static const std::vector<std::pair<std::string, std::string>> table{
      {"é", "e"}, {"è", "e"}, {"ê", "e"}, {"à", "a"}, {"â", "a"},
      {"ô", "o"}, {"î", "i"}, {"ç", "c"}, {"û", "u"}, {"É", "E"}};
  std::string out = w;
  for (const auto& [from, to] : table) {
    std::size_t pos = 0;
    while ((pos = out.find(from, pos)) != std::string::npos) {
      out.replace(pos, from.size(), to);
      pos += to.size();
    }
  }
  return out;
}

class NoteBuilder {
 public:
  NoteBuilder(Rng& rng, const GenSpec& spec) : rng_(rng), spec_(spec) {}

  // Free text; words may receive typos.
  NoteBuilder& text(const std::string& s) {
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
      if (s[i] == ' ') {
        out += ' ';
        ++i;
        continue;
      }
      std::size_t j = s.find(' ', i);
      if (j == std::string::npos) j = s.size();
      out += noisy(s.substr(i, j - i));
      i = j;
    }
    buf_ += out;
    return *this;
  }

  // Literal text, never altered.
  NoteBuilder& raw(const std::string& s) {
    buf_ += s;
    return *this;
  }

  // Picks the abbreviated form with the configured rate.
  NoteBuilder& term(const std::string& full, const std::string& abbrev) {
    return text(chance(rng_, spec_.abbreviation_rate) ? abbrev : full);
  }

  NoteBuilder& value(const std::string& v, ClassLabel label) {
    entities_.push_back({buf_.size(), buf_.size() + v.size(), label});
    buf_ += v;
    return *this;
  }

  std::string take_text() { return std::move(buf_); }
  std::vector<Entity> take_entities() { return std::move(entities_); }
  Rng& rng() { return rng_; }

 private:
  std::string noisy(const std::string& w) {
    if (w.size() < 4 || !chance(rng_, spec_.typo_rate)) return w;
    // Only touch purely alphabetic ASCII/Latin words so numbers stay intact.
    if (detail::has_digit(w)) return w;
    if (chance(rng_, 0.5)) {
      auto s = strip_accents(w);
      if (s != w) return s;
    }
    std::string s = w;
    for (int tries = 0; tries < 4; ++tries) {
      const auto k = static_cast<std::size_t>(uniform_int(rng_, 0, static_cast<int>(s.size()) - 2));
      const auto a = static_cast<unsigned char>(s[k]), b = static_cast<unsigned char>(s[k + 1]);
      if (a < 0x80 && b < 0x80 && std::isalpha(a) && std::isalpha(b)) {
        std::swap(s[k], s[k + 1]);
        return s;
      }
    }
    return w;
  }

  Rng& rng_;
  const GenSpec& spec_;
  std::string buf_;
  std::vector<Entity> entities_;
};

using Template = std::function<void(NoteBuilder&)>;

struct Family {
  std::string name;
  ClassLabel label;
  std::vector<Template> templates;
};

inline std::string range_text(Rng& rng, int lo, int hi, int max_width) {
  const int a = uniform_int(rng, lo, hi - 1);
  const int b = std::min(hi, a + uniform_int(rng, 1, max_width));
  return std::to_string(a) + "-" + std::to_string(b);
}

inline std::vector<Family> families() {
  using L = ClassLabel;
  std::vector<Family> f;

  f.push_back({"contractility", L::Cp, {
      [](NoteBuilder& b) {
        b.text("Bonne contractilité ventriculaire gauche. Simpson de ")
            .value(std::to_string(uniform_int(b.rng(), 45, 75)), L::Cp).raw("%.");
      },
      [](NoteBuilder& b) {
        b.term("fraction d'éjection", "FE").raw(" ")
            .value(std::to_string(uniform_int(b.rng(), 20, 80)), L::Cp).raw(" %.");
      },
      [](NoteBuilder& b) {
        b.text("FE (Simpson) à ").value(std::to_string(uniform_int(b.rng(), 25, 75)), L::Cp)
            .raw("%.");
      },
      [](NoteBuilder& b) {
        b.term("fraction de raccourcissement", "FR").raw(" ")
            .value(std::to_string(uniform_int(b.rng(), 15, 45)), L::Cp).raw("%.");
      },
      [](NoteBuilder& b) {
        b.text("contractilité diminuée avec FE ")
            .value(std::to_string(uniform_int(b.rng(), 20, 50)), L::Cp).raw("%.");
      },
  }});

  f.push_back({"heart_rate", L::FC, {
      [](NoteBuilder& b) {
        b.term("fréquence cardiaque", "FC").raw(" ")
            .value(std::to_string(uniform_int(b.rng(), 30, 220)), L::FC).raw(" bpm.");
      },
      [](NoteBuilder& b) {
        b.text("Brady ad ").value(std::to_string(uniform_int(b.rng(), 30, 60)), L::FC)
            .text(" au Holter.");
      },
      [](NoteBuilder& b) {
        b.text("tachycardie sinusale à ")
            .value(std::to_string(uniform_int(b.rng(), 150, 220)), L::FC).raw(" /min.");
      },
      [](NoteBuilder& b) {
        b.raw("FC ").value(range_text(b.rng(), 60, 190, 20), L::FC).text(" au repos.");
      },
      [](NoteBuilder& b) {
        b.text("rythme cardiaque régulier à ")
            .value(std::to_string(uniform_int(b.rng(), 60, 180)), L::FC).raw(" bpm.");
      },
  }});

  f.push_back({"diameter", L::D, {
      [](NoteBuilder& b) {
        b.term("diamètre de l'artère pulmonaire", "diamètre AP").raw(" ")
            .value(fixed(uniform(b.rng(), 3.0, 16.0), 1), L::D).raw(" mm.");
      },
      [](NoteBuilder& b) {
        b.text("artère pulmonaire de ")
            .value(fixed(uniform(b.rng(), 3.0, 16.0), 1, chance(b.rng(), 0.3)), L::D)
            .raw("mm.");
      },
      [](NoteBuilder& b) {
        b.text("branches pulmonaires, tronc de ")
            .value(std::to_string(uniform_int(b.rng(), 4, 16)), L::D).raw(" mm.");
      },
      [](NoteBuilder& b) {
        b.text("anneau pulmonaire mesuré à ")
            .value(fixed(uniform(b.rng(), 4.0, 14.0), 1), L::D).raw(" mm.");
      },
  }});

  f.push_back({"saturation", L::SO2, {
      [](NoteBuilder& b) {
        b.text("saturation habituelle ").value(range_text(b.rng(), 60, 99, 8), L::SO2)
            .raw(" %.");
      },
      [](NoteBuilder& b) {
        b.raw("SpO2 ").value(std::to_string(uniform_int(b.rng(), 60, 100)), L::SO2).raw("%.");
      },
      [](NoteBuilder& b) {
        b.term("saturation en oxygène", "sat").raw(" ")
            .value(std::to_string(uniform_int(b.rng(), 60, 100)), L::SO2).raw(" %.");
      },
      [](NoteBuilder& b) {
        b.text("désaturation jusqu'à ")
            .value(std::to_string(uniform_int(b.rng(), 55, 90)), L::SO2).text("% sous O2.");
      },
  }});

  f.push_back({"apgar", L::APGAR, {
      [](NoteBuilder& b) {
        auto& r = b.rng();
        b.raw("APGAR ").value(std::to_string(uniform_int(r, 3, 9)) + "-" +
                                  std::to_string(uniform_int(r, 5, 10)) + "-" +
                                  std::to_string(uniform_int(r, 6, 10)),
                              L::APGAR)
            .raw(".");
      },
      [](NoteBuilder& b) {
        auto& r = b.rng();
        b.text("Apgar ").value(std::to_string(uniform_int(r, 2, 9)) + "-" +
                                   std::to_string(uniform_int(r, 5, 10)),
                               L::APGAR)
            .raw(".");
      },
      [](NoteBuilder& b) {
        b.text("score d'Apgar à ").value(std::to_string(uniform_int(b.rng(), 1, 10)), L::APGAR)
            .text(" à une minute.");
      },
  }});

  f.push_back({"gradient", L::G, {
      [](NoteBuilder& b) {
        b.text("gradient VD-VG AP de ").value(range_text(b.rng(), 10, 90, 15), L::G)
            .raw("mmHg.");
      },
      [](NoteBuilder& b) {
        b.text("gradient max ").value(std::to_string(uniform_int(b.rng(), 5, 100)), L::G)
            .raw(" mmHg.");
      },
      [](NoteBuilder& b) {
        b.text("gradient moyen VG-Ao de ")
            .value(std::to_string(uniform_int(b.rng(), 5, 60)), L::G).raw("mmHg.");
      },
      [](NoteBuilder& b) {
        b.text("sténose pulmonaire avec gradient à ")
            .value(std::to_string(uniform_int(b.rng(), 10, 90)), L::G).raw(" mmHg.");
      },
  }});

  f.push_back({"septal_defect", L::CIA_CIV, {
      [](NoteBuilder& b) {
        b.raw("CIV ").text("périmembraneuse de ")
            .value(fixed(uniform(b.rng(), 1.0, 12.0), 1), L::CIA_CIV).raw(" mm.");
      },
      [](NoteBuilder& b) {
        b.raw("CIA ").text("ostium secundum ")
            .value(std::to_string(uniform_int(b.rng(), 2, 15)), L::CIA_CIV).raw("mm.");
      },
      [](NoteBuilder& b) {
        b.term("communication inter-ventriculaire", "CIV").text(" musculaire de ")
            .value(fixed(uniform(b.rng(), 1.0, 8.0), 1, chance(b.rng(), 0.3)), L::CIA_CIV)
            .raw(" mm.");
      },
      [](NoteBuilder& b) {
        b.text("petite CIA de ").value(std::to_string(uniform_int(b.rng(), 2, 10)), L::CIA_CIV)
            .text(" mm shunt gauche-droite.");
      },
  }});
  return f;
}

// Out-of-class filler: clinical prose, incidental quantities (labelled O),
// code numbers and units that must survive blinding.
inline std::vector<Template> filler() {
  using L = ClassLabel;
  auto date = [](Rng& r) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%02d/%02d", uniform_int(r, 1, 28), uniform_int(r, 1, 12));
    return std::string(buf);
  };
  return {
      [](NoteBuilder& b) { b.text("Heterotaxie avec isomerisme gauche."); },
      [](NoteBuilder& b) { b.text("en attente de Chx → dérivation cavo-pulmonaire."); },
      [](NoteBuilder& b) { b.text("Suivi par Dr. F."); },
      [](NoteBuilder& b) { b.text("Polysplénie Malrotation intestinale opéré."); },
      [](NoteBuilder& b) { b.text("Née à terme, grossesse et accouchement sans complication."); },
      [](NoteBuilder& b) { b.text("Bonne contractilité ventriculaire gauche qualitative."); },
      [](NoteBuilder& b) { b.text("Pas de souffle, pouls fémoraux bien perçus."); },
      [](NoteBuilder& b) { b.text("Patient connu pour cardiopathie complexe."); },
      [](NoteBuilder& b) { b.text("Historique familial non contributif."); },
      [](NoteBuilder& b) { b.text("Admis aux soins intensifs pour détresse respiratoire."); },
      [](NoteBuilder& b) { b.text("Examen neurologique normal, pupilles réactives."); },
      [](NoteBuilder& b) { b.text("Plan : poursuivre diurétiques et réévaluer demain."); },
      [](NoteBuilder& b) { b.text("Parents informés et en accord avec le plan."); },
      [](NoteBuilder& b) { b.text("Pas d'épanchement péricardique."); },
      [](NoteBuilder& b) { b.text("Fonction ventriculaire droite préservée."); },
      [date](NoteBuilder& b) {
        b.text("Écho cardiaque (").value(date(b.rng()), L::O).raw("):");
      },
      [date](NoteBuilder& b) {
        b.value(date(b.rng()), L::O).text(": échographie de contrôle.");
      },
      [](NoteBuilder& b) {
        b.raw("PN ").value(fixed(uniform(b.rng(), 1.8, 4.5), 2, chance(b.rng(), 0.4)), L::O)
            .raw(" Kg.");
      },
      [](NoteBuilder& b) {
        b.text("poids actuel ").value(fixed(uniform(b.rng(), 3.0, 40.0), 1), L::O).raw(" kg.");
      },
      [](NoteBuilder& b) {
        b.raw("FR ").value(std::to_string(uniform_int(b.rng(), 15, 60)), L::O).text(" /min.");
      },
      [](NoteBuilder& b) {
        b.text("né à ").value(std::to_string(uniform_int(b.rng(), 26, 41)), L::O)
            .text(" semaines d'aménorrhée.");
      },
      [](NoteBuilder& b) {
        b.text("température ").value(fixed(uniform(b.rng(), 36.0, 40.0), 1), L::O).raw(".");
      },
      [](NoteBuilder& b) {
        b.text("furosémide ").value(std::to_string(uniform_int(b.rng(), 1, 4)), L::O)
            .text(" mg/kg/jour.");
      },
      [](NoteBuilder& b) {
        b.text("âgé de ").value(std::to_string(uniform_int(b.rng(), 2, 17)), L::O)
            .text(" ans.");
      },
      [](NoteBuilder& b) {
        b.text("Hb ").value(std::to_string(uniform_int(b.rng(), 80, 160)), L::O).text(" g/L.");
      },
      [](NoteBuilder& b) {
        b.value(std::to_string(uniform_int(b.rng(), 1, 5)), L::O)
            .text(" épisodes de quasi-malaise cette semaine.");
      },
      [](NoteBuilder& b) {
        b.text("taille ").value(std::to_string(uniform_int(b.rng(), 45, 170)), L::O)
            .raw(" cm.");
      },
      [](NoteBuilder& b) {
        b.raw("TA ").raw(std::to_string(uniform_int(b.rng(), 70, 130)) + "/" +
                         std::to_string(uniform_int(b.rng(), 35, 80)))
            .text(" au brassard.");
      },
      [](NoteBuilder& b) { b.text("Syndrome de délétion ").raw("22q11.").text(" connu."); },
      [](NoteBuilder& b) { b.text("Mère ").raw("G1P3").text(", sérologies négatives."); },
      [](NoteBuilder& b) { b.raw("B1B2").text(" bien frappés, pas de galop."); },
      [](NoteBuilder& b) { b.text("Trisomie 21 connue."); },
      [](NoteBuilder& b) {
        b.text("épanchement pleural estimé à ")
            .value(std::to_string(uniform_int(b.rng(), 5, 60)), L::O).raw(" cm3.");
      },
      [](NoteBuilder& b) {
        b.text("surface corporelle ").value(fixed(uniform(b.rng(), 0.2, 1.8), 2), L::O)
            .raw(" m2.");
      },
  };
}

inline std::size_t count_tokens(const std::string& s) { return tokenize(s).size(); }

}  // namespace synth

// Deterministic in spec.seed. Entity quotas are spread over notes with a
// seed-derived RNG; each note's content uses its own RNG seeded from
// (seed, note index).
inline std::vector<AnnotatedNote> generate(const GenSpec& spec) {
  using namespace synth;
  spec.validate();
  std::vector<AnnotatedNote> notes;
  if (spec.note_count == 0) return notes;

  auto fams = families();
  if (!spec.template_pool.empty()) {
    for (const auto& name : spec.template_pool)
      if (std::none_of(fams.begin(), fams.end(), [&](const Family& f) { return f.name == name; }))
        throw ConfigError("unknown template family '" + name + "'");
  }
  const auto fill = filler();

  // Which class entities land in which note.
  std::vector<std::vector<ClassLabel>> planned(spec.note_count);
  Rng plan_rng(mix(spec.seed, 0xC1A55ULL));
  const auto quota = spec.entity_quota();
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    const auto& fam = fams[c - 1];
    const bool enabled =
        spec.template_pool.empty() ||
        std::find(spec.template_pool.begin(), spec.template_pool.end(), fam.name) !=
            spec.template_pool.end();
    if (!enabled) continue;
    std::uniform_int_distribution<std::size_t> pick_note(0, spec.note_count - 1);
    for (std::size_t k = 0; k < quota[c]; ++k)
      planned[pick_note(plan_rng)].push_back(label_from_index(c));
  }

  notes.reserve(spec.note_count);
  for (std::size_t i = 0; i < spec.note_count; ++i) {
    Rng rng(mix(spec.seed, i + 1));
    const double sd = spec.mean_tokens_per_note * 0.25;
    const auto target = static_cast<std::size_t>(std::max(
        6.0, std::round(std::normal_distribution<double>(spec.mean_tokens_per_note, sd)(rng))));

    struct Sentence {
      std::string text;
      std::vector<Entity> entities;
      std::size_t tokens = 0;
    };
    std::vector<Sentence> sentences;
    std::size_t tokens = 0;
    auto render_one = [&](const Template& t) {
      NoteBuilder b(rng, spec);
      t(b);
      Sentence s{b.take_text(), b.take_entities(), 0};
      s.tokens = count_tokens(s.text);
      return s;
    };

    for (ClassLabel label : planned[i]) {
      const auto& fam = fams[index_of(label) - 1];
      auto s = render_one(pick(rng, fam.templates));
      tokens += s.tokens;
      sentences.push_back(std::move(s));
    }
    while (tokens < target) {
      auto s = render_one(pick(rng, fill));
      if (tokens + s.tokens > target && (tokens + s.tokens - target) * 2 > s.tokens &&
          !sentences.empty())
        break;
      tokens += s.tokens;
      sentences.push_back(std::move(s));
    }
    std::shuffle(sentences.begin(), sentences.end(), rng);

    AnnotatedNote note;
    for (auto& s : sentences) {
      if (!note.text.empty()) note.text += ' ';
      const std::size_t offset = note.text.size();
      for (auto e : s.entities) {
        e.begin += offset;
        e.end += offset;
        note.entities.push_back(e);
      }
      note.text += s.text;
    }
    PatientContext ctx;
    const double age = std::floor(uniform(rng, 0.0, 216.0));
    ctx.age_months = age;
    ctx.weight_kg = std::round((3.3 + age * 0.23 + uniform(rng, -1.0, 1.0)) * 10.0) / 10.0;
    note.meta = ctx;

    // Generator contract: every entity aligns with exactly one Quant token.
    (void)token_labels(note, tokenize(note.text));
    notes.push_back(std::move(note));
  }
  return notes;
}

// ---------------------------------------------------------------------------
// Validation

struct CorpusIssue {
  std::size_t note = 0;
  std::string kind;  // Overlap | Misalignment | OutOfBounds | Parse
  std::string detail;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct CorpusReport {
  std::size_t notes = 0;
  std::size_t tokens = 0;
  std::array<std::size_t, kNumClasses> entity_counts{};
  std::array<std::size_t, kNumClasses> token_label_counts{};
  std::array<std::size_t, 4> form_counts{};  // Scalar, Range, Sequence, Date
  std::size_t code_tokens = 0;
  std::vector<CorpusIssue> issues;

  bool ok() const { return issues.empty(); }

  nlohmann::json to_json() const {
    nlohmann::json ents = nlohmann::json::object(), toks = nlohmann::json::object();
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      ents[std::string(kLabelNames[c])] = entity_counts[c];
      toks[std::string(kLabelNames[c])] = token_label_counts[c];
    }
    nlohmann::json issues_j = nlohmann::json::array();
    for (const auto& i : issues)
      issues_j.push_back({{"note", i.note}, {"kind", i.kind}, {"detail", i.detail},
                          {"begin", i.begin}, {"end", i.end}});
    return {{"notes", notes},
            {"tokens", tokens},
            {"entity_counts", ents},
            {"token_label_counts", toks},
            {"forms",
             {{"Scalar", form_counts[0]}, {"Range", form_counts[1]},
              {"Sequence", form_counts[2]}, {"Date", form_counts[3]}}},
            {"code_tokens", code_tokens},
            {"issues", issues_j}};
  }
};

inline CorpusReport validate_corpus(const std::vector<AnnotatedNote>& notes) {
  CorpusReport r;
  r.notes = notes.size();
  for (std::size_t n = 0; n < notes.size(); ++n) {
    const auto& note = notes[n];
    const auto tokens = tokenize(note.text);
    r.tokens += tokens.size();
    for (const auto& t : tokens) {
      if (t.kind == TokenKind::Code) ++r.code_tokens;
      if (t.kind == TokenKind::Quant) ++r.form_counts[parse_numeric(t).form.index()];
    }
    std::vector<ClassLabel> labels(tokens.size(), ClassLabel::O);

    auto sorted = note.entities;
    std::sort(sorted.begin(), sorted.end(),
              [](const Entity& a, const Entity& b) { return a.begin < b.begin; });
    for (std::size_t k = 1; k < sorted.size(); ++k)
      if (sorted[k].begin < sorted[k - 1].end)
        r.issues.push_back({n, "Overlap",
                            "entities overlap at byte " + std::to_string(sorted[k].begin),
                            sorted[k].begin, sorted[k - 1].end});

    for (const auto& e : note.entities) {
      ++r.entity_counts[index_of(e.label)];
      if (e.end > note.text.size() || e.begin >= e.end) {
        r.issues.push_back({n, "OutOfBounds", "span outside text", e.begin, e.end});
        continue;
      }
      auto it = std::find_if(tokens.begin(), tokens.end(), [&](const Token& t) {
        return t.span.begin == e.begin && t.span.end == e.end;
      });
      if (it == tokens.end() || it->kind != TokenKind::Quant) {
        r.issues.push_back({n, "Misalignment",
                            "span '" + note.text.substr(e.begin, e.end - e.begin) +
                                "' is not a single quantitative token",
                            e.begin, e.end});
        continue;
      }
      labels[static_cast<std::size_t>(it - tokens.begin())] = e.label;
    }
    for (auto l : labels) ++r.token_label_counts[index_of(l)];
  }
  return r;
}

// Parses and validates a JSONL stream; malformed lines become issues.
inline CorpusReport validate_jsonl(std::istream& in) {
  std::vector<AnnotatedNote> notes;
  std::vector<CorpusIssue> parse_issues;
  std::string line;
  std::size_t idx = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      notes.push_back(note_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      parse_issues.push_back({idx, "Parse", e.what(), 0, 0});
      notes.push_back({});
    }
    ++idx;
  }
  auto r = validate_corpus(notes);
  r.issues.insert(r.issues.begin(), parse_issues.begin(), parse_issues.end());
  return r;
}

}  // namespace numlesa
