// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            all seven criteria
//   acceptance 1 3 7      a subset
//
// Exit status is 0 only if every selected criterion passes.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "numlesa/config.hpp"
#include "numlesa/pipeline.hpp"
#include "oracles.hpp"

using namespace numlesa;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

LesaParams random_params(std::mt19937_64& rng, std::size_t dm, std::size_t heads) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dm));
  return {oracle::random_matrix(rng, dm, dm, s), oracle::random_matrix(rng, dm, dm, s),
          oracle::random_matrix(rng, dm, dm, s), heads};
}

// 1 ---------------------------------------------------------------------------

Outcome lesa_math() {
  Outcome o;
  double row_err = 0, sym_err = 0, min_eig = 1e300, ablate_err = 0;
  std::size_t identity_breaks = 0, instances = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t heads = std::array<std::size_t, 3>{1, 2, 4}[seed % 3];
    const std::size_t dm = heads * 8;
    const std::size_t len = 1 + rng() % 16;
    auto p = random_params(rng, dm, heads);
    auto x = oracle::random_matrix(rng, len + 1, dm);
    auto xl = oracle::random_matrix(rng, kNumClasses, dm);
    auto act = lesa_forward(x, xl, p);
    for (const auto& h : act.head) {
      for (std::size_t i = 0; i < h.self_attn.rows(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < h.self_attn.cols(); ++j) {
          s += h.self_attn(i, j);
          sym_err = std::max(sym_err, std::abs(h.cosim(i, j) - h.cosim(j, i)));
          if (h.new_attn(i, j) != h.self_attn(i, j) + h.cosim(i, j)) ++identity_breaks;
        }
        row_err = std::max(row_err, std::abs(s - 1.0));
      }
      min_eig = std::min(min_eig, oracle::min_eigenvalue(h.cosim));
    }
    LesaOptions ablated;
    ablated.use_cosim = false;
    auto plain = lesa_forward(x, xl, p, ablated);
    ablate_err = std::max(ablate_err,
                          (plain.out - oracle::plain_attention(x, p.w_q, p.w_k, p.w_v, heads)).max_abs());
    ++instances;
  }
  o.pass = row_err <= 1e-9 && sym_err <= 1e-12 && min_eig >= -1e-10 && identity_breaks == 0 &&
           ablate_err <= 1e-12;
  o.detail = std::to_string(instances) + " instances; row-sum err " + fmt("%.1e", row_err) +
             ", CoSim asym " + fmt("%.1e", sym_err) + ", min eig " + fmt("%.2e", min_eig) +
             ", identity breaks " + std::to_string(identity_breaks) + ", ablation err " +
             fmt("%.1e", ablate_err);
  return o;
}

// 2 ---------------------------------------------------------------------------

Vocab toy_vocab() {
  Vocab v;
  for (const char* w : {"fc", "bpm", "sat", "%", "apgar", "de", "gradient", "mmhg", "."}) v.add(w);
  return v;
}

Outcome gradient_check() {
  Outcome o;
  double layer_worst = 0, model_worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    auto p = random_params(rng, 16, 2);
    auto x = oracle::random_matrix(rng, 5, 16);
    auto xl = oracle::random_matrix(rng, kNumClasses, 16);
    auto up = oracle::random_matrix(rng, 5, 16);
    auto loss = [&] {
      auto out = lesa_forward(x, xl, p).out;
      double s = 0;
      for (std::size_t i = 0; i < out.size(); ++i) s += out.data()[i] * up.data()[i];
      return s;
    };
    auto g = lesa_backward(lesa_forward(x, xl, p), p, up);
    for (auto [analytic, target] :
         {std::pair{&g.w_q, &p.w_q}, {&g.w_k, &p.w_k}, {&g.w_v, &p.w_v}, {&g.x, &x}, {&g.xl, &xl}})
      layer_worst = std::max(layer_worst, oracle::relative_error(
                                              *analytic, oracle::finite_difference(*target, loss)));
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.ffn_dim = 12;
    cfg.dropout = 0.0;
    cfg.max_sequence_length = 16;
    cfg.seed = 100 + seed;
    cfg.lesa = seed % 4 != 3;
    cfg.init_std = 0.5;
    auto m = make_model(cfg, toy_vocab());
    std::mt19937_64 rng(seed);
    std::vector<int> ids(2 + rng() % 5);
    for (auto& id : ids) id = static_cast<int>(rng() % m.vocab.size());
    std::vector<ClassLabel> labels(ids.size());
    for (auto& l : labels) l = label_from_index(rng() % kNumClasses);
    auto cache = forward(m, ids);
    Matrix dlogits;
    cross_entropy(cache.logits, labels, 1.0, dlogits);
    auto grads = zeros_like(m.params);
    backward(m, cache, dlogits, grads);
    std::vector<Matrix*> analytic;
    visit_params(grads, [&](const std::string&, Matrix& gm, bool) { analytic.push_back(&gm); });
    std::size_t k = 0;
    visit_params(m.params, [&](const std::string&, Matrix& w, bool) {
      Matrix& gm = *analytic[k++];
      auto numeric = oracle::finite_difference(w, [&] {
        Matrix unused;
        return cross_entropy(forward(m, ids).logits, labels, 1.0, unused);
      });
      model_worst = std::max(model_worst, oracle::relative_error(gm, numeric));
    });
  }
  o.pass = layer_worst <= 1e-4 && model_worst <= 1e-3;
  o.detail = "20 seeds each; worst relative error layer " + fmt("%.2e", layer_worst) +
             " (<= 1e-4), full model " + fmt("%.2e", model_worst) + " (<= 1e-3)";
  return o;
}

// 3 ---------------------------------------------------------------------------

Outcome blinding_suite() {
  Outcome o;
  std::vector<std::string> texts;
  for (const auto& n : generate(GenSpec{})) texts.push_back(n.text);
  const std::size_t generated = texts.size();
  for (const char* s :
       {"Heterotaxie avec isomerisme gauche. Écho cardiaque (14/08): gradient VD-VG AP de "
        "50-60mmHg. en attente de Chx → dérivation cavo-pulmonaire.  Suivi par Dr. F.  "
        "saturation habituelle 80-85 % Polysplénie Malrotation intestinale opéré.",
        "14/08:  Bonne contractilité ventriculaire gauche qualitative. Simpson de 65%.",
        "Brady ad 32 au Holter. écho coeur N s/p 1 épisode de quasi-noyade 07/2015.",
        "Née à terme, Grossess et accouchement sans complication PN 3.23 Kg, APGAR 8-9-9.",
        "Souffle B1B2, G1P3, délétion 22q11, surface 4 mm2 et volume 12 cm3."})
    texts.push_back(s);
  std::size_t failures = 0, quants = 0;
  for (const auto& text : texts) {
    const auto toks = tokenize(text);
    const auto b = blind(toks);
    const auto again = blind(b.tokens);
    bool ok = b.tokens.size() == toks.size() && again.tokens == b.tokens &&
              again.alignment.empty() && unblind(b) == toks;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (toks[i].kind == TokenKind::Quant) {
        ++quants;
        ok = ok && b.tokens[i].text == kDefaultPlaceholder;
      } else {
        ok = ok && b.tokens[i] == toks[i];
      }
    }
    if (!ok) ++failures;
  }
  const std::string codes = "Souffle B1B2, G1P3, délétion 22q11, surface 4 mm2 et volume 12 cm3.";
  const auto rendered = render(codes, blind(tokenize(codes)).tokens);
  std::size_t exempt = 0;
  for (const char* c : {"B1B2", "G1P3", "22q11", "mm2", "cm3"})
    if (rendered.find(c) != std::string::npos) ++exempt;
  o.pass = failures == 0 && exempt == 5 &&
           rendered == "Souffle B1B2, G1P3, délétion 22q11, surface nombre mm2 et volume nombre cm3.";
  o.detail = std::to_string(generated) + " generated notes + " +
             std::to_string(texts.size() - generated) + " reference sentences, " +
             std::to_string(quants) + " quantities; failures " + std::to_string(failures) +
             ", code exemptions " + std::to_string(exempt) + "/5";
  return o;
}

// 4 ---------------------------------------------------------------------------

// Independent verdict computed straight from the JSON document.
struct OracleVerdict {
  Status status;
  std::optional<std::pair<double, double>> range;  // [lo, hi], hi = inf for open
};

OracleVerdict oracle_verdict(const json& doc, ClassLabel label, const std::vector<double>& values,
                             std::optional<double> age, std::optional<double> weight,
                             const std::string& hint, RangePolicy policy) {
  if (label == ClassLabel::O) return {Status::Unknown, {}};
  if (label == ClassLabel::APGAR || label == ClassLabel::G || label == ClassLabel::CIA_CIV)
    return {Status::ExpertReview, {}};
  if (values.empty()) return {Status::Unknown, {}};
  double lo = 0, hi = INFINITY;
  bool lo_open = false;
  if (label == ClassLabel::FC) {
    if (!age) return {Status::Unknown, {}};
    const double m = std::floor(*age);
    for (const auto& row : doc["heart_rate"]) {
      const double a = row["age_months_min"].get<double>();
      const bool open = row["age_months_max"].is_null();
      if (m >= a && (open || m <= row["age_months_max"].get<double>())) {
        lo = row["bpm_lo"].get<double>();
        hi = row["bpm_hi"].get<double>();
      }
    }
  } else if (label == ClassLabel::SO2) {
    lo = doc["spo2"]["min_exclusive"].get<double>();
    lo_open = true;
  } else if (label == ClassLabel::Cp) {
    const bool fr_ok =
        std::all_of(values.begin(), values.end(), [](double v) { return v >= 15 && v <= 45; });
    const char* which = hint == "FE" || hint == "Simpson" || hint == "éjection" ? "ejection"
                        : hint == "raccourcissement" || (hint == "FR" && fr_ok) ? "shortening"
                                                                                : nullptr;
    if (!which) return {Status::ExpertReview, {}};
    lo = doc["contractility"][which][0].get<double>();
    hi = doc["contractility"][which][1].get<double>();
  } else if (label == ClassLabel::D) {
    if (!weight) return {Status::Unknown, {}};
    const auto& rows = doc["pulmonary_diameter"]["rows"];
    std::optional<double> nominal;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double w0 = rows[i]["weight_kg"].get<double>(), d0 = rows[i]["diameter_mm"].get<double>();
      if (*weight == w0) nominal = d0;
      if (i + 1 < rows.size()) {
        const double w1 = rows[i + 1]["weight_kg"].get<double>();
        const double d1 = rows[i + 1]["diameter_mm"].get<double>();
        if (*weight > w0 && *weight < w1) nominal = d0 + (*weight - w0) / (w1 - w0) * (d1 - d0);
      }
    }
    if (!nominal) return {Status::Unknown, {}};
    const double tol = doc["pulmonary_diameter"]["tolerance"].get<double>();
    lo = *nominal * (1 - tol);
    hi = *nominal * (1 + tol);
  }
  auto inside = [&](double v) { return (lo_open ? v > lo : v >= lo) && v <= hi; };
  bool critical = false;
  if (policy == RangePolicy::Midpoint) {
    const double mid = (*std::min_element(values.begin(), values.end()) +
                        *std::max_element(values.begin(), values.end())) / 2;
    critical = !inside(mid);
  } else {
    const auto bad = std::count_if(values.begin(), values.end(), [&](double v) { return !inside(v); });
    critical = policy == RangePolicy::Any ? bad > 0 : bad == static_cast<long>(values.size());
  }
  return {critical ? Status::Critical : Status::Normal, std::pair{lo, hi}};
}

Outcome criticality_oracle() {
  Outcome o;
  std::ifstream in(std::string(NUMLESA_DATA_DIR) + "/thresholds.json");
  const json doc = json::parse(in);
  const auto tables = ThresholdTables::from_json(doc);
  std::mt19937_64 rng(4242);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % (hi - lo + 1)); };
  std::size_t agree = 0, trials = 10000;
  std::array<std::size_t, 4> seen{};
  for (std::size_t t = 0; t < trials; ++t) {
    const auto label = label_from_index(rng() % kNumClasses);
    // Values on a half-unit grid so table boundaries are hit often.
    auto val = [&] {
      const double v = pick(0, 500) / 2.0;
      return std::pair{v, detail::format_number(v)};
    };
    std::string text;
    std::vector<double> values;
    const int shape = pick(0, 9);
    if (shape == 0) {
      text = std::to_string(pick(1, 28)) + "/" + (pick(0, 1) ? "0" : "1") + std::to_string(pick(1, 2));
    } else if (shape <= 3) {
      auto [a, as] = val();
      auto [b, bs] = val();
      text = as + "-" + bs;
      values = {a, b};
    } else {
      auto [a, as] = val();
      text = as;
      values = {a};
    }
    std::optional<double> age, weight;
    if (pick(0, 9)) age = pick(0, 9) ? pick(0, 240) : pick(0, 2400) / 10.0;
    if (pick(0, 9)) weight = pick(0, 4) ? pick(2, 40) : pick(20, 400) / 10.0;
    const std::array<const char*, 6> hints{"FE", "FR", "Simpson", "raccourcissement", "de", "éjection"};
    const std::string hint = hints[rng() % hints.size()];
    const auto policy = std::array{RangePolicy::Any, RangePolicy::All, RangePolicy::Midpoint}[rng() % 3];

    const std::string sentence = hint + " " + text + " %";
    const auto toks = tokenize(sentence);
    const auto lex = parse_numeric(toks.at(1));
    if (shape == 0) values.clear();
    PatientContext ctx;
    ctx.age_months = age;
    ctx.weight_kg = weight;
    const auto got = assess(lex, label, ctx, tables, policy, ValueContext::around(toks, 1));
    const auto want = oracle_verdict(doc, label, values, age, weight, hint, policy);
    bool ok = got.status == want.status;
    if (ok && want.range) {
      ok = got.applied_range &&
           std::abs(got.applied_range->lo - want.range->first) <= 1e-9 &&
           (got.applied_range->hi ? std::abs(*got.applied_range->hi - want.range->second) <= 1e-9
                                  : std::isinf(want.range->second));
    }
    if (ok) ++agree;
    ++seen[static_cast<std::size_t>(got.status)];
  }

  // Reference tables as published.
  const std::vector<std::array<double, 4>> hr{{0, 0, 70, 190},    {1, 11, 80, 160},
                                              {12, 35, 80, 130},  {36, 59, 80, 120},
                                              {60, 83, 75, 115},  {84, 119, 70, 110},
                                              {120, -1, 60, 100}};
  const std::vector<std::pair<double, double>> diam{
      {3, 4.2},  {4, 5.3},  {5, 6},    {6, 6.7},    {7, 7},    {8, 7.8},   {9, 8.2},   {10, 8.5},
      {12, 9.2}, {14, 9.5}, {16, 10.2}, {18, 10.6}, {20, 11}, {25, 11.7}, {30, 12.4}, {35, 12.8}};
  std::size_t table_ok = 0, table_total = 0;
  const ThresholdTables builtin;
  for (const auto* t : {&tables, &builtin}) {
    for (const auto& r : hr) {
      ++table_total;
      const auto [lo, hi] = heart_rate_range(r[0], *t);
      const auto [lo2, hi2] = heart_rate_range(r[1] < 0 ? 400 : r[1], *t);
      if (lo == r[2] && hi == r[3] && lo2 == r[2] && hi2 == r[3]) ++table_ok;
    }
    for (const auto& [w, d] : diam) {
      ++table_total;
      if (pulmonary_diameter_nominal(w, *t) == d) ++table_ok;
    }
  }
  const double interp = pulmonary_diameter_nominal(11, tables);
  o.pass = agree == trials && table_ok == table_total && std::abs(interp - 8.85) <= 1e-9;
  o.detail = std::to_string(agree) + "/" + std::to_string(trials) + " random triples agree (" +
             std::to_string(seen[0]) + " normal, " + std::to_string(seen[1]) + " critical, " +
             std::to_string(seen[2]) + " expert, " + std::to_string(seen[3]) + " unknown); " +
             std::to_string(table_ok) + "/" + std::to_string(table_total) +
             " table entries exact; 11 kg -> " + fmt("%.12g", interp) + " mm";
  return o;
}

// 5 ---------------------------------------------------------------------------

Outcome metric_oracle() {
  Outcome o;
  std::mt19937_64 rng(5);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 400;
    std::vector<ClassLabel> gold(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = label_from_index(rng() % 3 == 0 ? rng() % kNumClasses : 0);
      pred[i] = rng() % 4 == 0 ? label_from_index(rng() % kNumClasses) : gold[i];
    }
    ConfusionCounts c;
    c.add(gold, pred);
    const auto got = f1_per_class(c);
    double macro = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool g = index_of(gold[i]) == k, p = index_of(pred[i]) == k;
        tp += g && p;
        fp += !g && p;
        fn += g && !p;
      }
      const double prec = tp + fp > 0 ? tp / (tp + fp) : 0;
      const double rec = tp + fn > 0 ? tp / (tp + fn) : 0;
      const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
      macro += f1 / kNumClasses;
      worst = std::max(worst, std::abs(got.f1[k] - f1));
    }
    worst = std::max(worst, std::abs(macro_f1(got.f1) - macro));
  }
  const ClassScores model2{0.99, 0.56, 0.84, 0.92, 0.85, 0.97, 0.98, 0.99};
  const double row = macro_f1(model2);
  o.pass = worst <= 1e-12 && std::abs(row - 0.8875) <= 1e-12 && std::abs(row - 0.89) < 0.005;
  o.detail = "1000 random instances, max deviation " + fmt("%.1e", worst) +
             "; reported per-class row averages to " + fmt("%.4f", row) + " (reported 0.89)";
  return o;
}

// 6 ---------------------------------------------------------------------------

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : (xs[n / 2 - 1] + xs[n / 2]) / 2;
}

Outcome end_to_end() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg;
  const auto notes = generate(cfg.corpus);
  const auto split = stratified_split(notes, cfg.train.split, cfg.split_seed);
  auto run = [&](bool lesa, bool blinded, const std::string& name) {
    ExperimentSpec spec;
    spec.name = name;
    spec.model = cfg.model;
    spec.model.lesa = lesa;
    spec.train = cfg.train;
    spec.blinded = blinded;
    std::vector<double> macros;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto s0 = std::chrono::steady_clock::now();
      const auto out = run_seed(notes, split, spec, seed);
      macros.push_back(out.test.macro);
      std::printf("  %-11s seed %llu  test macro F1 %.4f  best epoch %zu  %.0f s\n", name.c_str(),
                  static_cast<unsigned long long>(seed), out.test.macro, out.result.best_epoch,
                  seconds_since(s0));
      std::fflush(stdout);
    }
    return macros;
  };
  const auto lesa = run(true, true, "lesa-blind");
  const auto plain = run(false, false, "plain-raw");
  const double ml = median(lesa), mp = median(plain), sec = seconds_since(t0);
  o.pass = ml >= 0.80 && ml >= mp && sec < 1800;
  o.detail = "median macro F1 LESA+blinded " + fmt("%.4f", ml) + " (>= 0.80), plain unblinded " +
             fmt("%.4f", mp) + "; " + fmt("%.0f", sec) + " s total (< 1800)";
  return o;
}

// 7 ---------------------------------------------------------------------------

Outcome goal_statement() {
  Outcome o;
  const std::string cmd = std::string("\"") + NUMLESA_CLI + "\" criticality -i \"" +
                          NUMLESA_DATA_DIR + "/goal_note.jsonl\" --format jsonl";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {false, "cannot run " + cmd};
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  std::vector<json> rows;
  std::istringstream lines(out);
  for (std::string line; std::getline(lines, line);)
    if (!line.empty()) rows.push_back(json::parse(line));
  struct Want {
    const char* value;
    const char* label;
    const char* form;
    const char* status;
  };
  const std::array<Want, 3> want{{{"14/08", "O", "Date", "Unknown"},
                                  {"50-60", "G", "Range", "ExpertReview"},
                                  {"80-85", "SO2", "Range", "Critical"}}};
  bool ok = status == 0 && rows.size() == want.size();
  std::string got;
  for (std::size_t i = 0; ok && i < want.size(); ++i) {
    const auto& r = rows[i];
    ok = r["value"] == want[i].value && r["label"] == want[i].label && r["form"] == want[i].form &&
         r["status"] == want[i].status;
    got += std::string(i ? ", " : "") + r["value"].get<std::string>() + " " +
           r["label"].get<std::string>() + (r["form"] == "Date" ? "-date " : " ") +
           r["status"].get<std::string>();
  }
  const bool documented =
      ok && rows[2]["note"].get<std::string>().find("habitual baseline") != std::string::npos;
  o.pass = ok && documented;
  o.detail = (got.empty() ? "no rows" : got) + (documented ? "; SO2 discrepancy noted" : "");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"LESA math suite", lesa_math},
      {"gradient check", gradient_check},
      {"blinding suite", blinding_suite},
      {"criticality oracle", criticality_oracle},
      {"metric oracle", metric_oracle},
      {"end-to-end desk-scale training", end_to_end},
      {"goal-statement pipeline", goal_statement},
  };
  const std::array<double, 7> limits{10, 60, 5, 5, 5, 1800, 60};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = seconds_since(t0);
    if (sec >= limits[i]) {
      o.pass = false;
      o.detail += "; over time limit";
    }
    std::printf("%s %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.c_str(), sec);
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
