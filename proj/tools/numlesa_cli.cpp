// numlesa: command-line front end for corpus generation, training,
// prediction, evaluation and criticality assessment.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "numlesa/config.hpp"
#include "numlesa/pipeline.hpp"

using namespace numlesa;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kRuntime = 4 };

int exit_code_for(const std::string& kind) {
  if (kind == "ConfigError") return kConfig;
  if (kind == "FormatError" || kind == "TemplateError" || kind == "OutOfVocab" ||
      kind == "SequenceTooLong" || kind == "LengthMismatch" || kind == "MalformedNumeric" ||
      kind == "IndexOutOfRange" || kind == "EmptyDataset" || kind == "OutOfTableRange")
    return kData;
  return kRuntime;
}

void report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
}

void log(const std::string& msg) { std::cerr << "[numlesa] " << msg << '\n'; }

// One input record: a note plus whatever else the line carried.
struct Record {
  AnnotatedNote note;
  json raw = json::object();
};

std::vector<Record> read_records(const std::string& path) {
  std::ifstream file;
  std::istream* in = &std::cin;
  if (path != "-") {
    file.open(path);
    if (!file) throw FormatError("cannot open input '" + path + "'");
    in = &file;
  }
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(*in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    Record r;
    if (line[first] == '{') {
      try {
        r.raw = json::parse(line);
        r.note = note_from_json(r.raw);
      } catch (const json::exception& e) {
        throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
      } catch (const FormatError& e) {
        throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
      }
    } else {
      if (line.back() == '\r') line.pop_back();
      r.note.text = line;
      r.raw = {{"text", line}};
    }
    out.push_back(std::move(r));
  }
  return out;
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (path == "-" || path.empty()) return;
    file_ = std::make_unique<std::ofstream>(path);
    if (!*file_) throw FormatError("cannot write '" + path + "'");
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

PatientContext patient_context(const AnnotatedNote& note, std::optional<double> age,
                               std::optional<double> weight, std::size_t index) {
  PatientContext ctx = note.meta.value_or(PatientContext{});
  auto take = [&](std::optional<double>& slot, std::optional<double> flag, const char* name) {
    if (!flag) return;
    if (slot && *slot != *flag)
      log("record " + std::to_string(index) + ": --" + name + " overrides note meta (" +
          detail::format_number(*slot) + " -> " + detail::format_number(*flag) + ")");
    slot = flag;
  };
  take(ctx.age_months, age, "age-months");
  take(ctx.weight_kg, weight, "weight-kg");
  ctx.validate();
  return ctx;
}

json value_rows_json(const std::vector<ValueRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) arr.push_back(row_json(r));
  return arr;
}

void write_rows(std::ostream& out, const std::string& format, std::size_t note,
                const std::vector<ValueRow>& rows, bool multi) {
  if (format == "csv") {
    out << rows_csv(note, rows);
  } else if (format == "table") {
    if (multi) out << "record " << note << '\n';
    out << rows_table(rows);
    if (multi) out << '\n';
  } else {
    for (const auto& r : rows) {
      json j = row_json(r);
      j["record"] = note;
      out << j.dump() << '\n';
    }
  }
}

std::vector<AnnotatedNote> corpus_or_generate(const std::string& path, const RunConfig& cfg) {
  if (!path.empty()) return load_corpus(path);
  log("no corpus given; generating " + std::to_string(cfg.corpus.note_count) + " notes");
  return generate(cfg.corpus);
}

std::string model_name(bool lesa, bool blinded) {
  return std::string(lesa ? "lesa" : "plain") + (blinded ? "-blind" : "-raw");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical value classification and criticality assessment for clinical notes"};
  app.require_subcommand(1);
  std::optional<std::string> config_path;
  bool print_config = false;
  app.add_option("--config", config_path,
                 std::string("JSON run configuration (default: $") + kConfigEnvVar + ")");
  app.add_flag("--print-config", print_config, "Print the resolved configuration and exit");

  // Overrides shared by several subcommands.
  std::optional<std::size_t> notes_override;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> seeds_count;
  std::optional<bool> blind_flag, lesa_flag;
  std::optional<std::string> policy_flag, thresholds_flag;
  std::optional<double> age_months, weight_kg;
  std::optional<double> lr_flag;
  std::optional<std::size_t> epochs_flag;

  std::string input = "-", output = "-", corpus_path, model_path, out_dir, format = "jsonl",
              split_part = "test", name_flag, report_path, text_flag;
  std::size_t layer = 0, head = 0, note_index = 0;
  std::vector<std::string> metrics_files;

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic annotated corpus (JSONL)");
  gen->add_option("--notes", notes_override, "Number of notes");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("-o,--output", output, "Output JSONL (- for stdout)");
  gen->add_option("--report", report_path, "Write the corpus validation report (JSON)");

  auto* tok = app.add_subcommand("tokenize", "Tokenize notes; one JSON line per note");
  tok->add_option("-i,--input", input, "Notes: JSONL records or one plain-text note per line");
  tok->add_option("-o,--output", output, "Output (- for stdout)");

  auto* bl = app.add_subcommand("blind", "Replace quantitative numbers with the placeholder");
  bl->add_option("-i,--input", input, "Notes: JSONL records or plain text lines");
  bl->add_option("-o,--output", output, "Output JSONL (- for stdout)");

  auto* tr = app.add_subcommand("train", "Train the token classifier over one or more seeds");
  tr->add_option("--corpus", corpus_path, "Annotated JSONL corpus (default: generate)");
  tr->add_option("--seeds", seeds_count, "Train seeds 1..N");
  tr->add_flag("--blind,!--no-blind", blind_flag, "Train on blinded text");
  tr->add_flag("--lesa,!--no-lesa", lesa_flag, "Use label-embedded attention");
  tr->add_option("--lr", lr_flag, "Learning rate");
  tr->add_option("--max-epochs", epochs_flag, "Epoch cap");
  tr->add_option("--name", name_flag, "Configuration name used in metrics");
  tr->add_option("--out", out_dir, "Output directory")->required();

  auto* pr = app.add_subcommand("predict", "Classify the numerical values of notes");
  pr->add_option("--model", model_path, "Checkpoint")->required();
  pr->add_option("-i,--input", input, "Notes: JSONL records or plain text lines");
  pr->add_option("-o,--output", output, "Output (- for stdout)");
  pr->add_option("--format", format, "jsonl|table|csv")
      ->check(CLI::IsMember({"jsonl", "table", "csv"}));

  auto* ev = app.add_subcommand("eval", "Per-class and macro F1 of a checkpoint");
  ev->add_option("--model", model_path, "Checkpoint")->required();
  ev->add_option("--corpus", corpus_path, "Annotated JSONL corpus")->required();
  ev->add_option("--split", split_part, "all|train|val|test")
      ->check(CLI::IsMember({"all", "train", "val", "test"}));
  ev->add_option("--name", name_flag, "Configuration name used in metrics");
  ev->add_option("-o,--output", output, "Output JSON (- for stdout)");

  auto* cr = app.add_subcommand("criticality", "Assess classified values against reference ranges");
  cr->add_option("-i,--input", input,
                 "Predictions from `predict`, annotated notes (gold labels) or plain text with --model");
  cr->add_option("--model", model_path, "Classify with this checkpoint instead of reading labels");
  cr->add_option("-o,--output", output, "Output (- for stdout)");
  cr->add_option("--format", format, "jsonl|table|csv")
      ->check(CLI::IsMember({"jsonl", "table", "csv"}));
  cr->add_option("--range-policy", policy_flag, "any|all|midpoint")
      ->check(CLI::IsMember({"any", "all", "midpoint"}));
  cr->add_option("--thresholds", thresholds_flag, "Threshold tables JSON");
  cr->add_option("--age-months", age_months, "Patient age; wins over note meta");
  cr->add_option("--weight-kg", weight_kg, "Patient weight; wins over note meta");

  auto* at = app.add_subcommand("attn-dump", "Export one attention head as CSV");
  at->add_option("--model", model_path, "Checkpoint")->required();
  at->add_option("--text", text_flag, "Note text (otherwise read from --input)");
  at->add_option("-i,--input", input, "Notes file");
  at->add_option("--note", note_index, "Note index within --input");
  at->add_option("--layer", layer, "Layer index");
  at->add_option("--head", head, "Head index");
  at->add_option("-o,--output", output, "Output CSV (- for stdout)");

  auto* rp = app.add_subcommand("report", "Aggregate per-seed metrics into mean ± std rows");
  rp->add_option("metrics", metrics_files, "Metrics JSONL files written by train")->required();
  rp->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
  rp->add_option("-o,--output", output, "Output (- for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("UsageError", e.what(), kConfig);
    return kConfig;
  }
  if (rp->parsed() && format == "jsonl") format = "csv";

  try {
    RunConfig cfg = RunConfig::resolve(config_path);
    if (notes_override) cfg.corpus.note_count = *notes_override;
    if (gen_seed) cfg.corpus.seed = *gen_seed;
    if (seeds_count) {
      if (*seeds_count == 0) throw ConfigError("--seeds must be >= 1");
      cfg.train.seeds.clear();
      for (std::uint64_t s = 1; s <= *seeds_count; ++s) cfg.train.seeds.push_back(s);
    }
    if (blind_flag) cfg.blinded = *blind_flag;
    if (lesa_flag) cfg.model.lesa = *lesa_flag;
    if (lr_flag) cfg.train.learning_rate = *lr_flag;
    if (epochs_flag) cfg.train.max_epochs = *epochs_flag;
    if (thresholds_flag) cfg.thresholds_path = *thresholds_flag;
    if (policy_flag) cfg.range_policy = *parse_range_policy(*policy_flag);
    cfg.validate();
    if (print_config) {
      std::cout << cfg.to_json().dump(2) << '\n';
      return kOk;
    }

    if (gen->parsed()) {
      const auto notes = generate(cfg.corpus);
      Output out(output);
      write_jsonl(out.stream(), notes);
      const auto rep = validate_corpus(notes);
      if (!report_path.empty()) {
        Output r(report_path);
        r.stream() << rep.to_json().dump(2) << '\n';
      }
      log("generated " + std::to_string(notes.size()) + " notes, " +
          std::to_string(rep.issues.size()) + " issues");
      return kOk;
    }

    if (tok->parsed()) {
      Output out(output);
      std::size_t i = 0;
      for (const auto& r : read_records(input)) {
        json toks = json::array();
        for (const auto& t : tokenize(r.note.text))
          toks.push_back({{"text", t.text}, {"kind", to_string(t.kind)},
                          {"start", t.span.begin}, {"end", t.span.end}});
        out.stream() << json{{"record", i++}, {"tokens", toks}}.dump() << '\n';
      }
      return kOk;
    }

    if (bl->parsed()) {
      // Records that were already blinded keep their alignment, so blinding
      // a blinded file reproduces it byte for byte.
      Output out(output);
      for (const auto& r : read_records(input)) {
        const auto tokens = tokenize(r.note.text);
        const auto b = blind(tokens);
        json rec = r.raw;
        rec["text"] = render(r.note.text, b.tokens);
        if (!r.note.entities.empty()) {
          json labels = json::array();
          for (auto l : token_labels(r.note, tokens)) labels.push_back(std::string(to_string(l)));
          rec["token_labels"] = labels;
          rec.erase("entities");
        }
        json align = rec.value("alignment", json::array());
        for (const auto& a : b.alignment)
          align.push_back({{"index", a.blinded_index},
                           {"raw", a.lexeme.raw},
                           {"form", form_name(a.lexeme.form)},
                           {"start", a.original_span.begin},
                           {"end", a.original_span.end}});
        rec["alignment"] = align;
        out.stream() << rec.dump() << '\n';
      }
      return kOk;
    }

    if (tr->parsed()) {
      const auto notes = corpus_or_generate(corpus_path, cfg);
      const auto split = stratified_split(notes, cfg.train.split, cfg.split_seed);
      for (const auto& w : split.warnings)
        log("split warning " + w.kind + ": " + std::string(to_string(w.label)) + " has " +
            std::to_string(w.occurrences) + " occurrences; kept in train");
      ExperimentSpec spec;
      spec.name = name_flag.empty() ? model_name(cfg.model.lesa, cfg.blinded) : name_flag;
      spec.model = cfg.model;
      spec.train = cfg.train;
      spec.blinded = cfg.blinded;
      spec.keywords = cfg.keywords();
      std::filesystem::create_directories(out_dir);
      const auto base = std::filesystem::path(out_dir) / spec.name;
      std::ofstream metrics(base.string() + "_metrics.jsonl");
      if (!metrics) throw FormatError("cannot write metrics under " + out_dir);
      {
        std::ofstream cfg_out(base.string() + "_config.json");
        cfg_out << cfg.to_json().dump(2) << '\n';
      }
      for (auto seed : cfg.train.seeds) {
        const auto stem = base.string() + "_seed" + std::to_string(seed);
        std::ofstream hist(stem + "_history.csv");
        hist << history_csv_header() << '\n';
        const auto t0 = std::chrono::steady_clock::now();
        auto outcome = run_seed(notes, split, spec, seed, [&](const EpochRecord& r) {
          hist << history_csv_line(r) << '\n';
        });
        const double sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        save_checkpoint(outcome.model, stem + ".ckpt.json");
        metrics << outcome.test.to_json().dump() << '\n';
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s seed %llu: test macro F1 %.4f, best epoch %zu, %.1f s",
                      spec.name.c_str(), static_cast<unsigned long long>(seed),
                      outcome.test.macro, outcome.result.best_epoch, sec);
        log(buf);
      }
      return kOk;
    }

    if (pr->parsed()) {
      const auto model = load_checkpoint(model_path);
      Output out(output);
      const auto records = read_records(input);
      if (format == "csv") out.stream() << rows_csv_header() << '\n';
      for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& note = records[i].note;
        const auto tokens = tokenize(note.text);
        const auto rows = value_rows(tokens, predict_tokens(model, tokens));
        if (format == "jsonl") {
          json rec{{"record", i}, {"text", note.text}, {"values", value_rows_json(rows)}};
          if (records[i].raw.contains("meta")) rec["meta"] = records[i].raw.at("meta");
          out.stream() << rec.dump() << '\n';
        } else {
          write_rows(out.stream(), format, i, rows, records.size() > 1);
        }
      }
      return kOk;
    }

    if (ev->parsed()) {
      const auto model = load_checkpoint(model_path);
      const auto notes = load_corpus(corpus_path);
      std::vector<std::size_t> which;
      if (split_part == "all") {
        for (std::size_t i = 0; i < notes.size(); ++i) which.push_back(i);
      } else {
        const auto split = stratified_split(notes, cfg.train.split, cfg.split_seed);
        which = split_part == "train" ? split.train()
                : split_part == "val" ? split.val()
                                      : split.test();
      }
      const auto data = encode_examples(notes, which, model.vocab, model.blinded);
      const auto f1 = f1_per_class(evaluate(model, data));
      RunMetrics m;
      m.model = name_flag.empty() ? model_name(model.config.lesa, model.blinded) : name_flag;
      m.seed = model.config.seed;
      m.f1 = f1.f1;
      m.macro = macro_f1(f1.f1);
      json j = m.to_json();
      json degenerate = json::array();
      for (auto l : f1.degenerate) degenerate.push_back(std::string(to_string(l)));
      j["degenerate"] = degenerate;
      j["split"] = split_part;
      j["notes"] = which.size();
      Output out(output);
      out.stream() << j.dump() << '\n';
      return kOk;
    }

    if (cr->parsed()) {
      const auto tables = cfg.tables();
      std::optional<TokenClassifier> model;
      if (!model_path.empty()) model = load_checkpoint(model_path);
      const auto records = read_records(input);
      Output out(output);
      if (format == "csv") out.stream() << rows_csv_header() << '\n';
      for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        const auto tokens = tokenize(rec.note.text);
        std::vector<ValueRow> rows;
        if (model) {
          rows = value_rows(tokens, predict_tokens(*model, tokens));
        } else if (rec.raw.contains("values")) {
          for (const auto& v : rec.raw.at("values")) rows.push_back(row_from_json(v));
          bind_rows(rows, tokens);
        } else {
          rows = value_rows(tokens, token_labels(rec.note, tokens));
        }
        const std::size_t note_id = rec.raw.value("record", i);
        assess_rows(rows, tokens, patient_context(rec.note, age_months, weight_kg, note_id),
                    tables, cfg.range_policy);
        write_rows(out.stream(), format, note_id, rows, records.size() > 1);
      }
      return kOk;
    }

    if (at->parsed()) {
      const auto model = load_checkpoint(model_path);
      std::string text = text_flag;
      if (text.empty()) {
        const auto records = read_records(input);
        if (note_index >= records.size())
          throw IndexOutOfRange("note " + std::to_string(note_index) + " of " +
                                std::to_string(records.size()));
        text = records[note_index].note.text;
      }
      const auto tokens = tokenize(text);
      const auto inputs = model_inputs(tokens, model.blinded);
      Output out(output);
      out.stream() << export_attention(model, model.vocab.encode(inputs), inputs, layer, head);
      return kOk;
    }

    if (rp->parsed()) {
      std::map<std::string, std::vector<RunMetrics>> groups;
      std::vector<std::string> order;
      for (const auto& path : metrics_files) {
        std::ifstream in(path);
        if (!in) throw FormatError("cannot open metrics '" + path + "'");
        std::string line;
        while (std::getline(in, line)) {
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          json j;
          try {
            j = json::parse(line);
          } catch (const json::exception& e) {
            throw FormatError(path + ": " + e.what());
          }
          auto m = RunMetrics::from_json(j);
          if (!groups.count(m.model)) order.push_back(m.model);
          groups[m.model].push_back(m);
        }
      }
      if (order.empty()) throw EmptyDataset("no metrics records");
      Output out(output);
      if (format == "json") {
        json arr = json::array();
        for (const auto& name : order) arr.push_back(aggregate_json(aggregate(name, groups[name])));
        out.stream() << arr.dump(2) << '\n';
      } else {
        out.stream() << aggregate_csv_header() << '\n';
        for (const auto& name : order)
          out.stream() << aggregate_csv_line(aggregate(name, groups[name])) << '\n';
      }
      return kOk;
    }
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    report_error(e.kind(), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    report_error("RuntimeError", e.what(), kRuntime);
    return kRuntime;
  }
  return kOk;
}
