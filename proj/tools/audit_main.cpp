// audit: batch political-stance auditor.
//
//   audit run      --config <file> --out <dir>
//   audit report   --run <dir> --format json|csv|svg
//   audit kappa    --labels <fileA> <fileB> [...]
//   audit classify --in <transcripts.jsonl> --classifier <spec.json> [--corpus <file>] [--out <file>]
//   audit quiz     --model <spec.json> --quiz <file> [--segments <file>]
//
// Exit codes: 0 success, 1 config error, 2 backend failure, 3 agreement gate failure.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "polaudit/audit.hpp"
#include "polaudit/error.hpp"

namespace {

using json = nlohmann::json;
using namespace polaudit;

constexpr int kExitConfig = 1;
constexpr int kExitBackend = 2;
constexpr int kExitGate = 3;

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return j;
}

// One label per line: a stance name or a TrainingCode integer. '#' starts a comment.
std::vector<StanceLabel> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open label file " + path.string());
  std::vector<StanceLabel> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    auto label = parse_stance_label(line.substr(b, e - b + 1));
    if (!label) throw ParseError("unknown label \"" + line.substr(b, e - b + 1) + "\" in " + path.string(), lineno);
    labels.push_back(*label);
  }
  return labels;
}

int cmd_run(const std::string& config_path, const std::string& out) {
  auto config = load_run_config(config_path);
  if (!out.empty()) config.output_dir = out;
  auto result = run_audit(config);
  write_run_outputs(config, result);
  std::cerr << "run " << result.report.run_id << ": " << result.backend_calls << " backend call(s), "
            << result.cache_hits << " cache hit(s), " << result.report.failures.size() << " failure(s)\n";
  std::cout << (config.output_dir / "report.json").string() << '\n';
  return 0;
}

int cmd_report(const std::string& run_dir, const std::string& format_name) {
  auto format = parse_emit_format(format_name);
  if (!format) throw ConfigError("unknown format \"" + format_name + "\"");
  auto report = read_json(std::filesystem::path(run_dir) / "report.json");
  for (const auto& p : emit(report, *format, run_dir)) std::cout << p.string() << '\n';
  return 0;
}

int cmd_kappa(const std::vector<std::string>& files) {
  if (files.size() < 2) throw ConfigError("kappa needs at least two label files");
  std::vector<std::vector<StanceLabel>> raters;
  for (const auto& f : files) raters.push_back(read_labels(f));
  std::map<RaterPair, double> kappas;
  for (std::size_t i = 0; i < files.size(); ++i)
    for (std::size_t j = i + 1; j < files.size(); ++j) kappas[{files[i], files[j]}] = cohen_kappa(raters[i], raters[j]);
  auto gate = agreement_gate(kappas);
  json out{{"threshold", gate.threshold}, {"passed", gate.passed}, {"pairs", json::array()}, {"failing", json::array()}};
  for (const auto& [pair, k] : kappas) out["pairs"].push_back({{"a", pair.first}, {"b", pair.second}, {"kappa", k}});
  for (const auto& [pair, k] : gate.failing)
    out["failing"].push_back({{"a", pair.first}, {"b", pair.second}, {"kappa", k}});
  std::cout << out.dump(2) << '\n';
  return gate.passed ? 0 : kExitGate;
}

int cmd_classify(const std::string& in, const std::string& spec_path, const std::string& corpus_path,
                 const std::string& out_path) {
  auto transcripts = read_transcripts(in);
  std::vector<Transcript> ok;
  for (auto& t : transcripts)
    if (t.ok()) ok.push_back(std::move(t));
  if (ok.empty()) throw ConfigError("no successful transcripts in " + in);
  std::shared_ptr<const Corpus> corpus;
  if (!corpus_path.empty()) corpus = std::make_shared<const Corpus>(load_corpus(corpus_path));
  auto spec_file = std::filesystem::path(spec_path);
  auto classifier = make_classifier(read_json(spec_file), corpus, spec_file.parent_path());
  std::vector<LabeledTranscript> labeled;
  if (corpus) {
    labeled = classify_batch(ok, *classifier, *corpus);
  } else {
    labeled = classify_batch(ok, *classifier, [](const Transcript& t) { return t.prompt_text; });
  }
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::binary);
    if (!file) throw Error("cannot write " + out_path);
  }
  std::ostream& out = out_path.empty() ? std::cout : file;
  for (const auto& lt : labeled) out << to_json(lt).dump() << '\n';
  return 0;
}

int cmd_quiz(const std::string& model_path, const std::string& quiz_path, const std::string& segments_path) {
  auto spec_file = std::filesystem::path(model_path);
  auto backend = make_backend(read_json(spec_file), nullptr, spec_file.parent_path());
  auto quiz = load_quiz(quiz_path);
  std::optional<SegmentMap> segments;
  if (!segments_path.empty()) segments = load_segments(segments_path);
  TranscriptStore store;
  auto result = run_quiz(*backend, quiz, segments ? &*segments : nullptr, DispatchOptions{}, store);
  std::cout << to_json(result).dump(2) << '\n';
  return result.score ? 0 : kExitBackend;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Political stance auditor for language models"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* run = app.add_subcommand("run", "Run the configured studies end to end");
  run->add_option("--config", config_path, "Run config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory (overrides output_dir)");

  std::string run_dir, format = "json";
  auto* report = app.add_subcommand("report", "Render a finished run");
  report->add_option("--run", run_dir, "Run directory containing report.json")->required();
  report->add_option("--format", format, "json | csv | svg")->check(CLI::IsMember({"json", "csv", "svg"}));

  std::vector<std::string> label_files;
  auto* kappa = app.add_subcommand("kappa", "Pairwise Cohen's kappa with the 0.8 agreement gate");
  kappa->add_option("--labels", label_files, "Label files, one label per line")->required()->expected(2, -1);

  std::string transcripts_in, classifier_spec, corpus_path, labels_out;
  auto* classify = app.add_subcommand("classify", "Label transcripts with a classifier");
  classify->add_option("--in", transcripts_in, "Transcripts (JSONL)")->required();
  classify->add_option("--classifier", classifier_spec, "Classifier spec (JSON)")->required();
  classify->add_option("--corpus", corpus_path, "Corpus for question text lookup");
  classify->add_option("--out", labels_out, "Output file (default stdout)");

  std::string model_spec, quiz_path, segments_path;
  auto* quiz = app.add_subcommand("quiz", "Score one model on the typology quiz");
  quiz->add_option("--model", model_spec, "Model backend spec (JSON)")->required();
  quiz->add_option("--quiz", quiz_path, "Quiz definition (JSON)")->required();
  quiz->add_option("--segments", segments_path, "Segment map (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir);
    if (*report) return cmd_report(run_dir, format);
    if (*kappa) return cmd_kappa(label_files);
    if (*classify) return cmd_classify(transcripts_in, classifier_spec, corpus_path, labels_out);
    if (*quiz) return cmd_quiz(model_spec, quiz_path, segments_path);
  } catch (const BackendUnavailableError& e) {
    std::cerr << "backend failure: " << e.what() << '\n';
    return kExitBackend;
  } catch (const ClassificationError& e) {
    std::cerr << "backend failure: " << e.what() << '\n';
    return kExitBackend;
  } catch (const TransientError& e) {
    std::cerr << "backend failure: " << e.what() << '\n';
    return kExitBackend;
  } catch (const ProtocolError& e) {
    std::cerr << "backend failure: " << e.what() << '\n';
    return kExitBackend;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
