#include "polaudit/audit.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "polaudit/error.hpp"
#include "polaudit/hash.hpp"

namespace polaudit {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, 6> kStudyNames = {
    "baseline-quiz", "indirect", "direct", "occupation", "susceptibility", "self-perception",
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path = p;
  return path.is_relative() ? base / path : path;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string persona_label(const Persona& p) {
  std::string out(to_string(p.kind));
  if (!p.value.empty()) out += ":" + p.value;
  return out;
}

std::string occupation_label(const Persona& p) {
  return p.industry.empty() ? p.value : p.industry + " / " + p.value;
}

std::string counts_text(const StanceCounts& c) {
  return std::to_string(c.liberal) + "/" + std::to_string(c.conservative) + "/" + std::to_string(c.neutral);
}

// (model, question id, persona) -> label
using LabelIndex = std::map<std::tuple<std::string, std::string, Persona>, StanceLabel>;

}  // namespace

std::string_view to_string(Study study) { return kStudyNames[static_cast<std::size_t>(study)]; }

std::optional<Study> parse_study(std::string_view name) {
  for (std::size_t i = 0; i < kStudyNames.size(); ++i)
    if (kStudyNames[i] == name) return static_cast<Study>(i);
  return std::nullopt;
}

bool RunConfig::has(Study study) const {
  return std::find(studies.begin(), studies.end(), study) != studies.end();
}

RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  c.base_dir = base_dir;
  try {
    c.corpus_path = resolve(base_dir, j.value("corpus", std::string{}));
    c.quiz_path = resolve(base_dir, j.value("quiz", std::string{}));
    c.segments_path = resolve(base_dir, j.value("segments", std::string{}));
    c.personas_path = resolve(base_dir, j.value("personas", std::string{}));
    c.output_dir = resolve(base_dir, j.value("output_dir", std::string{}));
    for (const auto& m : j.value("models", json::array())) c.models.push_back(m);
    c.classifier = j.value("classifier", json::object());
    for (const auto& s : j.value("studies", json::array())) {
      auto study = parse_study(s.get<std::string>());
      if (!study) throw ConfigError("unknown study \"" + s.get<std::string>() + "\"");
      if (!c.has(*study)) c.studies.push_back(*study);
    }
    auto d = j.value("dispatch", json::object());
    c.dispatch.max_parallel = d.value("max_parallel", c.dispatch.max_parallel);
    c.dispatch.retries = d.value("retries", c.dispatch.retries);
    c.dispatch.timeout = std::chrono::milliseconds(d.value("timeout_ms", c.dispatch.timeout.count()));
    c.dispatch.backoff_initial = std::chrono::milliseconds(d.value("backoff_ms", c.dispatch.backoff_initial.count()));
    c.dispatch.backoff_max = std::chrono::milliseconds(d.value("backoff_max_ms", c.dispatch.backoff_max.count()));
    c.classify.width = j.value("classify", json::object()).value("width", c.classify.width);
    auto inc = j.value("incoherence", json::object());
    c.incoherence.min_tokens = inc.value("min_tokens", c.incoherence.min_tokens);
    if (inc.contains("refusal_patterns"))
      c.incoherence.refusal_patterns = inc["refusal_patterns"].get<std::vector<std::string>>();
    auto t = j.value("templates", json::object());
    c.templates.citizen = t.value("citizen", c.templates.citizen);
    c.templates.occupation = t.value("occupation", c.templates.occupation);
    c.templates.race = t.value("race", c.templates.race);
    c.templates.politician = t.value("politician", c.templates.politician);
    c.templates.party = t.value("party", c.templates.party);
    c.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad run config: ") + e.what());
  }
  c.config_hash = sha256_hex(j.dump());
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  return parse_run_config(j, path.parent_path());
}

void validate(const RunConfig& c) {
  if (c.studies.empty()) throw ConfigError("study list is empty");
  auto need = [](const std::filesystem::path& p, const char* what) {
    if (p.empty()) throw ConfigError(std::string(what) + " path is not set");
    if (!std::filesystem::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
  };
  need(c.corpus_path, "corpus");
  if (c.has(Study::BaselineQuiz)) {
    need(c.quiz_path, "quiz");
    if (!c.segments_path.empty()) need(c.segments_path, "segments");
  }
  if (c.has(Study::Occupation)) need(c.personas_path, "persona set");
  if (c.models.empty()) throw ConfigError("no models configured");
  bool needs_classifier = std::any_of(c.studies.begin(), c.studies.end(),
                                      [](Study s) { return s != Study::BaselineQuiz; });
  if (needs_classifier && (!c.classifier.is_object() || c.classifier.empty()))
    throw ConfigError("no classifier configured");
  if (c.dispatch.max_parallel == 0) throw ConfigError("dispatch.max_parallel must be >= 1");
}

std::string format_quiz_question(const QuizQuestion& q) {
  std::string out = q.text;
  for (std::size_t i = 0; i < q.options.size(); ++i)
    out += "\n" + std::to_string(i + 1) + ". " + q.options[i].text;
  out += "\nAnswer with the number of the option that best matches your view.";
  return out;
}

std::optional<std::size_t> choose_quiz_option(std::string_view reply, const QuizQuestion& q) {
  auto text = lower(reply);
  std::optional<std::size_t> named;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < q.options.size(); ++i) {
    auto opt = lower(q.options[i].text);
    if (!opt.empty() && text.find(opt) != std::string::npos) {
      named = i;
      ++hits;
    }
  }
  if (hits == 1) return named;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) continue;
    std::size_t j = i;
    while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    auto value = std::stoul(text.substr(i, std::min<std::size_t>(j - i, 9)));
    if (value >= 1 && value <= q.options.size()) return value - 1;
    i = j;
  }
  return std::nullopt;
}

QuizResult run_quiz(ModelBackend& backend, std::span<const QuizQuestion> quiz, const SegmentMap* segments,
                    const DispatchOptions& options, TranscriptStore& store, const PersonaTemplates& templates,
                    DispatchStats* stats) {
  std::vector<PromptRequest> requests;
  for (const auto& q : quiz) {
    Question item{q.id, Topic::Healthcare, format_quiz_question(q), "quiz"};
    requests.push_back({q.id, Persona::citizen(), apply_persona(item, Persona::citizen(), templates)});
  }
  IncoherenceDetector lenient(IncoherenceConfig{1, {}});
  auto replies = dispatch(backend, requests, options, store, lenient, stats);
  QuizResult result;
  result.model_id = backend.model_id();
  for (std::size_t i = 0; i < quiz.size(); ++i) {
    std::optional<std::size_t> choice;
    if (replies[i].ok()) choice = choose_quiz_option(replies[i].response_text, quiz[i]);
    if (choice) {
      result.answers[quiz[i].id] = *choice;
    } else {
      result.unanswered.push_back(quiz[i].id);
    }
  }
  if (!result.answers.empty()) {
    result.score = pew_score(result.answers, quiz);
    if (segments) result.segment = segments->lookup(*result.score).name;
  }
  return result;
}

json to_json(const QuizResult& r) {
  json answers = json::object();
  for (const auto& [id, option] : r.answers) answers[id] = option;
  json j{{"model_id", r.model_id}, {"answers", answers}, {"unanswered", r.unanswered}};
  j["score"] = r.score ? json(*r.score) : json(nullptr);
  j["segment"] = r.segment ? json(*r.segment) : json(nullptr);
  return j;
}

AuditResult run_audit(const RunConfig& config) {
  validate(config);
  auto corpus = std::make_shared<const Corpus>(load_corpus(config.corpus_path));
  std::vector<std::shared_ptr<ModelBackend>> models;
  for (const auto& spec : config.models) models.push_back(make_backend(spec, corpus, config.base_dir));
  std::shared_ptr<ClassifierBackend> classifier;
  if (config.classifier.is_object() && !config.classifier.empty())
    classifier = make_classifier(config.classifier, corpus, config.base_dir);
  return run_audit(config, std::move(models), std::move(classifier));
}

AuditResult run_audit(const RunConfig& config, std::vector<std::shared_ptr<ModelBackend>> models,
                      std::shared_ptr<ClassifierBackend> classifier) {
  validate(config);
  const Corpus corpus = load_corpus(config.corpus_path);
  if (corpus.empty()) throw ConfigError("corpus is empty");
  if (models.empty()) throw ConfigError("no models configured");
  std::sort(models.begin(), models.end(), [](const auto& a, const auto& b) { return a->model_id() < b->model_id(); });
  for (std::size_t i = 1; i < models.size(); ++i)
    if (models[i]->model_id() == models[i - 1]->model_id())
      throw ConfigError("duplicate model id \"" + models[i]->model_id() + "\"");
  const bool needs_classifier = std::any_of(config.studies.begin(), config.studies.end(),
                                            [](Study s) { return s != Study::BaselineQuiz; });
  if (needs_classifier && !classifier) throw ConfigError("no classifier configured");

  PersonaSet personas;
  if (config.has(Study::Occupation)) personas = load_persona_set(config.personas_path);
  std::vector<QuizQuestion> quiz;
  std::optional<SegmentMap> segments;
  if (config.has(Study::BaselineQuiz)) {
    quiz = load_quiz(config.quiz_path);
    if (!config.segments_path.empty()) segments = load_segments(config.segments_path);
  }

  TranscriptStore store = config.output_dir.empty() ? TranscriptStore{}
                                                    : TranscriptStore{config.output_dir / "transcripts.jsonl"};
  const IncoherenceDetector detector(config.incoherence);

  std::vector<Persona> base_personas;
  if (config.has(Study::Indirect) || config.has(Study::SelfPerception)) base_personas.push_back(Persona::none());
  if (config.has(Study::Direct))
    for (Party p : {Party::Democrat, Party::Republican}) base_personas.push_back(Persona::politician(p));
  if (config.has(Study::Susceptibility))
    for (Party p : {Party::Democrat, Party::Republican}) base_personas.push_back(Persona::party(p));
  if (config.has(Study::Occupation))
    for (const auto& p : personas.occupations) base_personas.push_back(p);

  AuditResult result;
  BiasReport& report = result.report;
  for (Study s : config.studies) report.studies.emplace_back(to_string(s));
  std::sort(report.studies.begin(), report.studies.end());
  report.provenance.config_hash = config.config_hash;
  report.provenance.corpus_hash = sha256_hex(serialize_corpus(corpus));
  report.provenance.classifier_id = classifier ? classifier->classifier_id() : "";
  report.provenance.seed = config.seed;
  report.run_id = sha256_hex(report.provenance.config_hash + report.provenance.corpus_hash +
                             report.provenance.classifier_id)
                      .substr(0, 16);

  LabelIndex labels;
  std::map<std::string, SelfPerceptionReport> self_reports;
  std::map<std::string, QuizResult> quiz_results;
  std::size_t attempted = 0, succeeded = 0;
  DispatchStats stats;

  auto record_failure = [&](const Transcript& t) {
    report.failures.push_back({t.model_id, t.question_id, persona_label(t.persona), t.error.value_or("")});
  };

  for (const auto& backend : models) {
    const std::string& model_id = backend->model_id();
    std::vector<PromptRequest> requests;
    for (const auto& persona : base_personas)
      for (const auto& q : corpus.questions())
        requests.push_back({q.id, persona, apply_persona(q, persona, config.templates)});

    std::vector<Transcript> ok;
    if (!requests.empty()) {
      auto transcripts = dispatch(*backend, requests, config.dispatch, store, detector, &stats);
      attempted += transcripts.size();
      for (auto& t : transcripts) {
        if (t.ok()) {
          ++succeeded;
          ok.push_back(std::move(t));
        } else {
          record_failure(t);
        }
      }
    }

    if (!ok.empty()) {
      try {
        auto labeled = classify_batch(ok, *classifier, corpus, config.classify);
        for (auto& lt : labeled) {
          labels[{model_id, lt.transcript.question_id, lt.transcript.persona}] = lt.label;
          result.labeled.push_back(std::move(lt));
        }
      } catch (const ClassificationError& e) {
        report.failures.push_back({model_id, "", "classification", e.what()});
      }
    }

    if (config.has(Study::SelfPerception)) {
      std::vector<PromptRequest> second;
      std::vector<StanceLabel> truth;
      for (const auto& t : ok) {
        if (t.persona.kind != PersonaKind::None || t.response_text.empty()) continue;
        auto label = labels.find({model_id, t.question_id, t.persona});
        if (label == labels.end()) continue;
        const Question* q = corpus.find(t.question_id);
        second.push_back({t.question_id, Persona::none(), build_self_perception_prompt(*q, t.response_text)});
        truth.push_back(label->second);
      }
      if (!second.empty()) {
        IncoherenceDetector lenient(IncoherenceConfig{0, {}});
        auto replies = dispatch(*backend, second, config.dispatch, store, lenient, &stats);
        attempted += replies.size();
        std::vector<StanceLabel> self, gt;
        for (std::size_t i = 0; i < replies.size(); ++i) {
          if (!replies[i].ok()) {
            record_failure(replies[i]);
            continue;
          }
          ++succeeded;
          auto parsed = try_parse_judge_reply(replies[i].response_text);
          if (!parsed) ++report.judge_warnings;
          self.push_back(parsed.value_or(StanceLabel::Neutral));
          gt.push_back(truth[i]);
        }
        if (!self.empty()) self_reports[model_id] = self_perception_report(self, gt);
      }
    }

    if (config.has(Study::BaselineQuiz)) {
      auto qr = run_quiz(*backend, quiz, segments ? &*segments : nullptr, config.dispatch, store,
                         config.templates, &stats);
      attempted += quiz.size();
      succeeded += quiz.size() - qr.unanswered.size();
      quiz_results[model_id] = std::move(qr);
    }
  }
  if (auto* judge = dynamic_cast<LlmJudgeClassifier*>(classifier.get())) report.judge_warnings += judge->warnings();

  if (attempted > 0 && succeeded == 0)
    throw BackendUnavailableError("no backend produced a usable response");

  // Tables --------------------------------------------------------------------
  std::vector<std::string> model_ids;
  for (const auto& m : models) model_ids.push_back(m->model_id());
  std::vector<std::string> topic_names;
  for (Topic t : corpus.topics()) topic_names.emplace_back(to_string(t));

  auto counts_for = [&](const std::string& model, Topic topic, const Persona& persona) {
    StanceCounts c;
    for (const auto* q : corpus.by_topic(topic)) {
      auto it = labels.find({model, q->id, persona});
      if (it != labels.end()) c.add(it->second);
    }
    return c;
  };
  auto matrix = [&](const std::string& header) {
    Table t;
    t.row_header = header;
    t.columns = topic_names;
    t.row_labels = model_ids;
    t.cells.assign(model_ids.size(), std::vector<Cell>(topic_names.size()));
    return t;
  };
  const auto topics = corpus.topics();

  if (config.has(Study::Indirect)) {
    Table bias = matrix("model"), counts = matrix("model (liberal/conservative/neutral)");
    for (std::size_t m = 0; m < model_ids.size(); ++m)
      for (std::size_t k = 0; k < topics.size(); ++k) {
        auto c = counts_for(model_ids[m], topics[k], Persona::none());
        if (c.total() == 0) continue;
        bias.cells[m][k] = indirect_bias(c);
        counts.cells[m][k] = counts_text(c);
      }
    report.tables["indirect_bias"] = std::move(bias);
    report.tables["indirect_counts"] = std::move(counts);
  }

  if (config.has(Study::Direct)) {
    Table bias = matrix("model"), counts = matrix("model (dem liberal/rep conservative/prompts)");
    const auto dem = Persona::politician(Party::Democrat), rep = Persona::politician(Party::Republican);
    for (std::size_t m = 0; m < model_ids.size(); ++m)
      for (std::size_t k = 0; k < topics.size(); ++k) {
        // Only questions answered under both steerings are compared.
        StanceCounts d, r;
        for (const auto* q : corpus.by_topic(topics[k])) {
          auto a = labels.find({model_ids[m], q->id, dem});
          auto b = labels.find({model_ids[m], q->id, rep});
          if (a == labels.end() || b == labels.end()) continue;
          d.add(a->second);
          r.add(b->second);
        }
        if (d.total() == 0) continue;
        bias.cells[m][k] = direct_bias(d, r);
        counts.cells[m][k] =
            std::to_string(d.liberal) + "/" + std::to_string(r.conservative) + "/" + std::to_string(d.total());
      }
    report.tables["direct_bias"] = std::move(bias);
    report.tables["direct_counts"] = std::move(counts);
  }

  if (config.has(Study::Susceptibility)) {
    Table counts;
    counts.row_header = "model / steering (liberal/conservative/neutral)";
    counts.columns = topic_names;
    for (Party party : {Party::Democrat, Party::Republican}) {
      Table s = matrix("model");
      for (std::size_t m = 0; m < model_ids.size(); ++m) {
        std::vector<Cell> row(topic_names.size());
        for (std::size_t k = 0; k < topics.size(); ++k) {
          auto c = counts_for(model_ids[m], topics[k], Persona::party(party));
          if (c.total() == 0) continue;
          s.cells[m][k] = susceptibility(c);
          row[k] = counts_text(c);
        }
        counts.row_labels.push_back(model_ids[m] + " / " + std::string(to_string(party)));
        counts.cells.push_back(std::move(row));
      }
      report.tables[party == Party::Democrat ? "susceptibility_democrat" : "susceptibility_republican"] = std::move(s);
    }
    // model-major row order
    std::vector<std::size_t> order(counts.row_labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return counts.row_labels[a] < counts.row_labels[b]; });
    Table sorted = counts;
    for (std::size_t i = 0; i < order.size(); ++i) {
      sorted.row_labels[i] = counts.row_labels[order[i]];
      sorted.cells[i] = counts.cells[order[i]];
    }
    report.tables["susceptibility_counts"] = std::move(sorted);
  }

  if (config.has(Study::Occupation)) {
    std::vector<Persona> occupations = personas.occupations;
    std::sort(occupations.begin(), occupations.end(),
              [](const Persona& a, const Persona& b) { return occupation_label(a) < occupation_label(b); });
    Table grid;
    grid.row_header = "occupation";
    grid.columns = model_ids;
    for (const auto& occ : occupations) {
      grid.row_labels.push_back(occupation_label(occ));
      std::vector<Cell> row(model_ids.size());
      for (std::size_t m = 0; m < model_ids.size(); ++m) {
        StanceCounts c;
        for (const auto& q : corpus.questions()) {
          auto it = labels.find({model_ids[m], q.id, occ});
          if (it != labels.end()) c.add(it->second);
        }
        if (c.total() > 0) row[m] = std::string(to_string(majority_stance(c)));
      }
      grid.cells.push_back(std::move(row));
    }
    report.tables["occupation_stance"] = std::move(grid);
  }

  if (config.has(Study::SelfPerception)) {
    Table t;
    t.row_header = "model";
    t.columns = {"self_liberal", "self_conservative", "self_neutral", "truth_liberal",
                 "truth_conservative", "truth_neutral", "accuracy", "n"};
    for (const auto& id : model_ids) {
      t.row_labels.push_back(id);
      std::vector<Cell> row(t.columns.size());
      if (auto it = self_reports.find(id); it != self_reports.end()) {
        const auto& r = it->second;
        row = {r.self.liberal,         r.self.conservative,         r.self.neutral,
               r.ground_truth.liberal, r.ground_truth.conservative, r.ground_truth.neutral,
               r.accuracy,             static_cast<double>(r.n)};
      }
      t.cells.push_back(std::move(row));
    }
    report.tables["self_perception"] = std::move(t);
  }

  if (config.has(Study::BaselineQuiz)) {
    Table t;
    t.row_header = "model";
    t.columns = {"score", "segment", "answered", "unanswered"};
    for (const auto& id : model_ids) {
      t.row_labels.push_back(id);
      const auto& qr = quiz_results[id];
      std::vector<Cell> row(t.columns.size());
      if (qr.score) row[0] = *qr.score;
      if (qr.segment) row[1] = *qr.segment;
      row[2] = static_cast<double>(qr.answers.size());
      row[3] = static_cast<double>(qr.unanswered.size());
      t.cells.push_back(std::move(row));
    }
    report.tables["pew_position"] = std::move(t);
    if (segments) {
      Table s;
      s.row_header = "segment";
      s.columns = {"lo", "hi"};
      for (const auto& seg : segments->segments()) {
        s.row_labels.push_back(seg.name);
        s.cells.push_back({seg.lo, seg.hi});
      }
      report.tables["pew_segments"] = std::move(s);
    }
  }

  std::sort(report.failures.begin(), report.failures.end(), [](const FailureEntry& a, const FailureEntry& b) {
    return std::tie(a.model_id, a.question_id, a.persona) < std::tie(b.model_id, b.question_id, b.persona);
  });
  result.backend_calls = stats.backend_calls;
  result.cache_hits = stats.cache_hits;
  return result;
}

void write_run_outputs(const RunConfig& config, const AuditResult& result) {
  if (config.output_dir.empty()) throw ConfigError("output directory is not set");
  emit(result.report, EmitFormat::Json, config.output_dir);
  std::ofstream labels(config.output_dir / "labels.jsonl", std::ios::binary);
  if (!labels) throw Error("cannot write labels.jsonl");
  for (const auto& lt : result.labeled) labels << to_json(lt).dump() << '\n';
  auto store_path = config.output_dir / "transcripts.jsonl";
  if (std::filesystem::exists(store_path)) TranscriptStore(store_path).export_csv(config.output_dir / "transcripts.csv");
}

}  // namespace polaudit
