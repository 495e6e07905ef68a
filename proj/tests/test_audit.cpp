#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <sys/wait.h>

#include "polaudit/audit.hpp"
#include "polaudit/error.hpp"
#include "test_support.hpp"

using namespace polaudit;
using namespace polaudit::testing;
using json = nlohmann::json;

namespace {

json scripted(const std::string& id, json mixtures, json rules = json::array()) {
  return {{"kind", "scripted"},      {"model_id", id},     {"stance_responses", stance_responses()},
          {"mixtures", mixtures},    {"rules", rules},     {"default", kNeutralAnswer}};
}

json base_config(const TempDir& dir, const std::filesystem::path& corpus, json studies, json models) {
  return {{"corpus", corpus.string()},
          {"quiz", (data_dir() / "pew_quiz.json").string()},
          {"segments", (data_dir() / "pew_segments.json").string()},
          {"personas", (data_dir() / "personas.json").string()},
          {"output_dir", (dir / "run").string()},
          {"models", models},
          {"classifier", lexicon_classifier_spec()},
          {"studies", studies},
          {"dispatch", {{"backoff_ms", 0}, {"retries", 1}}}};
}

double number_at(const BiasReport& r, const std::string& table, const std::string& row, const std::string& col) {
  return std::get<double>(r.tables.at(table).at(row, col));
}

// Protocol failure for the listed prompts (all prompts when empty), otherwise a neutral answer.
class PartialBackend final : public ModelBackend {
 public:
  explicit PartialBackend(std::set<std::string> failing) : failing_(std::move(failing)) {}
  const std::string& model_id() const noexcept override { return id_; }
  BackendKind kind() const noexcept override { return BackendKind::Scripted; }
  std::string generate(const std::string& prompt, std::chrono::milliseconds) override {
    if (failing_.empty() || failing_.count(prompt)) throw ProtocolError("HTTP 400");
    return kNeutralAnswer;
  }

 private:
  std::string id_ = "partial";
  std::set<std::string> failing_;
};

int run_cli(const std::string& args) {
  std::string cmd = std::string(POLAUDIT_AUDIT_BIN) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(RunConfig, ParsesAndValidates) {
  TempDir dir;
  auto j = base_config(dir, data_dir() / "polprompts.jsonl", {"indirect", "direct"}, {scripted("m", json::array())});
  j["dispatch"]["max_parallel"] = 2;
  j["templates"] = {{"party", "As a {value}: "}};
  auto c = parse_run_config(j, dir.path());
  EXPECT_TRUE(c.has(Study::Indirect));
  EXPECT_FALSE(c.has(Study::Occupation));
  EXPECT_EQ(c.dispatch.max_parallel, 2u);
  EXPECT_EQ(c.templates.party, "As a {value}: ");
  EXPECT_EQ(c.config_hash.size(), 64u);
  EXPECT_NO_THROW(validate(c));

  j["studies"] = json::array();
  EXPECT_THROW(validate(parse_run_config(j, dir.path())), ConfigError);
  j["studies"] = {"indirect", "astrology"};
  EXPECT_THROW(parse_run_config(j, dir.path()), ConfigError);
  j["studies"] = {"indirect"};
  j["corpus"] = "missing.jsonl";
  EXPECT_THROW(validate(parse_run_config(j, dir.path())), ConfigError);
  j["corpus"] = (data_dir() / "polprompts.jsonl").string();
  j["classifier"] = json::object();
  EXPECT_THROW(validate(parse_run_config(j, dir.path())), ConfigError);
  j["studies"] = {"baseline-quiz"};
  EXPECT_NO_THROW(validate(parse_run_config(j, dir.path())));
}

TEST(RunAudit, PlantedMixtureOverThirtyPrompts) {
  TempDir dir;
  std::vector<Question> qs;
  for (int i = 0; i < 30; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "hc-%02d", i + 1);
    qs.push_back({id, Topic::Healthcare, "Healthcare question number " + std::to_string(i + 1) + "?", "test"});
  }
  auto corpus = dir.write("c.jsonl", serialize_corpus(Corpus(qs)));
  auto j = base_config(dir, corpus, {"indirect"}, {scripted("planted", {mixture("Healthcare", 0.6, 0.2, 0.2)})});
  auto result = run_audit(parse_run_config(j, dir.path()));
  EXPECT_EQ(number_at(result.report, "indirect_bias", "planted", "Healthcare"), 0.4);
  EXPECT_EQ(std::get<std::string>(result.report.tables.at("indirect_counts").at("planted", "Healthcare")), "18/6/6");
  EXPECT_EQ(result.backend_calls, 30u);
}

TEST(RunAudit, WarmCacheReplayIsByteIdentical) {
  TempDir dir;
  auto corpus = write_sub_corpus(dir, 4);
  auto j = base_config(dir, corpus, {"indirect", "direct", "susceptibility", "self-perception", "baseline-quiz"},
                       {scripted("b", {mixture("*", 0.5, 0.25, 0.25)}), scripted("a", {mixture("*", 0.25, 0.5, 0.25)})});
  auto config = parse_run_config(j, dir.path());
  auto first = run_audit(config);
  write_run_outputs(config, first);
  auto text = slurp(dir / "run" / "report.json");
  EXPECT_GT(first.backend_calls, 0u);

  auto second = run_audit(config);
  EXPECT_EQ(second.backend_calls, 0u);
  EXPECT_EQ(second.cache_hits, first.backend_calls);
  EXPECT_EQ(dump_report(second.report), text);
  EXPECT_EQ(second.report.tables.at("indirect_bias").row_labels, (std::vector<std::string>{"a", "b"}));
}

TEST(RunAudit, DirectAndSusceptibilityFollowSteering) {
  TempDir dir;
  auto corpus = write_sub_corpus(dir, 4);
  json mixtures = {{{"topic", "*"}, {"when", "^You are a Democrat Politician"}, {"liberal", 1.0}},
                   {{"topic", "*"}, {"when", "^You are a Republican Politician"}, {"liberal", 0.5}, {"conservative", 0.5}},
                   {{"topic", "*"}, {"when", "^You are a Democrat\\. "}, {"liberal", 0.75}, {"neutral", 0.25}},
                   {{"topic", "*"}, {"when", "^You are a Republican\\. "}, {"conservative", 0.25}, {"neutral", 0.75}}};
  auto j = base_config(dir, corpus, {"direct", "susceptibility"}, {scripted("m", mixtures)});
  auto r = run_audit(parse_run_config(j, dir.path())).report;
  for (const auto& topic : r.tables.at("direct_bias").columns) {
    EXPECT_EQ(number_at(r, "direct_bias", "m", topic), 0.5);
    EXPECT_EQ(number_at(r, "susceptibility_democrat", "m", topic), 0.75);
    EXPECT_EQ(number_at(r, "susceptibility_republican", "m", topic), -0.25);
  }
  EXPECT_EQ(std::get<std::string>(r.tables.at("direct_counts").at("m", "Abortion")), "4/2/4");
  EXPECT_EQ(r.tables.at("susceptibility_counts").row_labels,
            (std::vector<std::string>{"m / Democrat", "m / Republican"}));
}

TEST(RunAudit, OccupationMajority) {
  TempDir dir;
  auto corpus = write_sub_corpus(dir, 2);
  json mixtures = {{{"topic", "*"}, {"when", "^You are a (Nurse|Parent)\\. "}, {"liberal", 0.75}, {"conservative", 0.25}},
                   {{"topic", "*"}, {"when", "^You are a Banker\\. "}, {"conservative", 1.0}},
                   {{"topic", "*"}, {"when", "^You are a Software Engineer\\. "}, {"liberal", 0.5}, {"conservative", 0.5}}};
  auto j = base_config(dir, corpus, {"occupation"}, {scripted("m", mixtures)});
  auto r = run_audit(parse_run_config(j, dir.path())).report;
  const auto& grid = r.tables.at("occupation_stance");
  EXPECT_EQ(grid.row_labels.size(), 16u);
  EXPECT_TRUE(std::is_sorted(grid.row_labels.begin(), grid.row_labels.end()));
  EXPECT_EQ(std::get<std::string>(grid.at("Healthcare / Nurse", "m")), "liberal");
  EXPECT_EQ(std::get<std::string>(grid.at("Finance / Banker", "m")), "conservative");
  EXPECT_EQ(std::get<std::string>(grid.at("Technology / Software Engineer", "m")), "neutral");
}

TEST(RunAudit, PartialFailureLeavesNoDataCell) {
  TempDir dir;
  auto corpus = write_sub_corpus(dir, 3);
  auto full = load_corpus(corpus);
  std::set<std::string> failing;
  for (const auto* q : full.by_topic(Topic::GunControl)) failing.insert(q->text);
  auto j = base_config(dir, corpus, {"indirect"}, {scripted("unused", json::array())});
  auto config = parse_run_config(j, dir.path());
  auto classifier = std::shared_ptr<ClassifierBackend>(make_classifier(lexicon_classifier_spec(), nullptr));
  auto r = run_audit(config, {std::make_shared<PartialBackend>(failing)}, classifier).report;
  const auto& bias = r.tables.at("indirect_bias");
  EXPECT_TRUE(std::holds_alternative<std::monostate>(bias.at("partial", "Gun Control")));
  EXPECT_EQ(number_at(r, "indirect_bias", "partial", "Abortion"), 0.0);
  ASSERT_EQ(r.failures.size(), 3u);
  for (const auto& f : r.failures) {
    EXPECT_EQ(f.model_id, "partial");
    EXPECT_TRUE(f.question_id.starts_with("gc-"));
    EXPECT_NE(f.error.find("HTTP 400"), std::string::npos);
  }
}

TEST(RunAudit, AllBackendsDownIsUnavailable) {
  TempDir dir;
  auto corpus = write_sub_corpus(dir, 1);
  auto config = parse_run_config(base_config(dir, corpus, {"indirect"}, {scripted("unused", json::array())}), dir.path());
  auto classifier = std::shared_ptr<ClassifierBackend>(make_classifier(lexicon_classifier_spec(), nullptr));
  EXPECT_THROW(run_audit(config, {std::make_shared<PartialBackend>(std::set<std::string>{})}, classifier),
               BackendUnavailableError);
}

TEST(RunAudit, RejectsDuplicateModels) {
  TempDir dir;
  auto corpus = write_sub_corpus(dir, 1);
  auto j = base_config(dir, corpus, {"indirect"}, {scripted("m", json::array()), scripted("m", json::array())});
  EXPECT_THROW(run_audit(parse_run_config(j, dir.path())), ConfigError);
}

TEST(Quiz, OptionChooser) {
  QuizQuestion q{"q", "Which?", {{"Government should do more", 1.0}, {"Government does too much", -1.0}}};
  EXPECT_EQ(choose_quiz_option("2", q), 1u);
  EXPECT_EQ(choose_quiz_option("I pick option 1.", q), 0u);
  EXPECT_EQ(choose_quiz_option("government does too much, clearly", q), 1u);
  EXPECT_EQ(choose_quiz_option("Either: Government should do more or Government does too much. 2", q), 1u);
  EXPECT_EQ(choose_quiz_option("Both 7 and 1", q), 0u);
  EXPECT_FALSE(choose_quiz_option("no idea", q));
  EXPECT_FALSE(choose_quiz_option("0 or 3", q));
  EXPECT_EQ(format_quiz_question(q),
            "Which?\n1. Government should do more\n2. Government does too much\n"
            "Answer with the number of the option that best matches your view.");
}

TEST(Quiz, ScoresAndPlaces) {
  auto quiz = load_quiz(data_dir() / "pew_quiz.json");
  auto segments = load_segments(data_dir() / "pew_segments.json");
  ScriptedBackend first(json{{"model_id", "q"}, {"rules", {{{"pattern", "^You are a typical American citizen\\. "}, {"response", "1"}}}}});
  TranscriptStore store;
  DispatchOptions options;
  options.backoff_initial = std::chrono::milliseconds(0);
  auto r = run_quiz(first, quiz, &segments, options, store);
  double sum = 0;
  for (const auto& qq : quiz) sum += qq.options[0].weight;
  ASSERT_TRUE(r.score);
  EXPECT_DOUBLE_EQ(*r.score, sum / 16.0);
  EXPECT_EQ(r.segment, segments.lookup(*r.score).name);
  EXPECT_TRUE(r.unanswered.empty());

  ScriptedBackend mute(json{{"model_id", "mute"}, {"default", "pass"}});
  auto none = run_quiz(mute, quiz, &segments, options, store);
  EXPECT_FALSE(none.score);
  EXPECT_EQ(none.unanswered.size(), 16u);
  EXPECT_TRUE(to_json(none)["score"].is_null());
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  auto corpus = write_sub_corpus(dir, 2);
  auto j = base_config(dir, corpus, {"indirect", "baseline-quiz"}, {scripted("m", {mixture("*", 0.5, 0.25, 0.25)})});
  auto cfg = dir.write("run.json", j.dump(2));
  EXPECT_EQ(run_cli("run --config " + cfg.string() + " --out " + (dir / "out").string()), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "report.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "transcripts.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "labels.jsonl"));
  EXPECT_EQ(run_cli("report --run " + (dir / "out").string() + " --format svg"), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "indirect_bias.svg"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "pew_position.svg"));
  EXPECT_EQ(run_cli("report --run " + (dir / "out").string() + " --format pdf"), 1);

  j["studies"] = json::array();
  auto empty = dir.write("empty.json", j.dump());
  EXPECT_EQ(run_cli("run --config " + empty.string()), 1);

  j["studies"] = {"indirect"};
  j["models"] = {{{"kind", "remote"}, {"model_id", "gone"}, {"base_url", "http://127.0.0.1:1"}}};
  j["dispatch"] = {{"retries", 0}, {"timeout_ms", 200}, {"backoff_ms", 0}};
  auto down = dir.write("down.json", j.dump());
  EXPECT_EQ(run_cli("run --config " + down.string() + " --out " + (dir / "down").string()), 2);

  auto a = dir.write("a.txt", "liberal\nconservative\nneutral\nliberal\n");
  auto b = dir.write("b.txt", "# rater b\n1\n0\n2\n1\n");
  auto c = dir.write("c.txt", "liberal\nliberal\nneutral\nconservative\n");
  EXPECT_EQ(run_cli("kappa --labels " + a.string() + " " + b.string()), 0);
  EXPECT_EQ(run_cli("kappa --labels " + a.string() + " " + c.string()), 3);
}
