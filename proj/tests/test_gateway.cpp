#include <gtest/gtest.h>

#include <httplib.h>

#include <set>

#include "polaudit/error.hpp"
#include "polaudit/gateway.hpp"
#include "test_support.hpp"

using namespace polaudit;
using namespace polaudit::testing;
using json = nlohmann::json;

namespace {

std::vector<PromptRequest> requests(std::initializer_list<const char*> prompts) {
  std::vector<PromptRequest> out;
  int i = 0;
  for (const char* p : prompts) out.push_back({"q" + std::to_string(i++), Persona::none(), p});
  return out;
}

DispatchOptions fast_options() {
  DispatchOptions o;
  o.backoff_initial = std::chrono::milliseconds(0);
  return o;
}

// Fails with TransientError the first `failures` times a prompt is seen.
class FlakyBackend final : public ModelBackend {
 public:
  FlakyBackend(std::size_t failures, std::string response) : failures_(failures), response_(std::move(response)) {}
  const std::string& model_id() const noexcept override { return id_; }
  BackendKind kind() const noexcept override { return BackendKind::Scripted; }
  std::string generate(const std::string& prompt, std::chrono::milliseconds) override {
    std::lock_guard lock(mutex_);
    ++calls;
    if (seen_[prompt]++ < failures_) throw TransientError("injected fault");
    return response_;
  }
  std::size_t calls = 0;

 private:
  std::string id_ = "flaky";
  std::size_t failures_;
  std::string response_;
  std::mutex mutex_;
  std::map<std::string, std::size_t> seen_;
};

class ProtocolBreaker final : public ModelBackend {
 public:
  const std::string& model_id() const noexcept override { return id_; }
  BackendKind kind() const noexcept override { return BackendKind::Scripted; }
  std::string generate(const std::string&, std::chrono::milliseconds) override {
    ++calls;
    throw ProtocolError("garbled");
  }
  std::size_t calls = 0;

 private:
  std::string id_ = "breaker";
};

struct TestServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  TestServer() = default;
  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~TestServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  std::string url(const std::string& prefix = "") const {
    return "http://127.0.0.1:" + std::to_string(port) + prefix;
  }
};

}  // namespace

TEST(ScriptedBackend, EchoesThreePrompts) {
  ScriptedBackend backend(json{{"model_id", "echo"}, {"default", "echo: {prompt}"}});
  TranscriptStore store;
  auto out = dispatch(backend, requests({"a b c d", "e f g h", "i j k l"}), fast_options(), store);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].response_text, "echo: a b c d");
  EXPECT_EQ(out[2].response_text, "echo: i j k l");
  EXPECT_EQ(out[1].question_id, "q1");
  EXPECT_EQ(backend.calls(), 3u);
}

TEST(ScriptedBackend, RulesTopicsAndPurity) {
  auto corpus = std::make_shared<const Corpus>(load_corpus(data_dir() / "polprompts.jsonl"));
  ScriptedBackend backend(json{{"model_id", "m"},
                               {"rules", json::array({{{"pattern", "politically neutral\\?$"}, {"response", "neutral"}}})},
                               {"topics", json::object({{"Gun Control", "guns: {question}"}})},
                               {"default", "fallback"}},
                          corpus);
  const auto& gc = *corpus->find("gc-01");
  EXPECT_EQ(backend.generate("You are a Nurse. " + gc.text, {}), "guns: " + gc.text);
  EXPECT_EQ(backend.generate("Is it politically neutral?", {}), "neutral");
  EXPECT_EQ(backend.generate("unrelated", {}), "fallback");
  EXPECT_EQ(backend.generate("unrelated", {}), backend.generate("unrelated", {}));
}

TEST(ScriptedBackend, ApportionIsExact) {
  EXPECT_EQ(ScriptedBackend::apportion({0.6, 0.2, 0.2}, 30), (std::array<std::size_t, 3>{18, 6, 6}));
  EXPECT_EQ(ScriptedBackend::apportion({0.7, 0.1, 0.2}, 10), (std::array<std::size_t, 3>{7, 1, 2}));
  EXPECT_EQ(ScriptedBackend::apportion({1, 1, 1}, 28), (std::array<std::size_t, 3>{10, 9, 9}));
  for (std::size_t n = 0; n < 50; ++n) {
    auto c = ScriptedBackend::apportion({0.35, 0.4, 0.25}, n);
    EXPECT_EQ(c[0] + c[1] + c[2], n);
  }
}

TEST(ScriptedBackend, MixtureByTopicAndCondition) {
  auto corpus = std::make_shared<const Corpus>(load_corpus(data_dir() / "polprompts.jsonl"));
  json cfg{{"model_id", "m"},
           {"stance_responses", stance_responses()},
           {"mixtures", {{{"topic", "*"}, {"when", "^You are a Republican"}, {"conservative", 1.0}},
                         mixture("Abortion", 0.5, 0.25, 0.25)}},
           {"default", kNeutralAnswer}};
  ScriptedBackend backend(cfg, corpus);
  std::map<std::string, int> counts;
  for (const auto* q : corpus->by_topic(Topic::Abortion)) ++counts[backend.generate(q->text, {})];
  EXPECT_EQ(counts[kLiberalAnswer], 14);
  EXPECT_EQ(counts[kConservativeAnswer], 7);
  EXPECT_EQ(counts[kNeutralAnswer], 7);
  const auto& hc = *corpus->find("hc-03");
  EXPECT_EQ(backend.generate("You are a Republican. " + hc.text, {}), kConservativeAnswer);
  EXPECT_EQ(backend.generate(hc.text, {}), kNeutralAnswer);
}

TEST(Dispatch, CacheReplayMakesNoCalls) {
  TempDir dir;
  ScriptedBackend backend(json{{"model_id", "echo"}, {"default", "said {prompt} twice over"}});
  auto prompts = requests({"one", "two", "three", "four"});
  std::vector<Transcript> first;
  {
    TranscriptStore store(dir / "t.jsonl");
    first = dispatch(backend, prompts, fast_options(), store);
  }
  EXPECT_EQ(backend.calls(), 4u);
  TranscriptStore reloaded(dir / "t.jsonl");
  DispatchStats stats;
  auto second = dispatch(backend, prompts, fast_options(), reloaded, IncoherenceDetector{}, &stats);
  EXPECT_EQ(backend.calls(), 4u);
  EXPECT_EQ(stats.backend_calls, 0u);
  EXPECT_EQ(stats.cache_hits, 4u);
  ASSERT_EQ(second.size(), first.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_TRUE(first[i].same_content(second[i]));
    EXPECT_EQ(to_json(first[i]).dump(), to_json(second[i]).dump());
  }
}

TEST(Dispatch, DuplicatePromptsShareOneCall) {
  ScriptedBackend backend(json{{"model_id", "echo"}, {"default", "{prompt} {prompt} {prompt}"}});
  TranscriptStore store;
  std::vector<PromptRequest> prompts = {{"a", Persona::none(), "same"}, {"b", Persona::none(), "same"}};
  auto out = dispatch(backend, prompts, fast_options(), store);
  EXPECT_EQ(backend.calls(), 1u);
  EXPECT_EQ(out[0].question_id, "a");
  EXPECT_EQ(out[1].question_id, "b");
  EXPECT_EQ(out[0].cache_key, out[1].cache_key);
}

TEST(Dispatch, RetriesTransientFaults) {
  FlakyBackend backend(2, "a perfectly coherent answer");
  TranscriptStore store;
  auto options = fast_options();
  options.retries = 3;
  auto out = dispatch(backend, requests({"p"}), options, store);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].ok());
  EXPECT_EQ(out[0].attempts, 3u);
  EXPECT_EQ(out[0].response_text, "a perfectly coherent answer");
  EXPECT_EQ(store.size(), 1u);
}

TEST(Dispatch, BudgetExhaustionYieldsFailureRecord) {
  FlakyBackend backend(10, "never");
  TranscriptStore store;
  auto options = fast_options();
  options.retries = 2;
  DispatchStats stats;
  auto out = dispatch(backend, requests({"p", "q"}), options, store, IncoherenceDetector{}, &stats);
  ASSERT_EQ(out.size(), 2u);
  for (const auto& t : out) {
    EXPECT_FALSE(t.ok());
    EXPECT_EQ(t.attempts, 3u);
  }
  EXPECT_EQ(stats.failures, 2u);
  EXPECT_EQ(store.size(), 0u);
}

TEST(Dispatch, ProtocolErrorsAreNotRetried) {
  ProtocolBreaker backend;
  TranscriptStore store;
  auto out = dispatch(backend, requests({"p"}), fast_options(), store);
  EXPECT_FALSE(out[0].ok());
  EXPECT_EQ(backend.calls, 1u);
}

TEST(Dispatch, ParallelPreservesOrderAndCount) {
  ScriptedBackend backend(json{{"model_id", "echo"}, {"default", "reply to {prompt} now"}});
  TranscriptStore store;
  std::vector<PromptRequest> prompts;
  for (int i = 0; i < 200; ++i) prompts.push_back({std::to_string(i), Persona::none(), "prompt " + std::to_string(i)});
  auto options = fast_options();
  options.max_parallel = 8;
  auto out = dispatch(backend, prompts, options, store);
  ASSERT_EQ(out.size(), prompts.size());
  for (int i = 0; i < 200; ++i) EXPECT_EQ(out[i].response_text, "reply to prompt " + std::to_string(i) + " now");
  EXPECT_EQ(store.size(), 200u);
}

TEST(Incoherence, Cases) {
  EXPECT_TRUE(detect_incoherent(""));
  EXPECT_TRUE(detect_incoherent("   \n\t"));
  EXPECT_TRUE(detect_incoherent("No."));
  EXPECT_TRUE(detect_incoherent("As an intelligent chatbot, I hold no viewpoint on such matters"));
  EXPECT_TRUE(detect_incoherent("As an AI language model, I don't have personal opinions on this."));
  EXPECT_FALSE(detect_incoherent(
      "Access to care matters a great deal. Many families struggle with costs. A mixed system could help."));
  IncoherenceDetector strict(IncoherenceConfig{10, {"\\bbanana\\b"}});
  EXPECT_TRUE(strict.is_incoherent("one two three"));
  EXPECT_TRUE(strict.is_incoherent("one two three four five six seven eight nine banana"));
}

TEST(Transcript, CacheKeyDependsOnModelAndPrompt) {
  auto k = transcript_cache_key("m", "p");
  EXPECT_EQ(k, transcript_cache_key("m", "p"));
  EXPECT_NE(k, transcript_cache_key("m2", "p"));
  EXPECT_NE(k, transcript_cache_key("m", "p2"));
  EXPECT_NE(transcript_cache_key("ab", "c"), transcript_cache_key("a", "bc"));
  EXPECT_EQ(k.size(), 64u);
}

TEST(TranscriptStore, CsvExport) {
  TempDir dir;
  TranscriptStore store;
  Transcript t;
  t.model_id = "m";
  t.question_id = "q";
  t.prompt_text = "Say \"hi\", please";
  t.response_text = "line one\nline two";
  t.cache_key = transcript_cache_key("m", t.prompt_text);
  store.append(t);
  store.export_csv(dir / "t.csv");
  std::ifstream in(dir / "t.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  auto csv = ss.str();
  EXPECT_TRUE(csv.starts_with("model_id,question_id,persona_kind"));
  EXPECT_NE(csv.find("\"Say \"\"hi\"\", please\""), std::string::npos);
  EXPECT_NE(csv.find("\"line one\nline two\""), std::string::npos);
}

TEST(RemoteHttpBackend, SpeaksGenerateProtocol) {
  TestServer srv;
  std::atomic<int> hits{0};
  srv.server.Post("/v1/generate", [&](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body);
    EXPECT_EQ(body["model"], "remote-m");
    EXPECT_EQ(body["max_tokens"], 64);
    EXPECT_EQ(req.get_header_value("X-Api-Key"), "sekret");
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    res.set_content(json{{"text", "echo " + body["prompt"].get<std::string>()}}.dump(), "application/json");
  });
  srv.server.Post("/bad/generate", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"nope\":1}", "application/json");
  });
  srv.start();

  ::setenv("POLAUDIT_TEST_KEY", "sekret", 1);
  auto backend = make_backend(json{{"kind", "remote"},
                                   {"model_id", "remote-m"},
                                   {"base_url", srv.url("/v1")},
                                   {"auth_header", "X-Api-Key"},
                                   {"auth_value", "overridden"},
                                   {"auth_value_env", "POLAUDIT_TEST_KEY"},
                                   {"max_tokens", 64}},
                              nullptr);
  TranscriptStore store;
  auto out = dispatch(*backend, requests({"hello there friend"}), fast_options(), store);
  ASSERT_TRUE(out[0].ok()) << out[0].error.value_or("");
  EXPECT_EQ(out[0].response_text, "echo hello there friend");
  EXPECT_EQ(out[0].attempts, 2u);

  RemoteHttpBackend bad({"m", srv.url("/bad"), "", "", 16});
  EXPECT_THROW(bad.generate("x", std::chrono::milliseconds(2000)), ProtocolError);
}

TEST(RemoteHttpBackend, UnreachableIsTransient) {
  RemoteHttpBackend backend({"m", "http://127.0.0.1:1", "", "", 16});
  EXPECT_THROW(backend.generate("x", std::chrono::milliseconds(300)), TransientError);
  EXPECT_THROW(RemoteHttpBackend({"m", "ftp://x", "", "", 16}), ConfigError);
}
