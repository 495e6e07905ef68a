#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "polaudit/corpus.hpp"
#include "polaudit/persona.hpp"

namespace polaudit {

enum class BackendKind { RemoteHttp, Scripted };

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual const std::string& model_id() const noexcept = 0;
  virtual BackendKind kind() const noexcept = 0;

  // Throws TransientError (retryable) or ProtocolError (not retryable).
  virtual std::string generate(const std::string& prompt, std::chrono::milliseconds timeout) = 0;

  // Backends that return false get at most one in-flight call.
  virtual bool concurrent_safe() const noexcept { return true; }
};

struct StanceMixture {
  double liberal = 0.0;
  double conservative = 0.0;
  double neutral = 1.0;
};

// Deterministic mock model. Rules are tried in order against the prompt; then
// the topic mixture (if the prompt carries a known corpus question); then the
// topic response; then the default. "{prompt}" in a response is replaced by
// the prompt text.
//
// Config JSON:
//   {"model_id": "...",
//    "rules": [{"pattern": "<regex>", "response": "..."}],
//    "topics": {"Abortion": "..."},
//    "mixtures": [{"topic": "Abortion" | "*", "when": "<regex>",
//                  "liberal": 0.6, "conservative": 0.2, "neutral": 0.2}],
//    "stance_responses": {"liberal": "...", "conservative": "...", "neutral": "..."},
//    "default": "..."}
class ScriptedBackend final : public ModelBackend {
 public:
  ScriptedBackend(const nlohmann::json& config, std::shared_ptr<const Corpus> corpus = nullptr);

  const std::string& model_id() const noexcept override { return model_id_; }
  BackendKind kind() const noexcept override { return BackendKind::Scripted; }
  std::string generate(const std::string& prompt, std::chrono::milliseconds timeout) override;

  std::size_t calls() const noexcept { return calls_.load(); }

  // Exact per-stance counts for n questions (largest remainder, ties broken
  // liberal, conservative, neutral).
  static std::array<std::size_t, 3> apportion(const StanceMixture& mixture, std::size_t n);

 private:
  struct Rule {
    std::regex pattern;
    std::string response;
  };
  struct MixtureRule {
    std::optional<Topic> topic;  // nullopt = any
    std::optional<std::regex> when;
    StanceMixture mixture;
  };
  struct Located {
    Topic topic;
    std::size_t rank;   // position within the topic, ordered by id
    std::size_t count;  // questions in the topic
    const Question* question;
  };

  std::optional<Located> locate(const std::string& prompt) const;
  std::string render(const std::string& tmpl, const std::string& prompt,
                     const Question* question) const;

  std::string model_id_;
  std::vector<Rule> rules_;
  std::map<Topic, std::string> topic_responses_;
  std::vector<MixtureRule> mixtures_;
  std::array<std::string, 3> stance_responses_;  // liberal, conservative, neutral
  std::string default_response_;
  std::shared_ptr<const Corpus> corpus_;
  std::vector<Located> located_;  // one per corpus question, corpus order
  std::atomic<std::size_t> calls_{0};
};

struct RemoteBackendConfig {
  std::string model_id;
  std::string base_url;  // e.g. "http://127.0.0.1:8080/v1"
  std::string auth_header;
  std::string auth_value;
  int max_tokens = 512;
};

// POST {base_url}/generate {"model","prompt","max_tokens"} -> {"text"}.
class RemoteHttpBackend final : public ModelBackend {
 public:
  explicit RemoteHttpBackend(RemoteBackendConfig config);

  const std::string& model_id() const noexcept override { return config_.model_id; }
  BackendKind kind() const noexcept override { return BackendKind::RemoteHttp; }
  std::string generate(const std::string& prompt, std::chrono::milliseconds timeout) override;

 private:
  RemoteBackendConfig config_;
  std::string origin_;  // scheme://host[:port]
  std::string path_prefix_;
};

// Reads a backend spec: {"kind": "scripted", ...ScriptedBackend config} or
// {"kind": "remote", "model_id", "base_url", "auth_header", "auth_value",
//  "auth_value_env", "max_tokens"}. "script" may name a file with the scripted
// config, resolved against base_dir. An env var named by auth_value_env
// overrides auth_value.
std::unique_ptr<ModelBackend> make_backend(const nlohmann::json& spec,
                                           std::shared_ptr<const Corpus> corpus,
                                           const std::filesystem::path& base_dir = {});

struct IncoherenceConfig {
  std::size_t min_tokens = 3;
  std::vector<std::string> refusal_patterns = {
      R"(as an? (ai|intelligent chatbot|language model|ai language model|assistant)\b.*\b(no|not|don't|do not|cannot|can't)\b)",
      R"(\bi (hold|have) no (personal )?(viewpoint|opinion|view)s?\b)",
      R"(\bi (do not|don't) have (personal )?(opinions|views|beliefs|political views)\b)",
      R"(\bi (cannot|can't|am unable to) (answer|provide an opinion|take a (political )?(stance|side))\b)",
  };
};

class IncoherenceDetector {
 public:
  explicit IncoherenceDetector(IncoherenceConfig config = {});
  bool is_incoherent(std::string_view response) const;

 private:
  std::size_t min_tokens_;
  std::vector<std::regex> patterns_;
};

bool detect_incoherent(std::string_view response_text);

// model_id + NUL + prompt_text, SHA-256 hex.
std::string transcript_cache_key(std::string_view model_id, std::string_view prompt_text);

struct Transcript {
  std::string model_id;
  std::string question_id;
  Persona persona;
  std::string prompt_text;
  std::string response_text;
  bool coherent = true;
  std::string created_at;  // ISO-8601 UTC
  std::string cache_key;
  std::optional<std::string> error;  // failure record when set
  std::size_t attempts = 0;

  bool ok() const noexcept { return !error.has_value(); }
  // Every field except created_at.
  bool same_content(const Transcript& other) const;
};

nlohmann::json to_json(const Transcript& t);
Transcript transcript_from_json(const nlohmann::json& j);

std::string csv_escape(std::string_view field);

// Append-only JSONL store doubling as the response cache. Without a path it
// is memory-only. Appends from concurrent workers are serialized.
class TranscriptStore {
 public:
  TranscriptStore() = default;
  explicit TranscriptStore(std::filesystem::path path);

  std::optional<Transcript> lookup(const std::string& cache_key) const;
  // Failure records are not cached and not persisted.
  void append(const Transcript& transcript);

  std::vector<Transcript> all() const;
  std::size_t size() const;
  void export_csv(const std::filesystem::path& path) const;

 private:
  mutable std::mutex mutex_;
  std::filesystem::path path_;
  std::vector<Transcript> records_;
  std::map<std::string, std::size_t> by_key_;
};

std::vector<Transcript> read_transcripts(const std::filesystem::path& jsonl_path);

struct PromptRequest {
  std::string question_id;
  Persona persona;
  std::string prompt_text;
};

struct DispatchOptions {
  std::size_t max_parallel = 4;
  std::size_t retries = 3;  // extra attempts after the first
  std::chrono::milliseconds timeout{30000};
  std::chrono::milliseconds backoff_initial{200};
  std::chrono::milliseconds backoff_max{5000};
};

struct DispatchStats {
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t failures = 0;
};

// One transcript per request, order-aligned. Failures after the retry budget
// (or protocol errors) become failure records; nothing is dropped.
std::vector<Transcript> dispatch(ModelBackend& backend, const std::vector<PromptRequest>& prompts,
                                 const DispatchOptions& options, TranscriptStore& store,
                                 const IncoherenceDetector& detector = IncoherenceDetector{},
                                 DispatchStats* stats = nullptr);

}  // namespace polaudit
