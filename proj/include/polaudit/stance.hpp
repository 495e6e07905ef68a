#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "polaudit/error.hpp"
#include "polaudit/gateway.hpp"

namespace polaudit {

enum class StanceLabel { Conservative, Liberal, Neutral };

inline constexpr std::array<StanceLabel, 3> kAllLabels = {
    StanceLabel::Conservative, StanceLabel::Liberal, StanceLabel::Neutral};

std::string_view to_string(StanceLabel label);
// Accepts the lowercase names and the TrainingCode integers.
std::optional<StanceLabel> parse_stance_label(std::string_view text);

enum class LabelScheme {
  TrainingCode,        // Conservative 0, Liberal 1, Neutral 2
  SelfPerceptionCode,  // Conservative -1, Neutral 0, Liberal 1
};

int code_label(StanceLabel label, LabelScheme scheme);
// Throws ValidationError for codes outside the scheme.
StanceLabel decode_label(int code, LabelScheme scheme);

// "[CLS] " + question + " [SEP] " + response. Throws on empty question.
std::string encode_pair(std::string_view question_text, std::string_view response_text);

class UnparseableReply : public Error {
 public:
  using Error::Error;
};

std::optional<StanceLabel> try_parse_judge_reply(std::string_view text);
// Throws UnparseableReply when zero or several distinct stance words appear.
StanceLabel parse_judge_reply(std::string_view text);

struct ClassifyItem {
  std::string_view question_text;
  std::string_view response_text;
  std::string encoded;
};

enum class ClassifierKind { RemoteService, LlmJudge, Lexicon };

class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;
  virtual const std::string& classifier_id() const noexcept = 0;
  virtual ClassifierKind kind() const noexcept = 0;
  // One label per item, aligned. Throws ClassificationError / ProtocolError.
  virtual std::vector<StanceLabel> classify(std::span<const ClassifyItem> items) = 0;
  virtual bool concurrent_safe() const noexcept { return true; }
  // Preferred number of items per classify() call.
  virtual std::size_t batch_size() const noexcept { return 32; }
};

struct LexiconConfig {
  std::vector<std::string> liberal;
  std::vector<std::string> conservative;
  int min_margin = 1;
};

LexiconConfig parse_lexicon(const nlohmann::json& j);

// Counts case-insensitive term occurrences in the response text.
class LexiconClassifier final : public ClassifierBackend {
 public:
  explicit LexiconClassifier(LexiconConfig config, std::string id = "lexicon");

  const std::string& classifier_id() const noexcept override { return id_; }
  ClassifierKind kind() const noexcept override { return ClassifierKind::Lexicon; }
  std::vector<StanceLabel> classify(std::span<const ClassifyItem> items) override;

  StanceLabel label(std::string_view response_text) const;

 private:
  LexiconConfig config_;
  std::string id_;
};

struct RemoteClassifierConfig {
  std::string classifier_id = "remote";
  std::string base_url;
  std::string auth_header;
  std::string auth_value;
  std::size_t batch_size = 32;
  std::chrono::milliseconds timeout{60000};
};

// POST {base_url}/classify {"pairs": [...]} -> {"labels": [0|1|2], "scores": ...}.
class RemoteClassifier final : public ClassifierBackend {
 public:
  explicit RemoteClassifier(RemoteClassifierConfig config);

  const std::string& classifier_id() const noexcept override { return config_.classifier_id; }
  ClassifierKind kind() const noexcept override { return ClassifierKind::RemoteService; }
  std::vector<StanceLabel> classify(std::span<const ClassifyItem> items) override;
  std::size_t batch_size() const noexcept override { return config_.batch_size; }

 private:
  RemoteClassifierConfig config_;
  std::string origin_;
  std::string path_prefix_;
};

// Asks a model whether the answer is liberal, conservative or neutral.
// Unparseable replies fall back to Neutral and bump warnings().
class LlmJudgeClassifier final : public ClassifierBackend {
 public:
  explicit LlmJudgeClassifier(std::shared_ptr<ModelBackend> model,
                              DispatchOptions options = {});

  const std::string& classifier_id() const noexcept override { return id_; }
  ClassifierKind kind() const noexcept override { return ClassifierKind::LlmJudge; }
  std::vector<StanceLabel> classify(std::span<const ClassifyItem> items) override;
  bool concurrent_safe() const noexcept override { return model_->concurrent_safe(); }

  std::size_t warnings() const noexcept { return warnings_.load(); }

 private:
  std::shared_ptr<ModelBackend> model_;
  DispatchOptions options_;
  std::string id_;
  std::atomic<std::size_t> warnings_{0};
};

// {"kind": "lexicon", "config": <path or object>} | {"kind": "remote", ...}
// | {"kind": "judge", "model": <backend spec>}
std::unique_ptr<ClassifierBackend> make_classifier(const nlohmann::json& spec,
                                                   std::shared_ptr<const Corpus> corpus,
                                                   const std::filesystem::path& base_dir = {});

struct LabeledTranscript {
  Transcript transcript;
  StanceLabel label{};
  std::string classifier_id;
};

nlohmann::json to_json(const LabeledTranscript& lt);

struct ClassifyOptions {
  std::size_t width = 4;  // concurrent classify() calls
};

// Incoherent transcripts are labeled Neutral without consulting the backend.
// question_text(i) supplies the question for transcript i.
std::vector<LabeledTranscript> classify_batch(
    std::span<const Transcript> transcripts, ClassifierBackend& backend,
    const std::function<std::string(const Transcript&)>& question_text,
    const ClassifyOptions& options = {});

// Convenience overload resolving question text through the corpus.
std::vector<LabeledTranscript> classify_batch(std::span<const Transcript> transcripts,
                                              ClassifierBackend& backend, const Corpus& corpus,
                                              const ClassifyOptions& options = {});

}  // namespace polaudit
