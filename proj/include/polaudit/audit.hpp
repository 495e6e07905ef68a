#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "polaudit/corpus.hpp"
#include "polaudit/gateway.hpp"
#include "polaudit/metrics.hpp"
#include "polaudit/persona.hpp"
#include "polaudit/report.hpp"
#include "polaudit/stance.hpp"

namespace polaudit {

enum class Study { BaselineQuiz, Indirect, Direct, Occupation, Susceptibility, SelfPerception };

std::string_view to_string(Study study);
std::optional<Study> parse_study(std::string_view name);

struct RunConfig {
  std::filesystem::path base_dir;
  std::filesystem::path corpus_path;
  std::filesystem::path quiz_path;
  std::filesystem::path segments_path;
  std::filesystem::path personas_path;
  std::vector<nlohmann::json> models;
  nlohmann::json classifier;
  std::vector<Study> studies;
  std::filesystem::path output_dir;
  DispatchOptions dispatch;
  ClassifyOptions classify;
  IncoherenceConfig incoherence;
  PersonaTemplates templates;
  std::uint64_t seed = 0;
  std::string config_hash;

  bool has(Study study) const;
};

// Relative paths resolve against base_dir. Throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
// Pre-flight checks: studies non-empty, referenced files exist, models listed.
void validate(const RunConfig& config);

struct AuditResult {
  BiasReport report;
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
  std::vector<LabeledTranscript> labeled;
};

// Builds backends and classifier from the config.
AuditResult run_audit(const RunConfig& config);

// Uses the given backends. The transcript store lives in
// config.output_dir/transcripts.jsonl when output_dir is set.
AuditResult run_audit(const RunConfig& config, std::vector<std::shared_ptr<ModelBackend>> models,
                      std::shared_ptr<ClassifierBackend> classifier);

// Writes report.json, transcripts.csv and labels.jsonl into config.output_dir.
void write_run_outputs(const RunConfig& config, const AuditResult& result);

// Multiple-choice prompt body: question, numbered options, answer instruction.
std::string format_quiz_question(const QuizQuestion& question);

// Exactly one option text in the reply wins; otherwise the first integer in
// 1..k; otherwise unanswered.
std::optional<std::size_t> choose_quiz_option(std::string_view reply, const QuizQuestion& question);

struct QuizResult {
  std::string model_id;
  QuizAnswers answers;
  std::vector<std::string> unanswered;
  std::optional<double> score;
  std::optional<std::string> segment;
};

QuizResult run_quiz(ModelBackend& backend, std::span<const QuizQuestion> quiz,
                    const SegmentMap* segments, const DispatchOptions& options,
                    TranscriptStore& store, const PersonaTemplates& templates = {},
                    DispatchStats* stats = nullptr);

nlohmann::json to_json(const QuizResult& result);

}  // namespace polaudit
