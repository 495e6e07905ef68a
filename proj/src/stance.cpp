#include "polaudit/stance.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <mutex>
#include <thread>

#include "http_client.hpp"
#include "polaudit/error.hpp"

namespace polaudit {

using json = nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::size_t occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size()))
    ++n;
  return n;
}

json load_json_ref(const json& ref, const std::filesystem::path& base_dir) {
  if (!ref.is_string()) return ref;
  std::filesystem::path p = ref.get<std::string>();
  if (p.is_relative()) p = base_dir / p;
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("invalid JSON in " + p.string());
  return j;
}

}  // namespace

std::string_view to_string(StanceLabel label) {
  switch (label) {
    case StanceLabel::Conservative: return "conservative";
    case StanceLabel::Liberal: return "liberal";
    case StanceLabel::Neutral: return "neutral";
  }
  return "neutral";
}

std::optional<StanceLabel> parse_stance_label(std::string_view text) {
  auto t = lower(text);
  if (t == "conservative" || t == "0") return StanceLabel::Conservative;
  if (t == "liberal" || t == "1") return StanceLabel::Liberal;
  if (t == "neutral" || t == "2") return StanceLabel::Neutral;
  return std::nullopt;
}

int code_label(StanceLabel label, LabelScheme scheme) {
  if (scheme == LabelScheme::TrainingCode) {
    switch (label) {
      case StanceLabel::Conservative: return 0;
      case StanceLabel::Liberal: return 1;
      case StanceLabel::Neutral: return 2;
    }
  }
  switch (label) {
    case StanceLabel::Conservative: return -1;
    case StanceLabel::Neutral: return 0;
    case StanceLabel::Liberal: return 1;
  }
  return 0;
}

StanceLabel decode_label(int code, LabelScheme scheme) {
  if (scheme == LabelScheme::TrainingCode) {
    switch (code) {
      case 0: return StanceLabel::Conservative;
      case 1: return StanceLabel::Liberal;
      case 2: return StanceLabel::Neutral;
    }
  } else {
    switch (code) {
      case -1: return StanceLabel::Conservative;
      case 0: return StanceLabel::Neutral;
      case 1: return StanceLabel::Liberal;
    }
  }
  throw ValidationError("label code " + std::to_string(code) + " out of range");
}

std::string encode_pair(std::string_view question_text, std::string_view response_text) {
  if (question_text.empty()) throw ValidationError("encode_pair: empty question");
  std::string out = "[CLS] ";
  out += question_text;
  out += " [SEP] ";
  out += response_text;
  return out;
}

std::optional<StanceLabel> try_parse_judge_reply(std::string_view text) {
  auto t = lower(text);
  bool lib = t.find("liberal") != std::string::npos;
  bool con = t.find("conservative") != std::string::npos;
  bool neu = t.find("neutral") != std::string::npos;
  if (lib + con + neu != 1) return std::nullopt;
  if (lib) return StanceLabel::Liberal;
  if (con) return StanceLabel::Conservative;
  return StanceLabel::Neutral;
}

StanceLabel parse_judge_reply(std::string_view text) {
  if (auto label = try_parse_judge_reply(text)) return *label;
  throw UnparseableReply("judge reply names zero or several stances: \"" + std::string(text.substr(0, 120)) +
                         "\"");
}

// ---------------------------------------------------------------------------

LexiconConfig parse_lexicon(const json& j) {
  LexiconConfig c;
  try {
    for (const auto& t : j.value("liberal", json::array())) c.liberal.push_back(lower(t.get<std::string>()));
    for (const auto& t : j.value("conservative", json::array()))
      c.conservative.push_back(lower(t.get<std::string>()));
    c.min_margin = j.value("min_margin", 1);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad lexicon config: ") + e.what());
  }
  if (c.min_margin < 1) throw ConfigError("lexicon min_margin must be >= 1");
  return c;
}

LexiconClassifier::LexiconClassifier(LexiconConfig config, std::string id)
    : config_(std::move(config)), id_(std::move(id)) {
  for (auto& t : config_.liberal) t = lower(t);
  for (auto& t : config_.conservative) t = lower(t);
}

StanceLabel LexiconClassifier::label(std::string_view response_text) const {
  auto text = lower(response_text);
  long lib = 0, con = 0;
  for (const auto& t : config_.liberal) lib += static_cast<long>(occurrences(text, t));
  for (const auto& t : config_.conservative) con += static_cast<long>(occurrences(text, t));
  if (lib - con >= config_.min_margin) return StanceLabel::Liberal;
  if (con - lib >= config_.min_margin) return StanceLabel::Conservative;
  return StanceLabel::Neutral;
}

std::vector<StanceLabel> LexiconClassifier::classify(std::span<const ClassifyItem> items) {
  std::vector<StanceLabel> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(label(item.response_text));
  return out;
}

// ---------------------------------------------------------------------------

RemoteClassifier::RemoteClassifier(RemoteClassifierConfig config) : config_(std::move(config)) {
  auto ep = detail::parse_base_url(config_.base_url);
  origin_ = ep.origin;
  path_prefix_ = ep.path_prefix;
  if (config_.batch_size == 0) config_.batch_size = 1;
}

std::vector<StanceLabel> RemoteClassifier::classify(std::span<const ClassifyItem> items) {
  json pairs = json::array();
  for (const auto& item : items) pairs.push_back(item.encoded);
  auto reply = detail::post_json({origin_, path_prefix_}, "/classify",
                                 {{config_.auth_header, config_.auth_value}},
                                 json{{"pairs", pairs}}.dump(), config_.timeout);
  if (reply.status != 200) throw ProtocolError("classify: HTTP " + std::to_string(reply.status));
  json parsed = json::parse(reply.body, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("labels") ||
      !parsed["labels"].is_array())
    throw ProtocolError("classify: reply has no \"labels\" array");
  const auto& labels = parsed["labels"];
  if (labels.size() != items.size())
    throw ProtocolError("classify: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(items.size()) + " pairs");
  std::vector<StanceLabel> out;
  for (const auto& l : labels) {
    if (!l.is_number_integer()) throw ProtocolError("classify: non-integer label");
    try {
      out.push_back(decode_label(l.get<int>(), LabelScheme::TrainingCode));
    } catch (const ValidationError& e) {
      throw ProtocolError(std::string("classify: ") + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

LlmJudgeClassifier::LlmJudgeClassifier(std::shared_ptr<ModelBackend> model, DispatchOptions options)
    : model_(std::move(model)), options_(options), id_("judge:" + model_->model_id()) {}

std::vector<StanceLabel> LlmJudgeClassifier::classify(std::span<const ClassifyItem> items) {
  std::vector<PromptRequest> requests;
  for (const auto& item : items) {
    Question q{"", Topic::Healthcare, std::string(item.question_text), ""};
    requests.push_back({"", Persona::none(), build_self_perception_prompt(q, item.response_text)});
  }
  TranscriptStore scratch;
  IncoherenceDetector lenient(IncoherenceConfig{0, {}});
  auto replies = dispatch(*model_, requests, options_, scratch, lenient);
  std::vector<StanceLabel> out;
  std::vector<std::size_t> failed;
  for (std::size_t i = 0; i < replies.size(); ++i) {
    if (!replies[i].ok()) {
      failed.push_back(i);
      out.push_back(StanceLabel::Neutral);
      continue;
    }
    auto label = try_parse_judge_reply(replies[i].response_text);
    if (!label) ++warnings_;
    out.push_back(label.value_or(StanceLabel::Neutral));
  }
  if (!failed.empty()) throw ClassificationError("judge model failed", std::move(failed));
  return out;
}

std::unique_ptr<ClassifierBackend> make_classifier(const json& spec, std::shared_ptr<const Corpus> corpus,
                                                   const std::filesystem::path& base_dir) {
  auto kind = spec.value("kind", std::string{});
  if (kind == "lexicon") {
    if (!spec.contains("config")) throw ConfigError("lexicon classifier needs \"config\"");
    return std::make_unique<LexiconClassifier>(parse_lexicon(load_json_ref(spec["config"], base_dir)),
                                               spec.value("classifier_id", std::string("lexicon")));
  }
  if (kind == "remote") {
    RemoteClassifierConfig c;
    c.classifier_id = spec.value("classifier_id", std::string("remote"));
    c.base_url = spec.value("base_url", std::string{});
    c.auth_header = spec.value("auth_header", std::string{});
    c.auth_value = spec.value("auth_value", std::string{});
    if (auto env = spec.value("auth_value_env", std::string{}); !env.empty())
      if (const char* v = std::getenv(env.c_str())) c.auth_value = v;
    c.batch_size = spec.value("batch_size", std::size_t{32});
    c.timeout = std::chrono::milliseconds(spec.value("timeout_ms", 60000));
    return std::make_unique<RemoteClassifier>(std::move(c));
  }
  if (kind == "judge") {
    if (!spec.contains("model")) throw ConfigError("judge classifier needs \"model\"");
    std::shared_ptr<ModelBackend> model = make_backend(spec["model"], std::move(corpus), base_dir);
    return std::make_unique<LlmJudgeClassifier>(std::move(model));
  }
  throw ConfigError("unknown classifier kind \"" + kind + "\"");
}

json to_json(const LabeledTranscript& lt) {
  json j = to_json(lt.transcript);
  j["label"] = to_string(lt.label);
  j["label_code"] = code_label(lt.label, LabelScheme::TrainingCode);
  j["classifier_id"] = lt.classifier_id;
  return j;
}

// ---------------------------------------------------------------------------

std::vector<LabeledTranscript> classify_batch(std::span<const Transcript> transcripts,
                                              ClassifierBackend& backend,
                                              const std::function<std::string(const Transcript&)>& question_text,
                                              const ClassifyOptions& options) {
  if (transcripts.empty()) throw ValidationError("classify_batch: no transcripts");
  std::vector<LabeledTranscript> out(transcripts.size());
  std::vector<std::string> questions(transcripts.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    const auto& t = transcripts[i];
    if (!t.ok()) throw ValidationError("classify_batch: transcript " + std::to_string(i) + " is a failure record");
    out[i].transcript = t;
    out[i].classifier_id = backend.classifier_id();
    out[i].label = StanceLabel::Neutral;
    if (t.coherent) {
      questions[i] = question_text(t);
      pending.push_back(i);
    }
  }

  const std::size_t chunk = std::max<std::size_t>(1, backend.batch_size());
  const std::size_t chunks = (pending.size() + chunk - 1) / chunk;
  std::atomic<std::size_t> next{0};
  std::mutex failed_mutex;
  std::vector<std::size_t> failed;
  std::string first_error;

  auto work = [&] {
    for (std::size_t c = next++; c < chunks; c = next++) {
      auto begin = pending.begin() + static_cast<std::ptrdiff_t>(c * chunk);
      auto end = pending.begin() + static_cast<std::ptrdiff_t>(std::min(pending.size(), (c + 1) * chunk));
      std::vector<ClassifyItem> items;
      for (auto it = begin; it != end; ++it)
        items.push_back({questions[*it], transcripts[*it].response_text,
                         encode_pair(questions[*it], transcripts[*it].response_text)});
      try {
        auto labels = backend.classify(items);
        if (labels.size() != items.size()) throw ProtocolError("classifier returned wrong label count");
        for (std::size_t k = 0; k < items.size(); ++k) out[*(begin + static_cast<std::ptrdiff_t>(k))].label = labels[k];
      } catch (const ClassificationError& e) {
        std::lock_guard lock(failed_mutex);
        if (first_error.empty()) first_error = e.what();
        for (auto k : e.failed_indices()) failed.push_back(*(begin + static_cast<std::ptrdiff_t>(k)));
      } catch (const std::exception& e) {
        std::lock_guard lock(failed_mutex);
        if (first_error.empty()) first_error = e.what();
        failed.insert(failed.end(), begin, end);
      }
    }
  };

  std::size_t width = backend.concurrent_safe() ? std::max<std::size_t>(1, options.width) : 1;
  width = std::min(width, chunks);
  if (width <= 1) {
    work();
  } else {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < width; ++w) workers.emplace_back(work);
  }
  if (!failed.empty()) {
    std::sort(failed.begin(), failed.end());
    throw ClassificationError("classification failed for " + std::to_string(failed.size()) +
                                  " transcript(s): " + first_error,
                              std::move(failed));
  }
  return out;
}

std::vector<LabeledTranscript> classify_batch(std::span<const Transcript> transcripts,
                                              ClassifierBackend& backend, const Corpus& corpus,
                                              const ClassifyOptions& options) {
  return classify_batch(
      transcripts, backend,
      [&](const Transcript& t) {
        if (const auto* q = corpus.find(t.question_id)) return q->text;
        return t.prompt_text;
      },
      options);
}

}  // namespace polaudit
