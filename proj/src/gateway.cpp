#include "polaudit/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <ctime>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "http_client.hpp"
#include "polaudit/error.hpp"
#include "polaudit/hash.hpp"

namespace polaudit {

using json = nlohmann::json;

namespace {

constexpr auto kIcase = std::regex::ECMAScript | std::regex::icase;

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

std::string utc_now() {
  auto now = std::chrono::system_clock::now();
  auto t = std::chrono::system_clock::to_time_t(now);
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

StanceMixture mixture_from_json(const json& j) {
  StanceMixture m{j.value("liberal", 0.0), j.value("conservative", 0.0), j.value("neutral", 0.0)};
  if (m.liberal < 0 || m.conservative < 0 || m.neutral < 0 ||
      m.liberal + m.conservative + m.neutral <= 0)
    throw ConfigError("stance mixture needs non-negative weights with a positive sum");
  return m;
}

json persona_to_json(const Persona& p) {
  json j{{"kind", to_string(p.kind)}};
  if (!p.value.empty()) j["value"] = p.value;
  if (!p.industry.empty()) j["industry"] = p.industry;
  return j;
}

Persona persona_from_json(const json& j) {
  Persona p;
  auto kind = parse_persona_kind(j.value("kind", std::string("none")));
  if (!kind) throw ParseError("unknown persona kind");
  p.kind = *kind;
  p.value = j.value("value", std::string{});
  p.industry = j.value("industry", std::string{});
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scripted backend

ScriptedBackend::ScriptedBackend(const json& config, std::shared_ptr<const Corpus> corpus)
    : corpus_(std::move(corpus)) {
  model_id_ = config.value("model_id", std::string{});
  if (model_id_.empty()) throw ConfigError("scripted backend needs a model_id");
  try {
    for (const auto& r : config.value("rules", json::array()))
      rules_.push_back({std::regex(r.at("pattern").get<std::string>(), kIcase),
                        r.at("response").get<std::string>()});
    for (const auto& m : config.value("mixtures", json::array())) {
      MixtureRule rule;
      auto topic = m.value("topic", std::string("*"));
      if (topic != "*") {
        rule.topic = parse_topic(topic);
        if (!rule.topic) throw ConfigError("unknown topic \"" + topic + "\" in mixture");
      }
      if (m.contains("when")) rule.when = std::regex(m["when"].get<std::string>(), kIcase);
      rule.mixture = mixture_from_json(m);
      mixtures_.push_back(std::move(rule));
    }
  } catch (const std::regex_error& e) {
    throw ConfigError(std::string("bad regex in scripted backend: ") + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad scripted backend config: ") + e.what());
  }
  const json topics = config.value("topics", json::object());
  for (const auto& [name, text] : topics.items()) {
    auto topic = parse_topic(name);
    if (!topic) throw ConfigError("unknown topic \"" + name + "\" in scripted responses");
    if (!text.is_string()) throw ConfigError("scripted response for \"" + name + "\" must be a string");
    topic_responses_[*topic] = text.get<std::string>();
  }
  auto stance = config.value("stance_responses", json::object());
  stance_responses_ = {stance.value("liberal", std::string{}), stance.value("conservative", std::string{}),
                       stance.value("neutral", std::string{})};
  if (!mixtures_.empty() &&
      std::any_of(stance_responses_.begin(), stance_responses_.end(), [](auto& s) { return s.empty(); }))
    throw ConfigError("mixtures require liberal, conservative and neutral stance_responses");
  default_response_ = config.value("default", std::string{});

  if (corpus_) {
    located_.resize(corpus_->size());
    for (Topic topic : corpus_->topics()) {
      auto qs = corpus_->by_topic(topic);
      std::sort(qs.begin(), qs.end(), [](auto* a, auto* b) { return a->id < b->id; });
      for (std::size_t rank = 0; rank < qs.size(); ++rank) {
        auto idx = static_cast<std::size_t>(qs[rank] - corpus_->questions().data());
        located_[idx] = {topic, rank, qs.size(), qs[rank]};
      }
    }
  }
}

std::array<std::size_t, 3> ScriptedBackend::apportion(const StanceMixture& m, std::size_t n) {
  const std::array<double, 3> p = {m.liberal, m.conservative, m.neutral};
  const double sum = p[0] + p[1] + p[2];
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    double quota = p[i] / sum * static_cast<double>(n);
    // Absorb representation error so that e.g. 0.6 * 30 yields exactly 18.
    double rounded = std::round(quota);
    if (std::abs(quota - rounded) < 1e-9) quota = rounded;
    counts[i] = static_cast<std::size_t>(std::floor(quota));
    rem[i] = quota - std::floor(quota);
    assigned += counts[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

std::optional<ScriptedBackend::Located> ScriptedBackend::locate(const std::string& prompt) const {
  const Located* best = nullptr;
  for (const auto& loc : located_) {
    if (!loc.question || !prompt.ends_with(loc.question->text)) continue;
    if (!best || loc.question->text.size() > best->question->text.size()) best = &loc;
  }
  if (!best) return std::nullopt;
  return *best;
}

std::string ScriptedBackend::render(const std::string& tmpl, const std::string& prompt,
                                    const Question* question) const {
  std::string out = tmpl;
  replace_all(out, "{prompt}", prompt);
  if (question) {
    replace_all(out, "{question}", question->text);
    replace_all(out, "{topic}", to_string(question->topic));
  }
  return out;
}

std::string ScriptedBackend::generate(const std::string& prompt, std::chrono::milliseconds) {
  ++calls_;
  for (const auto& rule : rules_)
    if (std::regex_search(prompt, rule.pattern)) return render(rule.response, prompt, nullptr);
  auto loc = locate(prompt);
  if (loc) {
    for (const auto& m : mixtures_) {
      if (m.topic && *m.topic != loc->topic) continue;
      if (m.when && !std::regex_search(prompt, *m.when)) continue;
      auto counts = apportion(m.mixture, loc->count);
      std::size_t stance = loc->rank < counts[0] ? 0 : loc->rank < counts[0] + counts[1] ? 1 : 2;
      return render(stance_responses_[stance], prompt, loc->question);
    }
    if (auto it = topic_responses_.find(loc->topic); it != topic_responses_.end())
      return render(it->second, prompt, loc->question);
  }
  return render(default_response_, prompt, loc ? loc->question : nullptr);
}

// ---------------------------------------------------------------------------
// Remote backend

RemoteHttpBackend::RemoteHttpBackend(RemoteBackendConfig config) : config_(std::move(config)) {
  if (config_.model_id.empty()) throw ConfigError("remote backend needs a model_id");
  auto ep = detail::parse_base_url(config_.base_url);
  origin_ = ep.origin;
  path_prefix_ = ep.path_prefix;
}

std::string RemoteHttpBackend::generate(const std::string& prompt, std::chrono::milliseconds timeout) {
  json body{{"model", config_.model_id}, {"prompt", prompt}, {"max_tokens", config_.max_tokens}};
  auto reply = detail::post_json({origin_, path_prefix_}, "/generate",
                                 {{config_.auth_header, config_.auth_value}}, body.dump(), timeout);
  if (reply.status == 429 || reply.status >= 500)
    throw TransientError("generate: HTTP " + std::to_string(reply.status));
  if (reply.status != 200) throw ProtocolError("generate: HTTP " + std::to_string(reply.status));
  json parsed = json::parse(reply.body, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("text") || !parsed["text"].is_string())
    throw ProtocolError("generate: reply is not {\"text\": string}");
  return parsed["text"].get<std::string>();
}

std::unique_ptr<ModelBackend> make_backend(const json& spec, std::shared_ptr<const Corpus> corpus,
                                           const std::filesystem::path& base_dir) {
  auto kind = spec.value("kind", std::string{});
  if (kind == "scripted") {
    json config = spec;
    if (spec.contains("script")) {
      const auto& script = spec["script"];
      if (script.is_string()) {
        std::filesystem::path p = script.get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        std::ifstream in(p);
        if (!in) throw ConfigError("cannot open script " + p.string());
        config = json::parse(in, nullptr, false);
        if (config.is_discarded()) throw ConfigError("invalid JSON in script " + p.string());
      } else {
        config = script;
      }
      if (spec.contains("model_id")) config["model_id"] = spec["model_id"];
    }
    return std::make_unique<ScriptedBackend>(config, std::move(corpus));
  }
  if (kind == "remote") {
    RemoteBackendConfig c;
    c.model_id = spec.value("model_id", std::string{});
    c.base_url = spec.value("base_url", std::string{});
    c.auth_header = spec.value("auth_header", std::string{});
    c.auth_value = spec.value("auth_value", std::string{});
    if (auto env = spec.value("auth_value_env", std::string{}); !env.empty())
      if (const char* v = std::getenv(env.c_str())) c.auth_value = v;
    c.max_tokens = spec.value("max_tokens", 512);
    return std::make_unique<RemoteHttpBackend>(std::move(c));
  }
  throw ConfigError("unknown backend kind \"" + kind + "\"");
}

// ---------------------------------------------------------------------------
// Incoherence

IncoherenceDetector::IncoherenceDetector(IncoherenceConfig config) : min_tokens_(config.min_tokens) {
  for (const auto& p : config.refusal_patterns) {
    try {
      patterns_.emplace_back(p, kIcase);
    } catch (const std::regex_error& e) {
      throw ConfigError("bad refusal pattern \"" + p + "\": " + e.what());
    }
  }
}

bool IncoherenceDetector::is_incoherent(std::string_view response) const {
  std::size_t tokens = 0;
  bool in_token = false;
  for (unsigned char c : response) {
    bool ws = std::isspace(c);
    if (!ws && !in_token) ++tokens;
    in_token = !ws;
  }
  if (tokens == 0 || tokens < min_tokens_) return true;
  std::string text(response);
  return std::any_of(patterns_.begin(), patterns_.end(),
                     [&](const std::regex& re) { return std::regex_search(text, re); });
}

bool detect_incoherent(std::string_view response_text) {
  static const IncoherenceDetector detector;
  return detector.is_incoherent(response_text);
}

// ---------------------------------------------------------------------------
// Transcripts

std::string transcript_cache_key(std::string_view model_id, std::string_view prompt_text) {
  std::string material(model_id);
  material += '\0';
  material += prompt_text;
  return sha256_hex(material);
}

bool Transcript::same_content(const Transcript& o) const {
  return model_id == o.model_id && question_id == o.question_id && persona == o.persona &&
         prompt_text == o.prompt_text && response_text == o.response_text && coherent == o.coherent &&
         cache_key == o.cache_key && error == o.error;
}

json to_json(const Transcript& t) {
  json j{{"model_id", t.model_id},       {"question_id", t.question_id},
         {"persona", persona_to_json(t.persona)}, {"prompt_text", t.prompt_text},
         {"response_text", t.response_text}, {"coherent", t.coherent},
         {"created_at", t.created_at},   {"cache_key", t.cache_key},
         {"attempts", t.attempts}};
  if (t.error) j["error"] = *t.error;
  return j;
}

Transcript transcript_from_json(const json& j) {
  try {
    Transcript t;
    t.model_id = j.at("model_id").get<std::string>();
    t.question_id = j.at("question_id").get<std::string>();
    t.persona = persona_from_json(j.value("persona", json::object()));
    t.prompt_text = j.at("prompt_text").get<std::string>();
    t.response_text = j.value("response_text", std::string{});
    t.coherent = j.value("coherent", true);
    t.created_at = j.value("created_at", std::string{});
    t.cache_key = j.value("cache_key", std::string{});
    if (t.cache_key.empty()) t.cache_key = transcript_cache_key(t.model_id, t.prompt_text);
    t.attempts = j.value("attempts", std::size_t{0});
    if (j.contains("error") && j["error"].is_string()) t.error = j["error"].get<std::string>();
    return t;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad transcript record: ") + e.what());
  }
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<Transcript> read_transcripts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open transcripts " + path.string());
  std::vector<Transcript> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("invalid transcript JSON", lineno);
    out.push_back(transcript_from_json(j));
  }
  return out;
}

TranscriptStore::TranscriptStore(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(path_)) {
    for (auto& t : read_transcripts(path_)) {
      if (!t.ok() || by_key_.count(t.cache_key)) continue;
      by_key_[t.cache_key] = records_.size();
      records_.push_back(std::move(t));
    }
  } else if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
}

std::optional<Transcript> TranscriptStore::lookup(const std::string& cache_key) const {
  std::lock_guard lock(mutex_);
  auto it = by_key_.find(cache_key);
  if (it == by_key_.end()) return std::nullopt;
  return records_[it->second];
}

void TranscriptStore::append(const Transcript& t) {
  if (!t.ok()) return;
  std::lock_guard lock(mutex_);
  if (by_key_.count(t.cache_key)) return;
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot append to " + path_.string());
    out << to_json(t).dump() << '\n';
  }
  by_key_[t.cache_key] = records_.size();
  records_.push_back(t);
}

std::vector<Transcript> TranscriptStore::all() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::size_t TranscriptStore::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

void TranscriptStore::export_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "model_id,question_id,persona_kind,persona_value,prompt_text,response_text,coherent,created_at,"
         "cache_key\n";
  for (const auto& t : all()) {
    out << csv_escape(t.model_id) << ',' << csv_escape(t.question_id) << ','
        << to_string(t.persona.kind) << ',' << csv_escape(t.persona.value) << ','
        << csv_escape(t.prompt_text) << ',' << csv_escape(t.response_text) << ','
        << (t.coherent ? "true" : "false") << ',' << t.created_at << ',' << t.cache_key << '\n';
  }
}

// ---------------------------------------------------------------------------
// Dispatch

std::vector<Transcript> dispatch(ModelBackend& backend, const std::vector<PromptRequest>& prompts,
                                 const DispatchOptions& options, TranscriptStore& store,
                                 const IncoherenceDetector& detector, DispatchStats* stats) {
  if (prompts.empty()) return {};
  const auto& model_id = backend.model_id();

  // Identical prompts share one backend call.
  std::vector<std::string> keys(prompts.size());
  std::map<std::string, std::size_t> unique_index;
  std::vector<std::size_t> unique_first;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    keys[i] = transcript_cache_key(model_id, prompts[i].prompt_text);
    if (unique_index.emplace(keys[i], unique_first.size()).second) unique_first.push_back(i);
  }

  std::vector<Transcript> resolved(unique_first.size());
  std::atomic<std::size_t> next{0}, calls{0}, hits{0};
  std::mutex error_mutex;
  std::exception_ptr worker_error;

  auto drain = [&] {
    for (std::size_t u = next++; u < unique_first.size(); u = next++) {
      const auto& req = prompts[unique_first[u]];
      const auto& key = keys[unique_first[u]];
      if (auto cached = store.lookup(key)) {
        ++hits;
        resolved[u] = std::move(*cached);
        continue;
      }
      Transcript t;
      t.model_id = model_id;
      t.question_id = req.question_id;
      t.persona = req.persona;
      t.prompt_text = req.prompt_text;
      t.cache_key = key;
      auto delay = options.backoff_initial;
      for (std::size_t attempt = 0; attempt <= options.retries; ++attempt) {
        ++t.attempts;
        ++calls;
        try {
          t.response_text = backend.generate(req.prompt_text, options.timeout);
          t.error.reset();
          break;
        } catch (const TransientError& e) {
          t.error = e.what();
        } catch (const std::exception& e) {
          t.error = e.what();
          break;
        }
        if (attempt < options.retries && delay.count() > 0) {
          std::this_thread::sleep_for(delay);
          delay = std::min(delay * 2, options.backoff_max);
        }
      }
      t.created_at = utc_now();
      if (t.ok()) {
        t.coherent = !detector.is_incoherent(t.response_text);
        store.append(t);
      } else {
        t.coherent = false;
      }
      resolved[u] = std::move(t);
    }
  };
  auto work = [&] {
    try {
      drain();
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!worker_error) worker_error = std::current_exception();
      next = unique_first.size();
    }
  };

  std::size_t width = backend.concurrent_safe() ? std::max<std::size_t>(1, options.max_parallel) : 1;
  width = std::min(width, unique_first.size());
  if (width <= 1) {
    work();
  } else {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < width; ++w) workers.emplace_back(work);
  }
  if (worker_error) std::rethrow_exception(worker_error);

  std::vector<Transcript> out;
  out.reserve(prompts.size());
  std::size_t failures = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Transcript t = resolved[unique_index[keys[i]]];
    t.question_id = prompts[i].question_id;
    t.persona = prompts[i].persona;
    if (!t.ok()) ++failures;
    out.push_back(std::move(t));
  }
  if (stats) {
    stats->backend_calls += calls;
    stats->cache_hits += hits;
    stats->failures += failures;
  }
  return out;
}

}  // namespace polaudit
