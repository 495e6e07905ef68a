#include "polaudit/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "polaudit/error.hpp"

namespace polaudit {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, 8> kTopicNames = {
    "Healthcare",  "Abortion",       "Immigration",   "Race & Identity",
    "Gun Control", "Climate Change", "LGBTQ+ Rights", "Economic Inequality",
};

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string require_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw ParseError(std::string("missing string field \"") + key + "\"", line);
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(Topic topic) { return kTopicNames[static_cast<std::size_t>(topic)]; }

std::optional<Topic> parse_topic(std::string_view name) {
  for (std::size_t i = 0; i < kTopicNames.size(); ++i)
    if (kTopicNames[i] == name) return static_cast<Topic>(i);
  return std::nullopt;
}

Corpus::Corpus(std::vector<Question> questions) : questions_(std::move(questions)) {
  for (std::size_t i = 0; i < questions_.size(); ++i) {
    const auto& q = questions_[i];
    if (q.id.empty()) throw ValidationError("question with empty id");
    if (blank(q.text)) throw ValidationError("question \"" + q.id + "\" has empty text");
    if (!index_.emplace(q.id, i).second) throw ValidationError("duplicate question id \"" + q.id + "\"");
  }
}

std::vector<Topic> Corpus::topics() const {
  std::set<Topic> seen;
  for (const auto& q : questions_) seen.insert(q.topic);
  return {seen.begin(), seen.end()};
}

std::vector<const Question*> Corpus::by_topic(Topic topic) const {
  std::vector<const Question*> out;
  for (const auto& q : questions_)
    if (q.topic == topic) out.push_back(&q);
  return out;
}

const Question* Corpus::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &questions_[it->second];
}

Corpus parse_corpus(std::istream& in) {
  std::vector<Question> questions;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (blank(line)) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!row.is_object()) throw ParseError("record is not a JSON object", lineno);
    Question q;
    q.id = require_string(row, "id", lineno);
    auto topic_name = require_string(row, "topic", lineno);
    auto topic = parse_topic(topic_name);
    if (!topic) throw ParseError("unknown topic \"" + topic_name + "\"", lineno);
    q.topic = *topic;
    q.text = require_string(row, "text", lineno);
    if (row.contains("source")) q.source = require_string(row, "source", lineno);
    if (q.id.empty()) throw ParseError("empty id", lineno);
    if (blank(q.text)) throw ParseError("empty text for \"" + q.id + "\"", lineno);
    if (!ids.insert(q.id).second) throw ParseError("duplicate question id \"" + q.id + "\"", lineno);
    questions.push_back(std::move(q));
  }
  return Corpus(std::move(questions));
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus " + path.string());
  return parse_corpus(in);
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& q : corpus.questions()) {
    nlohmann::ordered_json row;
    row["id"] = q.id;
    row["topic"] = to_string(q.topic);
    row["text"] = q.text;
    row["source"] = q.source;
    out += row.dump();
    out += '\n';
  }
  return out;
}

std::vector<QuizQuestion> parse_quiz(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid quiz JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("questions") || !doc["questions"].is_array())
    throw ParseError("quiz must be an object with a \"questions\" array");
  std::vector<QuizQuestion> quiz;
  std::set<std::string> ids;
  for (const auto& item : doc["questions"]) {
    QuizQuestion q;
    q.id = item.value("id", std::string{});
    q.text = item.value("text", std::string{});
    if (q.id.empty()) throw ValidationError("quiz question without id");
    if (!ids.insert(q.id).second) throw ValidationError("duplicate quiz question id \"" + q.id + "\"");
    if (!item.contains("options") || !item["options"].is_array())
      throw ValidationError("quiz question \"" + q.id + "\" has no options");
    for (const auto& opt : item["options"]) {
      if (!opt.contains("weight") || !opt["weight"].is_number())
        throw ValidationError("option without numeric weight in \"" + q.id + "\"");
      QuizOption o{opt.value("text", std::string{}), opt["weight"].get<double>()};
      if (!(o.weight >= -1.0 && o.weight <= 1.0))
        throw ValidationError("option weight " + std::to_string(o.weight) + " outside [-1, 1] in \"" +
                              q.id + "\"");
      q.options.push_back(std::move(o));
    }
    if (q.options.size() < 2)
      throw ValidationError("quiz question \"" + q.id + "\" needs at least 2 options");
    quiz.push_back(std::move(q));
  }
  if (quiz.empty()) throw ValidationError("quiz has no questions");
  return quiz;
}

std::vector<QuizQuestion> load_quiz(const std::filesystem::path& path) {
  return parse_quiz(read_file(path));
}

}  // namespace polaudit
