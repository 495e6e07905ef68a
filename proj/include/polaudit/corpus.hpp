#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace polaudit {

enum class Topic {
  Healthcare,
  Abortion,
  Immigration,
  RaceIdentity,
  GunControl,
  ClimateChange,
  LgbtqRights,
  EconomicInequality,
};

inline constexpr std::array<Topic, 8> kAllTopics = {
    Topic::Healthcare,  Topic::Abortion,      Topic::Immigration, Topic::RaceIdentity,
    Topic::GunControl,  Topic::ClimateChange, Topic::LgbtqRights, Topic::EconomicInequality,
};

// Wire name, e.g. "Race & Identity".
std::string_view to_string(Topic topic);
std::optional<Topic> parse_topic(std::string_view name);

struct Question {
  std::string id;
  Topic topic{};
  std::string text;
  std::string source;  // "survey-derived" | "model-expanded"

  bool operator==(const Question&) const = default;
};

class Corpus {
 public:
  Corpus() = default;
  // Validates ids, topics and text; throws ValidationError.
  explicit Corpus(std::vector<Question> questions);

  const std::vector<Question>& questions() const noexcept { return questions_; }
  std::size_t size() const noexcept { return questions_.size(); }
  bool empty() const noexcept { return questions_.empty(); }

  // Topics that have at least one question, in enum order.
  std::vector<Topic> topics() const;
  std::vector<const Question*> by_topic(Topic topic) const;
  const Question* find(std::string_view id) const;

  bool operator==(const Corpus& other) const { return questions_ == other.questions_; }

 private:
  std::vector<Question> questions_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Line-delimited JSON records {"id","topic","text","source"}.
Corpus parse_corpus(std::istream& in);
Corpus load_corpus(const std::filesystem::path& path);
std::string serialize_corpus(const Corpus& corpus);

struct QuizOption {
  std::string text;
  double weight = 0.0;  // [-1, +1], positive = liberal
};

struct QuizQuestion {
  std::string id;
  std::string text;
  std::vector<QuizOption> options;
};

std::vector<QuizQuestion> parse_quiz(std::string_view json_text);
std::vector<QuizQuestion> load_quiz(const std::filesystem::path& path);

}  // namespace polaudit
