#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "polaudit/corpus.hpp"
#include "polaudit/persona.hpp"
#include "polaudit/stance.hpp"

namespace polaudit {

struct GroupKey {
  std::string model_id;
  std::string attribute;  // topic, occupation or race
  std::optional<Party> steering;

  auto operator<=>(const GroupKey&) const = default;
};

struct StanceCounts {
  std::size_t liberal = 0;
  std::size_t conservative = 0;
  std::size_t neutral = 0;

  std::size_t total() const noexcept { return liberal + conservative + neutral; }
  void add(StanceLabel label) noexcept;
  std::size_t operator[](StanceLabel label) const noexcept;
  bool operator==(const StanceCounts&) const = default;
};

enum class BiasKind { Indirect, Direct, Susceptibility };

struct BiasScore {
  BiasKind kind{};
  double value = 0.0;  // [-1, 1], positive = liberal-leaning
  GroupKey group;
};

using GroupExtractor = std::function<GroupKey(const LabeledTranscript&)>;

std::map<GroupKey, StanceCounts> tally(std::span<const LabeledTranscript> labeled,
                                       const GroupExtractor& group_by);

// (L - C) / (L + N + C). Throws UndefinedGroupError on an empty group.
double indirect_bias(const StanceCounts& counts);

// (dem.L - rep.C) / per-condition total. Both conditions must cover the same
// number of prompts.
double direct_bias(const StanceCounts& democrat, const StanceCounts& republican);

// (L - C) / (L + N + C) within one steered condition.
double susceptibility(const StanceCounts& steered);

// Strict argmax; any tie for the maximum yields Neutral.
StanceLabel majority_stance(const StanceCounts& counts);

double cohen_kappa(std::span<const StanceLabel> a, std::span<const StanceLabel> b);

inline constexpr double kAgreementThreshold = 0.8;

using RaterPair = std::pair<std::string, std::string>;

struct GateReport {
  bool passed = false;
  double threshold = kAgreementThreshold;
  std::vector<std::pair<RaterPair, double>> failing;
};

// Passes iff every pairwise kappa >= threshold (inclusive).
GateReport agreement_gate(const std::map<RaterPair, double>& kappas,
                          double threshold = kAgreementThreshold);

double label_accuracy(std::span<const StanceLabel> predicted, std::span<const StanceLabel> truth);

struct LabelDistribution {
  double liberal = 0.0;  // percentages, 0..100
  double conservative = 0.0;
  double neutral = 0.0;
};

LabelDistribution distribution(std::span<const StanceLabel> labels);

struct SelfPerceptionReport {
  LabelDistribution self;          // outer donut: the model's own verdicts
  LabelDistribution ground_truth;  // inner donut: classifier labels
  double accuracy = 0.0;
  std::size_t n = 0;
};

SelfPerceptionReport self_perception_report(std::span<const StanceLabel> self_labels,
                                            std::span<const StanceLabel> ground_truth);

// question id -> chosen option index
using QuizAnswers = std::map<std::string, std::size_t>;

// Mean chosen-option weight over answered questions.
double pew_score(const QuizAnswers& answers, std::span<const QuizQuestion> quiz);

struct Segment {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
};

// Validated contiguous partition of [-1, 1].
class SegmentMap {
 public:
  explicit SegmentMap(std::vector<Segment> segments);

  // Lower-inclusive; the top segment also contains 1.0.
  const Segment& lookup(double score) const;
  const std::vector<Segment>& segments() const noexcept { return segments_; }

 private:
  std::vector<Segment> segments_;
};

SegmentMap parse_segments(std::string_view json_text);
SegmentMap load_segments(const std::filesystem::path& path);

}  // namespace polaudit
