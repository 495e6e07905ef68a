#include "polaudit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "polaudit/error.hpp"

namespace polaudit {

namespace {

double normalized_gap(std::size_t a, std::size_t b, std::size_t total) {
  return (static_cast<double>(a) - static_cast<double>(b)) / static_cast<double>(total);
}

void require_nonempty(const StanceCounts& c, const char* what) {
  if (c.total() == 0) throw UndefinedGroupError(std::string(what) + ": group has no responses");
}

std::size_t index_of(StanceLabel l) { return static_cast<std::size_t>(l); }

}  // namespace

void StanceCounts::add(StanceLabel label) noexcept {
  switch (label) {
    case StanceLabel::Liberal: ++liberal; break;
    case StanceLabel::Conservative: ++conservative; break;
    case StanceLabel::Neutral: ++neutral; break;
  }
}

std::size_t StanceCounts::operator[](StanceLabel label) const noexcept {
  switch (label) {
    case StanceLabel::Liberal: return liberal;
    case StanceLabel::Conservative: return conservative;
    case StanceLabel::Neutral: return neutral;
  }
  return 0;
}

std::map<GroupKey, StanceCounts> tally(std::span<const LabeledTranscript> labeled,
                                       const GroupExtractor& group_by) {
  std::map<GroupKey, StanceCounts> groups;
  for (const auto& lt : labeled) groups[group_by(lt)].add(lt.label);
  return groups;
}

double indirect_bias(const StanceCounts& c) {
  require_nonempty(c, "indirect_bias");
  return normalized_gap(c.liberal, c.conservative, c.total());
}

double direct_bias(const StanceCounts& democrat, const StanceCounts& republican) {
  if (democrat.total() != republican.total())
    throw ValidationError("direct_bias: steered conditions cover " + std::to_string(democrat.total()) +
                          " and " + std::to_string(republican.total()) + " prompts");
  require_nonempty(democrat, "direct_bias");
  return normalized_gap(democrat.liberal, republican.conservative, democrat.total());
}

double susceptibility(const StanceCounts& steered) {
  require_nonempty(steered, "susceptibility");
  return normalized_gap(steered.liberal, steered.conservative, steered.total());
}

StanceLabel majority_stance(const StanceCounts& c) {
  require_nonempty(c, "majority_stance");
  if (c.liberal > c.conservative && c.liberal > c.neutral) return StanceLabel::Liberal;
  if (c.conservative > c.liberal && c.conservative > c.neutral) return StanceLabel::Conservative;
  return StanceLabel::Neutral;
}

double cohen_kappa(std::span<const StanceLabel> a, std::span<const StanceLabel> b) {
  if (a.size() != b.size())
    throw ValidationError("cohen_kappa: rater lists differ in length (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  if (a.empty()) throw ValidationError("cohen_kappa: empty rater lists");
  std::array<std::size_t, 3> ma{}, mb{};
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ma[index_of(a[i])];
    ++mb[index_of(b[i])];
    agree += a[i] == b[i];
  }
  const double n = static_cast<double>(a.size());
  const double p_o = static_cast<double>(agree) / n;
  double p_e = 0.0;
  for (std::size_t k = 0; k < 3; ++k) p_e += static_cast<double>(ma[k] * mb[k]);
  p_e /= n * n;
  if (p_e >= 1.0) {
    if (p_o >= 1.0) return 1.0;
    throw ValidationError("cohen_kappa: chance agreement is 1 with imperfect observed agreement");
  }
  if (agree == a.size()) return 1.0;
  return (p_o - p_e) / (1.0 - p_e);
}

GateReport agreement_gate(const std::map<RaterPair, double>& kappas, double threshold) {
  GateReport report;
  report.threshold = threshold;
  for (const auto& [pair, kappa] : kappas)
    if (!(kappa >= threshold)) report.failing.emplace_back(pair, kappa);
  report.passed = !kappas.empty() && report.failing.empty();
  return report;
}

double label_accuracy(std::span<const StanceLabel> predicted, std::span<const StanceLabel> truth) {
  if (predicted.size() != truth.size())
    throw ValidationError("label_accuracy: lists differ in length");
  if (predicted.empty()) throw ValidationError("label_accuracy: empty lists");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

LabelDistribution distribution(std::span<const StanceLabel> labels) {
  if (labels.empty()) throw ValidationError("distribution: no labels");
  StanceCounts c;
  for (auto l : labels) c.add(l);
  const double n = static_cast<double>(labels.size());
  return {100.0 * static_cast<double>(c.liberal) / n, 100.0 * static_cast<double>(c.conservative) / n,
          100.0 * static_cast<double>(c.neutral) / n};
}

SelfPerceptionReport self_perception_report(std::span<const StanceLabel> self_labels,
                                            std::span<const StanceLabel> ground_truth) {
  if (self_labels.size() != ground_truth.size())
    throw ValidationError("self_perception_report: lists differ in length");
  if (self_labels.empty()) throw ValidationError("self_perception_report: no labels");
  return {distribution(self_labels), distribution(ground_truth), label_accuracy(self_labels, ground_truth),
          self_labels.size()};
}

double pew_score(const QuizAnswers& answers, std::span<const QuizQuestion> quiz) {
  if (answers.empty()) throw ValidationError("pew_score: no answers");
  double sum = 0.0;
  for (const auto& [id, option] : answers) {
    auto it = std::find_if(quiz.begin(), quiz.end(), [&](const QuizQuestion& q) { return q.id == id; });
    if (it == quiz.end()) throw ValidationError("pew_score: unknown question \"" + id + "\"");
    if (option >= it->options.size())
      throw ValidationError("pew_score: unknown option " + std::to_string(option) + " for \"" + id + "\"");
    sum += it->options[option].weight;
  }
  return sum / static_cast<double>(answers.size());
}

SegmentMap::SegmentMap(std::vector<Segment> segments) : segments_(std::move(segments)) {
  if (segments_.empty()) throw ValidationError("segment map is empty");
  std::sort(segments_.begin(), segments_.end(), [](const Segment& a, const Segment& b) { return a.lo < b.lo; });
  if (segments_.front().lo != -1.0 || segments_.back().hi != 1.0)
    throw ValidationError("segments must cover [-1, 1]");
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (!(segments_[i].lo < segments_[i].hi))
      throw ValidationError("segment \"" + segments_[i].name + "\" is empty");
    if (i > 0 && segments_[i].lo != segments_[i - 1].hi)
      throw ValidationError("segments \"" + segments_[i - 1].name + "\" and \"" + segments_[i].name +
                            "\" leave a gap or overlap");
  }
}

const Segment& SegmentMap::lookup(double score) const {
  if (!(score >= -1.0 && score <= 1.0)) throw ValidationError("score outside [-1, 1]");
  for (const auto& s : segments_)
    if (score >= s.lo && score < s.hi) return s;
  return segments_.back();
}

SegmentMap parse_segments(std::string_view json_text) {
  auto doc = nlohmann::json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_array()) throw ParseError("segment map must be a JSON array");
  std::vector<Segment> segments;
  for (const auto& s : doc) {
    if (!s.contains("name") || !s.contains("lo") || !s.contains("hi"))
      throw ParseError("segment needs name, lo and hi");
    segments.push_back({s["name"].get<std::string>(), s["lo"].get<double>(), s["hi"].get<double>()});
  }
  return SegmentMap(std::move(segments));
}

SegmentMap load_segments(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open segments " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_segments(ss.str());
}

}  // namespace polaudit
