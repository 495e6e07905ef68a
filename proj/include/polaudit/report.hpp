#pragma once

#include <filesystem>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace polaudit {

// A report cell: no data, a number, or a categorical value.
using Cell = std::variant<std::monostate, double, std::string>;

struct Table {
  std::string row_header;
  std::vector<std::string> columns;
  std::vector<std::string> row_labels;
  std::vector<std::vector<Cell>> cells;  // [row][column]

  const Cell& at(std::string_view row, std::string_view column) const;
  bool operator==(const Table&) const = default;
};

struct Provenance {
  std::string config_hash;
  std::string corpus_hash;
  std::string classifier_id;
  std::uint64_t seed = 0;
  bool operator==(const Provenance&) const = default;
};

struct FailureEntry {
  std::string model_id;
  std::string question_id;
  std::string persona;
  std::string error;
  bool operator==(const FailureEntry&) const = default;
};

// Table names: indirect_bias, indirect_counts, direct_bias, direct_counts,
// susceptibility_democrat, susceptibility_republican, susceptibility_counts,
// occupation_stance, self_perception, pew_position, pew_segments.
struct BiasReport {
  std::string run_id;
  Provenance provenance;
  std::vector<std::string> studies;
  std::map<std::string, Table> tables;
  std::vector<FailureEntry> failures;
  std::size_t judge_warnings = 0;

  bool operator==(const BiasReport&) const = default;
};

nlohmann::json to_json(const Table& table);
Table table_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BiasReport& report);
BiasReport report_from_json(const nlohmann::json& j);

// Stable text form: sorted keys, two-space indent, trailing newline.
std::string dump_report(const BiasReport& report);

enum class EmitFormat { Json, Csv, Svg };

std::optional<EmitFormat> parse_emit_format(std::string_view name);

// Renders the report JSON verbatim to dir; returns the written files. Throws
// Error when dir cannot be written.
std::vector<std::filesystem::path> emit(const nlohmann::json& report_json, EmitFormat format,
                                        const std::filesystem::path& dir);
std::vector<std::filesystem::path> emit(const BiasReport& report, EmitFormat format,
                                        const std::filesystem::path& dir);

// Shortest round-trip decimal, identical to the JSON number form.
std::string format_number(double value);

std::string table_to_csv(const Table& table);

// Diverging scale: -1 full red, 0 white, +1 full blue; clamps outside [-1, 1].
std::string diverging_color(double value);
inline constexpr std::string_view kNoDataColor = "#bfbfbf";

std::string render_heatmap_svg(const Table& table, std::string_view title);
std::string render_stance_grid_svg(const Table& table, std::string_view title);
std::string render_diverging_bars_svg(const Table& democrat, const Table& republican,
                                      std::string_view title);
std::string render_donuts_svg(const Table& self_perception, std::string_view title);
std::string render_strip_svg(const Table& pew_position, std::string_view title);
// Draws named segment bands from a table with "lo" and "hi" columns.
std::string render_strip_svg(const Table& pew_position, const Table* segments, std::string_view title);

}  // namespace polaudit
