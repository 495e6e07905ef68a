#include <gtest/gtest.h>

#include <sstream>

#include "polaudit/error.hpp"
#include "polaudit/report.hpp"
#include "test_support.hpp"

using namespace polaudit;
using namespace polaudit::testing;
using json = nlohmann::json;

namespace {

const std::vector<std::string> kTopicNames = {"Healthcare", "Abortion", "Immigration", "Race & Identity",
                                              "Gun Control", "Climate Change", "LGBTQ+ Rights",
                                              "Economic Inequality"};

Table bias_table(std::size_t models) {
  Table t;
  t.row_header = "model";
  t.columns = kTopicNames;
  for (std::size_t m = 0; m < models; ++m) {
    t.row_labels.push_back("model-" + std::to_string(m));
    std::vector<Cell> row;
    for (std::size_t c = 0; c < t.columns.size(); ++c)
      row.push_back(static_cast<double>(m * 8 + c) / 40.0 - 0.5);
    t.cells.push_back(std::move(row));
  }
  return t;
}

BiasReport sample_report() {
  BiasReport r;
  r.run_id = "0123456789abcdef";
  r.provenance = {"cfg", "corpus", "lexicon", 7};
  r.studies = {"indirect", "occupation"};
  r.tables["indirect_bias"] = bias_table(5);
  Table occ;
  occ.row_header = "occupation";
  occ.columns = {"model-0", "model-1"};
  occ.row_labels = {"Healthcare / Nurse", "Finance / Banker"};
  occ.cells = {{std::string("liberal"), std::string("neutral")}, {std::string("conservative"), Cell{}}};
  r.tables["occupation_stance"] = occ;
  r.failures.push_back({"model-1", "ab-02", "none", "timeout"});
  return r;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char ch = text[i];
    if (quoted) {
      if (ch == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      row.push_back(std::exchange(field, {}));
    } else if (ch == '\n') {
      row.push_back(std::exchange(field, {}));
      rows.push_back(std::exchange(row, {}));
    } else {
      field += ch;
    }
  }
  return rows;
}


}  // namespace

TEST(Csv, FiveModelsByEightTopics) {
  auto rows = parse_csv(table_to_csv(bias_table(5)));
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0][0], "model");
  EXPECT_EQ(rows[0][4], "Race & Identity");
  for (const auto& r : rows) EXPECT_EQ(r.size(), 9u);
  EXPECT_EQ(rows[1][1], "-0.5");
}

TEST(Csv, NoDataIsNA) {
  auto csv = table_to_csv(sample_report().tables.at("occupation_stance"));
  EXPECT_EQ(csv, "occupation,model-0,model-1\nHealthcare / Nurse,liberal,neutral\nFinance / Banker,conservative,NA\n");
}

TEST(Csv, ValuesMatchJsonExactly) {
  TempDir dir;
  auto report = sample_report();
  report.tables["indirect_bias"].cells[2][3] = 0.1 + 0.2;
  auto files = emit(report, EmitFormat::Csv, dir.path());
  EXPECT_EQ(files.size(), 2u);
  auto rows = parse_csv(slurp(dir / "indirect_bias.csv"));
  const auto& table = report.tables.at("indirect_bias");
  for (std::size_t r = 0; r < table.row_labels.size(); ++r)
    for (std::size_t c = 0; c < table.columns.size(); ++c)
      EXPECT_EQ(std::stod(rows[r + 1][c + 1]), std::get<double>(table.cells[r][c]));
  EXPECT_EQ(rows[3][4], "0.30000000000000004");
}

TEST(Json, RoundTripAndStableDump) {
  auto report = sample_report();
  auto text = dump_report(report);
  EXPECT_EQ(text.back(), '\n');
  auto back = report_from_json(json::parse(text));
  EXPECT_EQ(back, report);
  EXPECT_EQ(dump_report(back), text);
  TempDir dir;
  emit(json::parse(text), EmitFormat::Json, dir.path());
  EXPECT_EQ(slurp(dir / "report.json"), text);
}

TEST(Json, RejectsMalformedTables) {
  EXPECT_THROW(table_from_json(json{{"row_header", "m"}, {"columns", {"a"}}, {"rows", {{{"label", "x"}, {"values", {1, 2}}}}}}),
               ParseError);
  EXPECT_THROW(table_from_json(json{{"row_header", "m"}, {"columns", {"a"}}, {"rows", {{{"label", "x"}, {"values", {true}}}}}}),
               ParseError);
}

TEST(Color, DivergingScale) {
  EXPECT_EQ(diverging_color(-1.0), "#ff0000");
  EXPECT_EQ(diverging_color(0.0), "#ffffff");
  EXPECT_EQ(diverging_color(1.0), "#0000ff");
  EXPECT_EQ(diverging_color(-3.0), "#ff0000");
  EXPECT_EQ(diverging_color(0.5), "#8080ff");
}

TEST(Svg, SentinelRenderedVerbatim) {
  auto t = bias_table(2);
  t.cells[1][5] = 0.123456789012345;
  t.cells[0][0] = -1.0;
  t.cells[0][1] = Cell{};
  auto svg = render_heatmap_svg(t, "Indirect bias");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("<title>model-1 / Climate Change: 0.123456789012345</title>"), std::string::npos);
  EXPECT_NE(svg.find("#ff0000"), std::string::npos);
  EXPECT_NE(svg.find(std::string(kNoDataColor)), std::string::npos);
  EXPECT_NE(svg.find("Race &amp; Identity"), std::string::npos);
}

TEST(Svg, EmitsOneFilePerFigure) {
  TempDir dir;
  auto files = emit(sample_report(), EmitFormat::Svg, dir.path());
  ASSERT_EQ(files.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "indirect_bias.svg"));
  EXPECT_TRUE(std::filesystem::exists(dir / "occupation_stance.svg"));
  EXPECT_NE(slurp(dir / "occupation_stance.svg").find("Finance / Banker / model-1: no data"), std::string::npos);
}

TEST(Emit, UnwritableDirectory) {
  TempDir dir;
  auto blocker = dir.write("file", "x");
  EXPECT_THROW(emit(sample_report(), EmitFormat::Json, blocker / "sub"), Error);
  EXPECT_EQ(parse_emit_format("svg"), EmitFormat::Svg);
  EXPECT_FALSE(parse_emit_format("pdf"));
}
