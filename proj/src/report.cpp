#include "polaudit/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "polaudit/error.hpp"
#include "polaudit/gateway.hpp"

namespace polaudit {

using json = nlohmann::json;

namespace {

json cell_to_json(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return *d;
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  return nullptr;
}

Cell cell_from_json(const json& j) {
  if (j.is_null()) return std::monostate{};
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw ParseError("table cell must be null, a number or a string");
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string cell_text(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_number(*d);
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  return "no data";
}

class Svg {
 public:
  Svg(double width, double height) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width, 0) << "\" height=\""
         << fixed(height, 0) << "\" viewBox=\"0 0 " << fixed(width, 0) << ' ' << fixed(height, 0)
         << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  }
  void rect(double x, double y, double w, double h, std::string_view fill, std::string_view title = {}) {
    out_ << "<rect x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" width=\"" << fixed(w) << "\" height=\""
         << fixed(h) << "\" fill=\"" << fill << "\" stroke=\"#ffffff\"";
    if (title.empty()) {
      out_ << "/>\n";
    } else {
      out_ << "><title>" << xml_escape(title) << "</title></rect>\n";
    }
  }
  void text(double x, double y, std::string_view s, std::string_view anchor = "start",
            std::string_view extra = {}) {
    out_ << "<text x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" text-anchor=\"" << anchor << '"';
    if (!extra.empty()) out_ << ' ' << extra;
    out_ << '>' << xml_escape(s) << "</text>\n";
  }
  void line(double x1, double y1, double x2, double y2, std::string_view stroke = "#333333") {
    out_ << "<line x1=\"" << fixed(x1) << "\" y1=\"" << fixed(y1) << "\" x2=\"" << fixed(x2) << "\" y2=\""
         << fixed(y2) << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void raw(std::string_view s) { out_ << s; }
  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  std::ostringstream out_;
};

void diverging_legend(Svg& svg, double x, double y, double w) {
  constexpr int kSteps = 20;
  for (int i = 0; i < kSteps; ++i) {
    double v = -1.0 + 2.0 * (i + 0.5) / kSteps;
    svg.rect(x + w * i / kSteps, y, w / kSteps, 12, diverging_color(v));
  }
  svg.text(x, y + 26, "Conservative (-1)");
  svg.text(x + w / 2, y + 26, "0", "middle");
  svg.text(x + w, y + 26, "Liberal (+1)", "end");
}

std::string stance_color(const Cell& c) {
  const auto* s = std::get_if<std::string>(&c);
  if (!s) return std::string(kNoDataColor);
  if (*s == "liberal") return diverging_color(1.0);
  if (*s == "conservative") return diverging_color(-1.0);
  return "#8c8c8c";
}

std::optional<double> number(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return *d;
  return std::nullopt;
}

std::size_t column_index(const Table& t, std::string_view name) {
  auto it = std::find(t.columns.begin(), t.columns.end(), name);
  if (it == t.columns.end()) throw Error("table has no column \"" + std::string(name) + "\"");
  return static_cast<std::size_t>(it - t.columns.begin());
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

const Cell& Table::at(std::string_view row, std::string_view column) const {
  auto r = std::find(row_labels.begin(), row_labels.end(), row);
  auto c = std::find(columns.begin(), columns.end(), column);
  if (r == row_labels.end() || c == columns.end())
    throw Error("no cell (" + std::string(row) + ", " + std::string(column) + ")");
  return cells[static_cast<std::size_t>(r - row_labels.begin())][static_cast<std::size_t>(c - columns.begin())];
}

json to_json(const Table& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    json values = json::array();
    for (const auto& c : t.cells[r]) values.push_back(cell_to_json(c));
    rows.push_back({{"label", t.row_labels[r]}, {"values", values}});
  }
  return {{"row_header", t.row_header}, {"columns", t.columns}, {"rows", rows}};
}

Table table_from_json(const json& j) {
  try {
    Table t;
    t.row_header = j.at("row_header").get<std::string>();
    t.columns = j.at("columns").get<std::vector<std::string>>();
    for (const auto& row : j.at("rows")) {
      t.row_labels.push_back(row.at("label").get<std::string>());
      std::vector<Cell> cells;
      for (const auto& v : row.at("values")) cells.push_back(cell_from_json(v));
      if (cells.size() != t.columns.size()) throw ParseError("row width does not match columns");
      t.cells.push_back(std::move(cells));
    }
    return t;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad table: ") + e.what());
  }
}

json to_json(const BiasReport& r) {
  json tables = json::object();
  for (const auto& [name, t] : r.tables) tables[name] = to_json(t);
  json failures = json::array();
  for (const auto& f : r.failures)
    failures.push_back(
        {{"model_id", f.model_id}, {"question_id", f.question_id}, {"persona", f.persona}, {"error", f.error}});
  return {{"run_id", r.run_id},
          {"provenance",
           {{"config_hash", r.provenance.config_hash},
            {"corpus_hash", r.provenance.corpus_hash},
            {"classifier_id", r.provenance.classifier_id},
            {"seed", r.provenance.seed}}},
          {"studies", r.studies},
          {"tables", tables},
          {"failures", failures},
          {"judge_warnings", r.judge_warnings}};
}

BiasReport report_from_json(const json& j) {
  try {
    BiasReport r;
    r.run_id = j.at("run_id").get<std::string>();
    const auto& p = j.at("provenance");
    r.provenance = {p.at("config_hash").get<std::string>(), p.at("corpus_hash").get<std::string>(),
                    p.at("classifier_id").get<std::string>(), p.value("seed", std::uint64_t{0})};
    r.studies = j.at("studies").get<std::vector<std::string>>();
    for (const auto& [name, t] : j.at("tables").items()) r.tables[name] = table_from_json(t);
    for (const auto& f : j.value("failures", json::array()))
      r.failures.push_back({f.at("model_id").get<std::string>(), f.at("question_id").get<std::string>(),
                            f.at("persona").get<std::string>(), f.at("error").get<std::string>()});
    r.judge_warnings = j.value("judge_warnings", std::size_t{0});
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad report: ") + e.what());
  }
}

std::string dump_report(const BiasReport& report) { return to_json(report).dump(2) + "\n"; }

std::optional<EmitFormat> parse_emit_format(std::string_view name) {
  if (name == "json") return EmitFormat::Json;
  if (name == "csv") return EmitFormat::Csv;
  if (name == "svg") return EmitFormat::Svg;
  return std::nullopt;
}

std::string format_number(double value) { return json(value).dump(); }

std::string table_to_csv(const Table& t) {
  std::string out = csv_escape(t.row_header);
  for (const auto& c : t.columns) out += "," + csv_escape(c);
  out += '\n';
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    out += csv_escape(t.row_labels[r]);
    for (const auto& c : t.cells[r]) {
      out += ',';
      if (const auto* d = std::get_if<double>(&c)) {
        out += format_number(*d);
      } else if (const auto* s = std::get_if<std::string>(&c)) {
        out += csv_escape(*s);
      } else {
        out += "NA";
      }
    }
    out += '\n';
  }
  return out;
}

std::string diverging_color(double value) {
  double v = std::clamp(value, -1.0, 1.0);
  int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(v))));
  int r = v < 0 ? 255 : fade;
  int g = fade;
  int b = v > 0 ? 255 : fade;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

std::string render_heatmap_svg(const Table& t, std::string_view title) {
  constexpr double kCellW = 96, kCellH = 28, kLeft = 170, kTop = 130;
  // Room on the right for the last rotated column label.
  const double width = kLeft + kCellW * static_cast<double>(t.columns.size()) + 110;
  const double height = kTop + kCellH * static_cast<double>(t.row_labels.size()) + 60;
  Svg svg(width, height);
  svg.text(10, 20, title, "start", "font-size=\"15\" font-weight=\"bold\"");
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    double x = kLeft + kCellW * (static_cast<double>(c) + 0.5);
    svg.text(x, kTop - 8, t.columns[c], "start",
             "transform=\"rotate(-40 " + fixed(x) + " " + fixed(kTop - 8) + ")\"");
  }
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    double y = kTop + kCellH * static_cast<double>(r);
    svg.text(kLeft - 8, y + kCellH * 0.65, t.row_labels[r], "end");
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      const auto& cell = t.cells[r][c];
      auto v = number(cell);
      std::string fill = v ? diverging_color(*v) : std::string(kNoDataColor);
      double x = kLeft + kCellW * static_cast<double>(c);
      svg.rect(x, y, kCellW, kCellH, fill, t.row_labels[r] + " / " + t.columns[c] + ": " + cell_text(cell));
      std::string label = v ? fixed(*v) : "no data";
      bool dark = v && std::abs(*v) > 0.6;
      svg.text(x + kCellW / 2, y + kCellH * 0.65, label, "middle",
               dark ? "fill=\"#ffffff\"" : "fill=\"#000000\"");
    }
  }
  diverging_legend(svg, kLeft, height - 45, std::min(300.0, width - kLeft - 20));
  return svg.finish();
}

std::string render_stance_grid_svg(const Table& t, std::string_view title) {
  constexpr double kCellW = 110, kCellH = 26, kLeft = 260, kTop = 110;
  const double width = kLeft + kCellW * static_cast<double>(t.columns.size()) + 20;
  const double height = kTop + kCellH * static_cast<double>(t.row_labels.size()) + 40;
  Svg svg(width, height);
  svg.text(10, 20, title, "start", "font-size=\"15\" font-weight=\"bold\"");
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    double x = kLeft + kCellW * (static_cast<double>(c) + 0.5);
    svg.text(x, kTop - 8, t.columns[c], "start",
             "transform=\"rotate(-40 " + fixed(x) + " " + fixed(kTop - 8) + ")\"");
  }
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    double y = kTop + kCellH * static_cast<double>(r);
    svg.text(kLeft - 8, y + kCellH * 0.65, t.row_labels[r], "end");
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      const auto& cell = t.cells[r][c];
      double x = kLeft + kCellW * static_cast<double>(c);
      svg.rect(x, y, kCellW, kCellH, stance_color(cell), t.row_labels[r] + " / " + t.columns[c] + ": " + cell_text(cell));
      svg.text(x + kCellW / 2, y + kCellH * 0.65, cell_text(cell), "middle", "fill=\"#ffffff\"");
    }
  }
  return svg.finish();
}

std::string render_diverging_bars_svg(const Table& dem, const Table& rep, std::string_view title) {
  constexpr double kRowH = 20, kLabelW = 150, kHalf = 110, kPanelGap = 50, kTop = 50;
  const std::size_t rows = dem.row_labels.size();
  const std::size_t topics = dem.columns.size();
  const double panel_w = kLabelW + 2 * kHalf;
  const double block_h = kRowH * static_cast<double>(topics) + 36;
  const double width = 2 * panel_w + kPanelGap + 20;
  const double height = kTop + block_h * static_cast<double>(rows) + 20;
  Svg svg(width, height);
  svg.text(10, 20, title, "start", "font-size=\"15\" font-weight=\"bold\"");
  const std::array<const Table*, 2> panels = {&dem, &rep};
  const std::array<std::string_view, 2> names = {"Democrat", "Republican"};
  for (std::size_t p = 0; p < 2; ++p) {
    const Table& t = *panels[p];
    double x0 = 10 + static_cast<double>(p) * (panel_w + kPanelGap);
    double center = x0 + kLabelW + kHalf;
    svg.text(center, kTop - 12, names[p], "middle", "font-weight=\"bold\"");
    for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
      double yb = kTop + block_h * static_cast<double>(r);
      svg.text(x0, yb + 12, t.row_labels[r], "start", "font-weight=\"bold\"");
      svg.line(center, yb + 18, center, yb + 18 + kRowH * static_cast<double>(t.columns.size()));
      for (std::size_t c = 0; c < t.columns.size(); ++c) {
        double y = yb + 18 + kRowH * static_cast<double>(c);
        svg.text(x0 + kLabelW - 6, y + kRowH * 0.7, t.columns[c], "end");
        const auto& cell = t.cells[r][c];
        std::string tip = t.row_labels[r] + " / " + t.columns[c] + ": " + cell_text(cell);
        if (auto v = number(cell)) {
          double len = std::min(1.0, std::abs(*v)) * kHalf;
          double x = *v < 0 ? center - len : center;
          svg.rect(x, y + 3, std::max(len, 0.5), kRowH - 6, diverging_color(*v < 0 ? -1.0 : 1.0), tip);
          double tx = *v < 0 ? center - len - 4 : center + len + 4;
          svg.text(tx, y + kRowH * 0.7, fixed(*v), *v < 0 ? "end" : "start", "font-size=\"10\"");
        } else {
          svg.rect(center - 4, y + 3, 8, kRowH - 6, kNoDataColor, tip);
        }
      }
    }
  }
  return svg.finish();
}

std::string render_donuts_svg(const Table& t, std::string_view title) {
  constexpr double kR = 70, kSize = 200, kTop = 40;
  const std::size_t n = t.row_labels.size();
  const std::size_t per_row = 3;
  const double width = kSize * static_cast<double>(std::min(n, per_row)) + 20;
  const double height = kTop + kSize * static_cast<double>((n + per_row - 1) / per_row) + 30;
  Svg svg(std::max(width, 320.0), height);
  svg.text(10, 20, title, "start", "font-size=\"15\" font-weight=\"bold\"");

  auto ring = [&](double cx, double cy, double r_in, double r_out, const std::array<std::optional<double>, 3>& pct,
                  const std::string& who) {
    static const std::array<std::string, 3> kColors = {diverging_color(1.0), diverging_color(-1.0), "#8c8c8c"};
    static const std::array<std::string_view, 3> kNames = {"liberal", "conservative", "neutral"};
    double start = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      double frac = pct[k].value_or(0.0) / 100.0;
      if (frac <= 0.0) continue;
      std::string tip = who + " " + std::string(kNames[k]) + ": " + format_number(*pct[k]) + "%";
      if (frac >= 1.0 - 1e-12) {
        svg.raw("<circle cx=\"" + fixed(cx) + "\" cy=\"" + fixed(cy) + "\" r=\"" + fixed((r_in + r_out) / 2) +
                "\" fill=\"none\" stroke=\"" + kColors[k] + "\" stroke-width=\"" + fixed(r_out - r_in) +
                "\"><title>" + xml_escape(tip) + "</title></circle>\n");
        start += 1.0;
        continue;
      }
      double a0 = 2 * std::numbers::pi * start - std::numbers::pi / 2;
      double a1 = 2 * std::numbers::pi * (start + frac) - std::numbers::pi / 2;
      int large = frac > 0.5 ? 1 : 0;
      auto px = [&](double r, double a) { return fixed(cx + r * std::cos(a)) + "," + fixed(cy + r * std::sin(a)); };
      svg.raw("<path d=\"M" + px(r_out, a0) + " A" + fixed(r_out) + "," + fixed(r_out) + " 0 " +
              std::to_string(large) + " 1 " + px(r_out, a1) + " L" + px(r_in, a1) + " A" + fixed(r_in) + "," +
              fixed(r_in) + " 0 " + std::to_string(large) + " 0 " + px(r_in, a0) + " Z\" fill=\"" + kColors[k] +
              "\" stroke=\"#ffffff\"><title>" + xml_escape(tip) + "</title></path>\n");
      start += frac;
    }
  };

  const std::array<std::size_t, 3> self_cols = {column_index(t, "self_liberal"), column_index(t, "self_conservative"),
                                                column_index(t, "self_neutral")};
  const std::array<std::size_t, 3> truth_cols = {column_index(t, "truth_liberal"),
                                                 column_index(t, "truth_conservative"), column_index(t, "truth_neutral")};
  const std::size_t acc_col = column_index(t, "accuracy");
  for (std::size_t r = 0; r < n; ++r) {
    double cx = 10 + kSize * (static_cast<double>(r % per_row) + 0.5);
    double cy = kTop + kSize * (static_cast<double>(r / per_row) + 0.5);
    std::array<std::optional<double>, 3> self{}, truth{};
    for (std::size_t k = 0; k < 3; ++k) {
      self[k] = number(t.cells[r][self_cols[k]]);
      truth[k] = number(t.cells[r][truth_cols[k]]);
    }
    ring(cx, cy, kR * 0.75, kR, self, t.row_labels[r] + " MP");
    ring(cx, cy, kR * 0.45, kR * 0.72, truth, t.row_labels[r] + " GT");
    svg.text(cx, cy - 2, t.row_labels[r], "middle", "font-weight=\"bold\"");
    auto acc = number(t.cells[r][acc_col]);
    svg.text(cx, cy + 14, acc ? "acc " + fixed(*acc, 3) : "no data", "middle");
  }
  return svg.finish();
}

std::string render_strip_svg(const Table& t, const Table* segments, std::string_view title) {
  constexpr double kLeft = 40, kWidth = 720, kAxisY = 150;
  const double height = kAxisY + 30 + 22 * static_cast<double>(t.row_labels.size()) + 20;
  Svg svg(kLeft * 2 + kWidth, height);
  svg.text(10, 20, title, "start", "font-size=\"15\" font-weight=\"bold\"");
  auto xpos = [&](double v) { return kLeft + (std::clamp(v, -1.0, 1.0) + 1.0) / 2.0 * kWidth; };
  if (segments) {
    const std::size_t lo = column_index(*segments, "lo"), hi = column_index(*segments, "hi");
    for (std::size_t r = 0; r < segments->row_labels.size(); ++r) {
      auto a = number(segments->cells[r][lo]), b = number(segments->cells[r][hi]);
      if (!a || !b) continue;
      double mid = (*a + *b) / 2;
      svg.rect(xpos(*a), kAxisY - 14, xpos(*b) - xpos(*a), 28, diverging_color(mid * 0.6),
               segments->row_labels[r] + ": [" + format_number(*a) + ", " + format_number(*b) + ")");
      double x = (xpos(*a) + xpos(*b)) / 2;
      svg.text(x, kAxisY - 20, segments->row_labels[r], "start",
               "font-size=\"10\" transform=\"rotate(-30 " + fixed(x) + " " + fixed(kAxisY - 20) + ")\"");
    }
  }
  svg.line(kLeft, kAxisY, kLeft + kWidth, kAxisY);
  svg.text(kLeft, kAxisY + 28, "Conservative (-1)", "start");
  svg.text(kLeft + kWidth, kAxisY + 28, "Liberal (+1)", "end");
  const std::size_t score = column_index(t, "score");
  const std::size_t seg = column_index(t, "segment");
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    double y = kAxisY + 50 + 22 * static_cast<double>(r);
    auto v = number(t.cells[r][score]);
    std::string tip = t.row_labels[r] + ": " + cell_text(t.cells[r][score]) + " (" + cell_text(t.cells[r][seg]) + ")";
    if (v) {
      svg.line(xpos(*v), kAxisY, xpos(*v), y - 4, "#999999");
      svg.raw("<circle cx=\"" + fixed(xpos(*v)) + "\" cy=\"" + fixed(y - 4) + "\" r=\"5\" fill=\"#333333\"><title>" +
              xml_escape(tip) + "</title></circle>\n");
      svg.text(xpos(*v) + 8, y, t.row_labels[r] + " " + fixed(*v, 3), "start");
    } else {
      svg.text(kLeft, y, t.row_labels[r] + ": no data", "start", "fill=\"#777777\"");
    }
  }
  return svg.finish();
}

std::string render_strip_svg(const Table& t, std::string_view title) { return render_strip_svg(t, nullptr, title); }

std::vector<std::filesystem::path> emit(const json& report_json, EmitFormat format,
                                        const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw Error("cannot create output directory " + dir.string());
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& content) {
    auto path = dir / name;
    write_file(path, content);
    written.push_back(path);
  };

  if (format == EmitFormat::Json) {
    put("report.json", report_json.dump(2) + "\n");
    return written;
  }
  std::map<std::string, Table> tables;
  for (const auto& [name, t] : report_json.at("tables").items()) tables[name] = table_from_json(t);
  if (format == EmitFormat::Csv) {
    for (const auto& [name, t] : tables) put(name + ".csv", table_to_csv(t));
    return written;
  }
  auto find = [&](const char* name) -> const Table* {
    auto it = tables.find(name);
    return it == tables.end() ? nullptr : &it->second;
  };
  if (auto* t = find("indirect_bias")) put("indirect_bias.svg", render_heatmap_svg(*t, "Indirect bias"));
  if (auto* t = find("direct_bias")) put("direct_bias.svg", render_heatmap_svg(*t, "Direct bias"));
  if (auto* t = find("occupation_stance"))
    put("occupation_stance.svg", render_stance_grid_svg(*t, "Occupation stance (majority vote)"));
  auto* dem = find("susceptibility_democrat");
  auto* rep = find("susceptibility_republican");
  if (dem && rep) put("susceptibility.svg", render_diverging_bars_svg(*dem, *rep, "Susceptibility"));
  if (auto* t = find("self_perception"))
    put("self_perception.svg", render_donuts_svg(*t, "Self-perception (outer MP, inner GT)"));
  if (auto* t = find("pew_position"))
    put("pew_position.svg", render_strip_svg(*t, find("pew_segments"), "Typology position"));
  return written;
}

std::vector<std::filesystem::path> emit(const BiasReport& report, EmitFormat format,
                                        const std::filesystem::path& dir) {
  return emit(to_json(report), format, dir);
}

}  // namespace polaudit
