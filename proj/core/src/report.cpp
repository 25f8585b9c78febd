#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>

#include "alignlab/error.hpp"
#include "alignlab/harness.hpp"

namespace alignlab {

namespace fs = std::filesystem;

namespace {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct RunCurves {
  std::string label;
  std::string run;
  Series entropy;
  Series length;
  Series validation;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::optional<RunCurves> read_run(const fs::path& dir, std::vector<std::string>& warnings) {
  const fs::path metrics = dir / "metrics.jsonl";
  std::ifstream in(metrics);
  if (!in) {
    warnings.push_back("skipping " + dir.string() + ": no metrics.jsonl");
    return std::nullopt;
  }
  RunCurves c;
  c.label = dir.filename().string();
  if (c.label.empty()) c.label = dir.parent_path().filename().string();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      warnings.push_back("skipping malformed line in " + metrics.string());
      continue;
    }
    const double step = j.value("step", 0.0);
    c.run = j.value("run", c.run);
    c.entropy.points.emplace_back(step, j.value("mean_entropy", 0.0));
    c.length.points.emplace_back(step, j.value("mean_length", 0.0));
  }
  std::ifstream vin(dir / "validation.jsonl");
  while (std::getline(vin, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    c.validation.points.emplace_back(j.value("step", 0.0), j.value("score", 0.0));
  }
  c.entropy.label = c.length.label = c.validation.label = c.label;
  return c;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string render_svg(const std::string& title, const std::string& y_label,
                       const std::vector<Series>& series, const std::vector<std::string>& runs) {
  constexpr double kW = 640, kH = 400, kL = 70, kR = 170, kT = 40, kB = 50;
  double x0 = std::numeric_limits<double>::max(), x1 = std::numeric_limits<double>::lowest();
  double y0 = x0, y1 = x1;
  for (const Series& s : series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = kW - kL - kR, ph = kH - kT - kB;
  auto px = [&](double x) { return kL + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kT + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kW) +
                    "\" height=\"" + fmt(kH) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<!-- runs:";
  for (const std::string& r : runs) svg += " " + r;
  svg += " -->\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt(kL) + "\" y=\"22\" font-size=\"14\">" + title + "</text>\n";
  svg += "<rect x=\"" + fmt(kL) + "\" y=\"" + fmt(kT) + "\" width=\"" + fmt(pw) + "\" height=\"" +
         fmt(ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    svg += "<text x=\"" + fmt(px(fx)) + "\" y=\"" + fmt(kT + ph + 16) +
           "\" text-anchor=\"middle\">" + fmt(fx) + "</text>\n";
    svg += "<text x=\"" + fmt(kL - 6) + "\" y=\"" + fmt(py(fy) + 4) +
           "\" text-anchor=\"end\">" + fmt(fy) + "</text>\n";
  }
  svg += "<text x=\"" + fmt(kL + pw / 2) + "\" y=\"" + fmt(kH - 10) +
         "\" text-anchor=\"middle\">step</text>\n";
  svg += "<text x=\"14\" y=\"" + fmt(kT + ph / 2) + "\" transform=\"rotate(-90 14 " +
         fmt(kT + ph / 2) + ")\" text-anchor=\"middle\">" + y_label + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    std::string pts;
    for (const auto& [x, y] : series[i].points) pts += fmt(px(x)) + "," + fmt(py(y)) + " ";
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = kT + 14.0 * static_cast<double>(i) + 8;
    svg += "<line x1=\"" + fmt(kW - kR + 10) + "\" y1=\"" + fmt(ly) + "\" x2=\"" +
           fmt(kW - kR + 30) + "\" y2=\"" + fmt(ly) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fmt(kW - kR + 34) + "\" y=\"" + fmt(ly + 4) + "\">" + series[i].label +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

ReportSummary cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  ReportSummary summary;
  std::vector<RunCurves> runs;
  for (const fs::path& dir : run_dirs) {
    if (auto c = read_run(dir, summary.warnings)) runs.push_back(std::move(*c));
  }
  summary.runs = runs.size();
  if (runs.empty()) {
    summary.warnings.push_back("no completed runs to report");
    return summary;
  }
  fs::create_directories(out_dir);

  std::vector<std::string> run_ids;
  for (const RunCurves& r : runs) run_ids.push_back(r.run.empty() ? r.label : r.run);

  struct Metric {
    const char* name;
    const char* title;
    const char* y_label;
    Series RunCurves::*member;
  };
  const Metric metrics[] = {
      {"entropy", "Mean rollout next-token entropy", "entropy (nats)", &RunCurves::entropy},
      {"length", "Mean rollout length", "tokens", &RunCurves::length},
      {"validation", "Validation score", "score", &RunCurves::validation},
  };
  std::string csv = "run,metric,step,value\n";
  for (const Metric& m : metrics) {
    std::vector<Series> series;
    for (const RunCurves& r : runs) {
      series.push_back(r.*m.member);
      for (const auto& [x, y] : (r.*m.member).points) {
        csv += r.label + "," + m.name + "," + fmt(x) + "," + fmt(y) + "\n";
      }
    }
    const fs::path svg = out_dir / (std::string(m.name) + ".svg");
    write_file(svg, render_svg(m.title, m.y_label, series, run_ids));
    summary.written.push_back(svg);
  }
  const fs::path csv_path = out_dir / "curves.csv";
  write_file(csv_path, csv);
  summary.written.push_back(csv_path);
  return summary;
}

}  // namespace alignlab
