#include "plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "brainssl/error.hpp"

namespace brainssl::tools {

namespace {

constexpr double kPanelW = 420, kPanelH = 300, kMargin = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void settle() {
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  }
  double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

void axes(std::ostringstream& s, double x0, double y0, const Range& xr, const Range& yr, const std::string& title,
          const std::string& xlabel, const std::string& ylabel) {
  const double x1 = x0 + kPanelW - kMargin, y1 = y0 + kPanelH - kMargin;
  s << "<rect x='" << x0 + kMargin << "' y='" << y0 + 20 << "' width='" << kPanelW - 2 * kMargin << "' height='"
    << kPanelH - kMargin - 20 << "' fill='none' stroke='#444'/>\n";
  s << "<text x='" << x0 + kPanelW / 2 << "' y='" << y0 + 14 << "' text-anchor='middle'>" << title << "</text>\n";
  s << "<text x='" << x0 + kPanelW / 2 << "' y='" << y1 + 34 << "' text-anchor='middle'>" << xlabel << "</text>\n";
  s << "<text x='" << x0 + 12 << "' y='" << y0 + kPanelH / 2 << "' text-anchor='middle' transform='rotate(-90 "
    << x0 + 12 << ' ' << y0 + kPanelH / 2 << ")'>" << ylabel << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0, fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    const double px = xr.map(fx, x0 + kMargin, x1 - kMargin), py = yr.map(fy, y1, y0 + 20);
    s << "<text x='" << px << "' y='" << y1 + 16 << "' text-anchor='middle' font-size='10'>" << num(fx)
      << "</text>\n";
    s << "<text x='" << x0 + kMargin - 4 << "' y='" << py + 3 << "' text-anchor='end' font-size='10'>" << num(fy)
      << "</text>\n";
  }
}

void panel(std::ostringstream& s, double x0, const std::vector<RunLogRow>& rows, const std::string& title,
           const char* color) {
  Range xr, yr;
  for (const auto& r : rows) {
    xr.add(static_cast<double>(r.step));
    if (std::isfinite(r.loss)) yr.add(r.loss);
  }
  xr.settle();
  yr.settle();
  axes(s, x0, 0, xr, yr, title, "step", "loss");
  const double x1 = x0 + kPanelW - kMargin, y1 = kPanelH - kMargin;
  s << "<polyline fill='none' stroke='" << color << "' stroke-width='1.2' points='";
  for (const auto& r : rows)
    if (std::isfinite(r.loss))
      s << xr.map(static_cast<double>(r.step), x0 + kMargin, x1 - kMargin) << ',' << yr.map(r.loss, y1, 20) << ' ';
  s << "'/>\n";
  if (rows.size() == 1)
    s << "<circle cx='" << (x0 + kPanelW / 2) << "' cy='" << yr.map(rows[0].loss, y1, 20) << "' r='3' fill='" << color
      << "'/>\n";
}

std::string svg_open(double w, double h) {
  std::ostringstream s;
  s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
    << "' font-family='sans-serif' font-size='12'>\n<rect width='100%' height='100%' fill='white'/>\n";
  return s.str();
}

}  // namespace

std::string loss_curve_svg(const RunLog& log) {
  std::ostringstream s;
  s << svg_open(2 * kPanelW, kPanelH);
  panel(s, 0, log.split("train"), "Training loss", kColors[0]);
  panel(s, kPanelW, log.split("val"), "Validation loss", kColors[1]);
  s << "</svg>\n";
  return s.str();
}

nlohmann::json runlog_summary(const RunLog& log) {
  nlohmann::json out = nlohmann::json::object();
  for (const std::string split : {"train", "val"}) {
    const auto rows = log.split(split);
    if (rows.empty()) continue;
    auto best = std::min_element(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.loss < b.loss; });
    const size_t tail = std::max<size_t>(1, rows.size() / 10);
    double sum = 0.0;
    for (size_t i = rows.size() - tail; i < rows.size(); ++i) sum += rows[i].loss;
    out[split] = {{"count", rows.size()},
                  {"first_step", rows.front().step},
                  {"first_loss", rows.front().loss},
                  {"last_step", rows.back().step},
                  {"last_loss", rows.back().loss},
                  {"min_loss", best->loss},
                  {"min_step", best->step},
                  {"tail_mean_loss", sum / static_cast<double>(tail)},
                  {"wall_ms", rows.back().wall_ms}};
  }
  return out;
}

std::string fewshot_svg(const std::vector<FewShotSummary>& summary) {
  std::vector<double> fractions;
  std::vector<std::string> arms;
  Range yr;
  for (const auto& r : summary) {
    if (std::find(fractions.begin(), fractions.end(), r.fraction) == fractions.end()) fractions.push_back(r.fraction);
    if (std::find(arms.begin(), arms.end(), r.arm) == arms.end()) arms.push_back(r.arm);
    yr.add(r.mean - r.std);
    yr.add(r.mean + r.std);
  }
  std::sort(fractions.begin(), fractions.end());
  yr.settle();
  Range xr;
  xr.lo = -0.5;
  xr.hi = static_cast<double>(fractions.size()) - 0.5;
  if (fractions.empty()) xr.hi = 0.5;

  std::ostringstream s;
  s << svg_open(kPanelW + 140, kPanelH);
  axes(s, 0, 0, yr, yr, "Few-shot test Dice", "training fraction", "Dice");
  const double x1 = kPanelW - kMargin, y1 = kPanelH - kMargin;
  // Category axis: the numeric ticks drawn by axes() are for y only.
  s << "<rect x='" << kMargin << "' y='" << y1 + 2 << "' width='" << kPanelW - 2 * kMargin
    << "' height='20' fill='white'/>\n";
  for (size_t i = 0; i < fractions.size(); ++i)
    s << "<text x='" << xr.map(static_cast<double>(i), kMargin, x1 - kMargin) << "' y='" << y1 + 16
      << "' text-anchor='middle' font-size='10'>" << num(fractions[i]) << "</text>\n";
  for (size_t a = 0; a < arms.size(); ++a) {
    const char* color = kColors[a % 4];
    const double shift = (static_cast<double>(a) - (static_cast<double>(arms.size()) - 1) / 2) * 10.0;
    for (const auto& r : summary) {
      if (r.arm != arms[a]) continue;
      const auto i = std::find(fractions.begin(), fractions.end(), r.fraction) - fractions.begin();
      const double px = xr.map(static_cast<double>(i), kMargin, x1 - kMargin) + shift;
      s << "<line x1='" << px << "' x2='" << px << "' y1='" << yr.map(r.mean - r.std, y1, 20) << "' y2='"
        << yr.map(r.mean + r.std, y1, 20) << "' stroke='" << color << "'/>\n";
      s << "<circle cx='" << px << "' cy='" << yr.map(r.mean, y1, 20) << "' r='4' fill='" << color << "'/>\n";
    }
    s << "<circle cx='" << kPanelW + 10 << "' cy='" << 40 + 20 * a << "' r='4' fill='" << color << "'/>\n";
    s << "<text x='" << kPanelW + 20 << "' y='" << 44 + 20 * a << "'>" << arms[a] << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<FewShotSummary> parse_fewshot_summary(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "fraction,arm,mean,std")
    throw FormatError("few-shot summary must start with 'fraction,arm,mean,std'");
  std::vector<FewShotSummary> out;
  int64_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f, arm, mean, sd;
    if (!std::getline(row, f, ',') || !std::getline(row, arm, ',') || !std::getline(row, mean, ',') ||
        !std::getline(row, sd))
      throw FormatError("few-shot summary line " + std::to_string(n) + " needs 4 fields");
    try {
      out.push_back({std::stod(f), arm, std::stod(mean), std::stod(sd)});
    } catch (const std::exception&) {
      throw FormatError("few-shot summary line " + std::to_string(n) + " has a non-numeric field");
    }
  }
  return out;
}

}  // namespace brainssl::tools
