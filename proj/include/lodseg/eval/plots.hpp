#ifndef LODSEG_EVAL_PLOTS_HPP
#define LODSEG_EVAL_PLOTS_HPP

// Static SVG figures: per-group Dice boxplots (one box per class) and the
// Dice-vs-alpha line plot of a robustness table. Boxes span the quartiles
// (linear interpolation), whiskers the min and max, the bar is the median.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lodseg/core/error.hpp"
#include "lodseg/eval/report.hpp"
#include "lodseg/eval/robustness.hpp"

namespace lodseg::eval {

namespace detail {

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return colors[i % 8];
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

struct Frame {
  double width = 640, height = 360, left = 60, right = 20, top = 40, bottom = 60;
  double x0() const { return left; }
  double x1() const { return width - right; }
  double y_of(double dice) const { return top + (1.0 - dice) * (height - top - bottom); }
};

inline void axes(std::ostringstream& os, const Frame& f, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << f.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
     << "</text>\n";
  for (int t = 0; t <= 5; ++t) {
    const double d = t / 5.0, y = f.y_of(d);
    os << "<line x1=\"" << f.x0() << "\" x2=\"" << f.x1() << "\" y1=\"" << y << "\" y2=\"" << y
       << "\" stroke=\"#ddd\"/>\n<text x=\"" << f.x0() - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << d
       << "</text>\n";
  }
  os << "<text x=\"14\" y=\"" << f.height / 2 << "\" transform=\"rotate(-90 14 " << f.height / 2
     << ")\" text-anchor=\"middle\">Dice</text>\n";
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
}

}  // namespace detail

inline std::string boxplot_svg(const std::string& title, const std::vector<std::string>& classes,
                               const std::map<std::string, std::vector<double>>& values) {
  detail::Frame f;
  std::ostringstream os;
  detail::axes(os, f, title);
  const double slot = (f.x1() - f.x0()) / static_cast<double>(std::max<std::size_t>(classes.size(), 1));
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const double cx = f.x0() + slot * (static_cast<double>(i) + 0.5), w = slot * 0.5;
    os << "<text x=\"" << cx << "\" y=\"" << f.height - f.bottom + 16 << "\" text-anchor=\"middle\">"
       << detail::escape(classes[i]) << "</text>\n";
    const auto it = values.find(classes[i]);
    if (it == values.end() || it->second.empty()) continue;
    const auto& v = it->second;
    const double lo = f.y_of(*std::min_element(v.begin(), v.end())), hi = f.y_of(*std::max_element(v.begin(), v.end()));
    const double q1 = f.y_of(detail::quantile(v, 0.25)), q3 = f.y_of(detail::quantile(v, 0.75));
    const double med = f.y_of(detail::quantile(v, 0.5));
    os << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << lo << "\" y2=\"" << hi << "\" stroke=\"black\"/>\n"
       << "<rect x=\"" << cx - w / 2 << "\" y=\"" << q3 << "\" width=\"" << w << "\" height=\"" << std::max(q1 - q3, 0.5)
       << "\" fill=\"" << detail::palette(i) << "\" fill-opacity=\"0.6\" stroke=\"black\"/>\n"
       << "<line x1=\"" << cx - w / 2 << "\" x2=\"" << cx + w / 2 << "\" y1=\"" << med << "\" y2=\"" << med
       << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline std::string alpha_plot_svg(const RobustnessTable& t, const std::string& title = "Dice vs motion severity") {
  detail::Frame f;
  f.right = 140;
  std::ostringstream os;
  detail::axes(os, f, title);
  double amin = 0, amax = 1;
  if (!t.rows.empty()) {
    amin = t.rows.front().alpha;
    amax = t.rows.front().alpha;
    for (const auto& r : t.rows) {
      amin = std::min(amin, r.alpha);
      amax = std::max(amax, r.alpha);
    }
    if (amax == amin) amax = amin + 1;
  }
  auto x_of = [&](double a) { return f.x0() + (a - amin) / (amax - amin) * (f.x1() - f.x0()); };
  for (const auto& r : t.rows)
    os << "<text x=\"" << x_of(r.alpha) << "\" y=\"" << f.height - f.bottom + 16 << "\" text-anchor=\"middle\">"
       << r.alpha << "</text>\n";
  os << "<text x=\"" << (f.x0() + f.x1()) / 2 << "\" y=\"" << f.height - 16 << "\" text-anchor=\"middle\">alpha</text>\n";
  auto series = t.class_order;
  series.push_back("mean");
  for (std::size_t i = 0; i < series.size(); ++i) {
    os << "<polyline fill=\"none\" stroke=\"" << detail::palette(i) << "\" stroke-width=\"" << (series[i] == "mean" ? 3 : 1.5)
       << "\" points=\"";
    for (const auto& r : t.rows) {
      const double d = series[i] == "mean" ? r.mean : r.per_class.at(series[i]);
      os << x_of(r.alpha) << ',' << f.y_of(d) << ' ';
    }
    os << "\"/>\n<text x=\"" << f.x1() + 10 << "\" y=\"" << f.top + 14 * static_cast<double>(i) + 4 << "\" fill=\""
       << detail::palette(i) << "\">" << detail::escape(series[i]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// One boxplot per (method, group) written as boxplot_<method>_<kind>_<group>.svg.
inline std::vector<std::filesystem::path> write_boxplots(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::map<std::string, std::vector<double>>> groups;
  for (const auto& rec : r.records) {
    for (const auto& key : std::vector<std::string>{"all_all", "site_" + rec.site, "age_" + rec.age_bucket}) {
      auto& g = groups[rec.method + "_" + key];
      for (const auto& [c, v] : rec.dice) g[c].push_back(v);
    }
  }
  std::vector<std::filesystem::path> out;
  for (const auto& [name, values] : groups) {
    std::string safe;
    for (char c : name) safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') ? c : '-';
    const auto p = dir / ("boxplot_" + safe + ".svg");
    detail::write_text(p, boxplot_svg(name, r.class_order, values));
    out.push_back(p);
  }
  return out;
}

inline std::filesystem::path write_alpha_plot(const RobustnessTable& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto p = dir / "dice_vs_alpha.svg";
  detail::write_text(p, alpha_plot_svg(t));
  return p;
}

}  // namespace lodseg::eval

#endif
