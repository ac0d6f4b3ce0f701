#include "cli/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

#include "cli/csv.hpp"

namespace bbsmc::cli {

namespace {

constexpr double kWidth = 720, kHeight = 480;
constexpr double kLeft = 70, kRight = 700, kTop = 40, kBottom = 425;

const char* kPalette[] = {"#1668a8", "#d1495b", "#2e8b57", "#c58b00", "#7851a9", "#444444"};
constexpr int kPaletteSize = 6;

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  if (v == 0) return "0";  // avoids "-0"
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
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

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (lo > hi) return;
    if (lo == hi) {
      const double d = std::max(1.0, std::abs(lo) * 0.1);
      lo -= d;
      hi += d;
    } else {
      const double d = 0.05 * (hi - lo);
      lo -= d;
      hi += d;
    }
  }
};

}  // namespace

std::vector<double> nice_ticks(double lo, double hi, int target_count) {
  std::vector<double> ticks;
  if (!(hi > lo) || target_count < 1) return ticks;
  const double raw = (hi - lo) / target_count;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double norm = raw / mag;
  const double step = mag * (norm < 1.5 ? 1.0 : norm < 3.5 ? 2.0 : norm < 7.5 ? 5.0 : 10.0);
  const double eps = 1e-9 * (hi - lo);
  for (long k = static_cast<long>(std::ceil((lo - eps) / step));
       k * step <= hi + eps; ++k)
    ticks.push_back(static_cast<double>(k) * step);
  return ticks;
}

void write_line_chart(const LineChart& chart, std::ostream& out) {
  Range rx, ry;
  for (const auto& s : chart.series) {
    const std::size_t n = std::min(s.x.size(), s.y.size());
    for (std::size_t i = 0; i < n; ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
        rx.add(s.x[i]);
        ry.add(s.y[i]);
      }
  }
  if (rx.lo > rx.hi) throw ConfigError("plot '" + chart.title + "': no finite data points");
  rx.pad();
  ry.pad();

  const auto to_x = [&](double v) { return kLeft + (v - rx.lo) / (rx.hi - rx.lo) * (kRight - kLeft); };
  const auto to_y = [&](double v) { return kBottom - (v - ry.lo) / (ry.hi - ry.lo) * (kBottom - kTop); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  out << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  out << "<g font-family=\"sans-serif\" font-size=\"12\" fill=\"#222222\">\n";

  // gridlines + tick labels
  for (double t : nice_ticks(rx.lo, rx.hi, 6)) {
    const std::string x = px(to_x(t));
    out << "<line x1=\"" << x << "\" y1=\"" << px(kTop) << "\" x2=\"" << x << "\" y2=\""
        << px(kBottom) << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << x << "\" y=\"" << px(kBottom + 16)
        << "\" text-anchor=\"middle\">" << xml_escape(tick_label(t)) << "</text>\n";
  }
  for (double t : nice_ticks(ry.lo, ry.hi, 6)) {
    const std::string y = px(to_y(t));
    out << "<line x1=\"" << px(kLeft) << "\" y1=\"" << y << "\" x2=\"" << px(kRight)
        << "\" y2=\"" << y << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << px(kLeft - 6) << "\" y=\"" << px(to_y(t) + 4)
        << "\" text-anchor=\"end\">" << xml_escape(tick_label(t)) << "</text>\n";
  }

  // axes
  out << "<line x1=\"" << px(kLeft) << "\" y1=\"" << px(kBottom) << "\" x2=\"" << px(kRight)
      << "\" y2=\"" << px(kBottom) << "\" stroke=\"#222222\" stroke-width=\"1\"/>\n";
  out << "<line x1=\"" << px(kLeft) << "\" y1=\"" << px(kTop) << "\" x2=\"" << px(kLeft)
      << "\" y2=\"" << px(kBottom) << "\" stroke=\"#222222\" stroke-width=\"1\"/>\n";

  // series
  for (std::size_t si = 0; si < chart.series.size(); ++si) {
    const auto& s = chart.series[si];
    const char* color = kPalette[si % kPaletteSize];
    const std::size_t n = std::min(s.x.size(), s.y.size());
    std::string points;
    bool open = false;
    auto flush = [&] {
      if (open && !points.empty())
        out << "<polyline fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"1.5\" points=\"" << points << "\"/>\n";
      points.clear();
      open = false;
    };
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        flush();
        continue;
      }
      if (!points.empty()) points += ' ';
      points += px(to_x(s.x[i])) + "," + px(to_y(s.y[i]));
      open = true;
    }
    flush();
    for (std::size_t i = 0; i < n; ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
        out << "<circle cx=\"" << px(to_x(s.x[i])) << "\" cy=\"" << px(to_y(s.y[i]))
            << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
  }

  // legend (skip when every label is empty)
  bool any_label = false;
  for (const auto& s : chart.series) any_label = any_label || !s.label.empty();
  if (any_label) {
    double ly = kTop + 14;
    for (std::size_t si = 0; si < chart.series.size(); ++si) {
      const char* color = kPalette[si % kPaletteSize];
      out << "<line x1=\"" << px(kRight - 150) << "\" y1=\"" << px(ly - 4) << "\" x2=\""
          << px(kRight - 126) << "\" y2=\"" << px(ly - 4) << "\" stroke=\"" << color
          << "\" stroke-width=\"2.5\"/>\n";
      out << "<text x=\"" << px(kRight - 120) << "\" y=\"" << px(ly) << "\">"
          << xml_escape(chart.series[si].label) << "</text>\n";
      ly += 18;
    }
  }

  out << "<text x=\"" << px((kLeft + kRight) / 2) << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-size=\"15\">" << xml_escape(chart.title) << "</text>\n";
  out << "<text x=\"" << px((kLeft + kRight) / 2) << "\" y=\"" << px(kHeight - 14)
      << "\" text-anchor=\"middle\">" << xml_escape(chart.x_label) << "</text>\n";
  out << "<text x=\"18\" y=\"" << px((kTop + kBottom) / 2)
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << px((kTop + kBottom) / 2)
      << ")\">" << xml_escape(chart.y_label) << "</text>\n";
  out << "</g>\n</svg>\n";
}

void save_line_chart(const LineChart& chart, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  write_line_chart(chart, out);
  if (!out) throw ConfigError("cannot write '" + path + "'");
}

}  // namespace bbsmc::cli
