#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bbsmc::cli {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Linear-linear line chart; callers plotting on log scales transform the
// data and say so in the axis label.
struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

// Evenly spaced ticks at multiples of a 1/2/5-decade step, covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target_count);

// Deterministic byte-for-byte rendering: fixed 720x480 canvas, fixed palette,
// coordinates rounded to 1/100 px. Throws ConfigError when no series holds a
// finite point. Non-finite points are skipped (breaking the line there).
void write_line_chart(const LineChart& chart, std::ostream& out);
void save_line_chart(const LineChart& chart, const std::string& path);

}  // namespace bbsmc::cli
