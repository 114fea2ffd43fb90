#pragma once

#include <string>
#include <vector>

namespace ilaprop {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  double width = 640;
  double height = 400;
};

/// Self-contained SVG line chart with axes, five ticks per axis and a legend.
std::string render_line_plot(const PlotSpec& spec, const std::vector<Series>& series);
void write_line_plot(const std::string& path, const PlotSpec& spec,
                     const std::vector<Series>& series);

}  // namespace ilaprop
