#pragma once

#include <string>
#include <vector>

namespace pisa {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 420;
};

// Standalone SVG documents with axes, ticks and a legend.
std::string svg_line_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series);
std::string svg_scatter_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series);

}  // namespace pisa
