#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sasvr {

struct PlotSeries {
  std::string label;
  std::string color;  // any SVG colour
  std::vector<double> values;
  bool dashed = false;
};

// Line chart over x = 0, 1, ..., with axes, ticks and a legend. Output is a
// pure function of the inputs.
std::string line_plot_svg(const std::string& title, const std::string& xlabel,
                          const std::string& ylabel, const std::vector<PlotSeries>& series);

void write_line_plot(const std::filesystem::path& path, const std::string& title,
                     const std::string& xlabel, const std::string& ylabel,
                     const std::vector<PlotSeries>& series);

}  // namespace sasvr
