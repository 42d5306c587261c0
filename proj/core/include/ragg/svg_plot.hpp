#pragma once

// Static SVG charts for CLI reports.

#include <filesystem>
#include <string>
#include <vector>

namespace ragg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotLabels {
  std::string title;
  std::string x_label;
  std::string y_label;
};

std::string line_plot_svg(const std::vector<Series>& series, const PlotLabels& labels);
std::string bar_plot_svg(const std::vector<std::string>& names, const std::vector<double>& values,
                         const PlotLabels& labels);

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace ragg
