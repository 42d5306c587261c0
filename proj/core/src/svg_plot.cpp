#include "ragg/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ragg/error.hpp"

namespace ragg {

namespace {

constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void header(std::ostringstream& os, const PlotLabels& labels) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(labels.title)
     << "</text>\n"
     << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">"
     << escape(labels.x_label) << "</text>\n"
     << "<text x=\"16\" y=\"" << (kTop + kH - kBottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (kTop + kH - kBottom) / 2 << ")\">" << escape(labels.y_label) << "</text>\n"
     << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kW - kLeft - kRight << "\" height=\""
     << kH - kTop - kBottom << "\" fill=\"none\" stroke=\"#444\"/>\n";
}

struct Range {
  double lo, hi;
  double map(double v, double a, double b) const { return hi > lo ? a + (v - lo) / (hi - lo) * (b - a) : (a + b) / 2; }
};

void y_ticks(std::ostringstream& os, const Range& r) {
  for (int i = 0; i <= 4; ++i) {
    const double v = r.lo + (r.hi - r.lo) * i / 4.0;
    const double y = r.map(v, kH - kBottom, kTop);
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
}

}  // namespace

std::string line_plot_svg(const std::vector<Series>& series, const PlotLabels& labels) {
  Range rx{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  Range ry = rx;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "line plot: x and y sizes differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      rx.lo = std::min(rx.lo, s.x[i]);
      rx.hi = std::max(rx.hi, s.x[i]);
      ry.lo = std::min(ry.lo, s.y[i]);
      ry.hi = std::max(ry.hi, s.y[i]);
    }
  }
  if (!std::isfinite(rx.lo)) rx = ry = {0, 1};
  std::ostringstream os;
  os.precision(4);
  header(os, labels);
  y_ticks(os, ry);
  os << "<text x=\"" << kLeft << "\" y=\"" << kH - kBottom + 16 << "\">" << rx.lo << "</text>\n"
     << "<text x=\"" << kW - kRight << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"end\">" << rx.hi
     << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << rx.map(s.x[i], kLeft, kW - kRight) << ',' << ry.map(s.y[i], kH - kBottom, kTop) << ' ';
    }
    os << "\"/>\n";
    const double ly = kTop + 16 * static_cast<double>(k) + 8;
    os << "<line x1=\"" << kW - kRight + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << kW - kRight + 34 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string bar_plot_svg(const std::vector<std::string>& names, const std::vector<double>& values,
                         const PlotLabels& labels) {
  require(names.size() == values.size(), "bar plot: names and values differ in size");
  Range ry{0.0, 0.0};
  for (double v : values) {
    if (std::isfinite(v)) ry.hi = std::max(ry.hi, v), ry.lo = std::min(ry.lo, v);
  }
  if (ry.hi == ry.lo) ry.hi = ry.lo + 1;
  std::ostringstream os;
  os.precision(4);
  header(os, labels);
  y_ticks(os, ry);
  const double plot_w = kW - kLeft - kRight;
  const double slot = names.empty() ? plot_w : plot_w / static_cast<double>(names.size());
  const double y0 = ry.map(0.0, kH - kBottom, kTop);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double v = std::isfinite(values[i]) ? values[i] : 0.0;
    const double y = ry.map(v, kH - kBottom, kTop);
    const double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
    os << "<rect x=\"" << x << "\" y=\"" << std::min(y, y0) << "\" width=\"" << slot * 0.7 << "\" height=\""
       << std::abs(y0 - y) << "\" fill=\"" << kColors[i % std::size(kColors)] << "\"/>\n"
       << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">"
       << escape(names[i]) << "</text>\n"
       << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << std::min(y, y0) - 4 << "\" text-anchor=\"middle\">"
       << values[i] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot write " + path.string(), ErrorKind::kIo);
  os << content;
}

}  // namespace ragg
