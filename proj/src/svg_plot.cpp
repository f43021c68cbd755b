#include "sasvr/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "sasvr/error.hpp"

namespace sasvr {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;

std::string escape(const std::string& s) {
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

// 1-2-5 step giving about five ticks.
double nice_step(double span) {
  if (span <= 0.0) return 1.0;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  return (f < 1.5 ? 1.0 : f < 3.5 ? 2.0 : f < 7.5 ? 5.0 : 10.0) * mag;
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& xlabel,
                          const std::string& ylabel, const std::vector<PlotSeries>& series) {
  double ymin = std::numeric_limits<double>::infinity();
  double ymax = -ymin;
  std::size_t npts = 0;
  for (const auto& s : series) {
    npts = std::max(npts, s.values.size());
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (!std::isfinite(ymin)) ymin = 0.0, ymax = 1.0;
  if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  const double xmax = npts > 1 ? static_cast<double>(npts - 1) : 1.0;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + pw * x / xmax; };
  auto sy = [&](double y) { return kTop + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      kWidth, kHeight);
  out += fmt::format("<text x=\"{:.1f}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
                     kLeft + pw / 2, escape(title));
  out += fmt::format(
      "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" "
      "stroke=\"black\"/>\n",
      kLeft, kTop, pw, ph);

  const double ystep = nice_step(ymax - ymin);
  for (double y = std::ceil(ymin / ystep) * ystep; y <= ymax; y += ystep) {
    out += fmt::format(
        "<line x1=\"{0:.1f}\" x2=\"{1:.1f}\" y1=\"{2:.1f}\" y2=\"{2:.1f}\" stroke=\"#ddd\"/>"
        "<text x=\"{3:.1f}\" y=\"{4:.1f}\" text-anchor=\"end\">{5:.4g}</text>\n",
        kLeft, kLeft + pw, sy(y), kLeft - 6, sy(y) + 4, std::abs(y) < 1e-12 ? 0.0 : y);
  }
  const double xstep = std::max(1.0, nice_step(xmax));
  for (double x = 0; x <= xmax + 1e-9; x += xstep) {
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:g}</text>\n",
                       sx(x), kTop + ph + 16, x);
  }
  out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n",
                     kLeft + pw / 2, kHeight - 10, escape(xlabel));
  out += fmt::format(
      "<text x=\"16\" y=\"{0:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0:.1f})\">"
      "{1}</text>\n",
      kTop + ph / 2, escape(ylabel));

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string pts;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (!std::isfinite(s.values[i])) continue;
      pts += fmt::format("{}{:.2f},{:.2f}", pts.empty() ? "" : " ", sx(static_cast<double>(i)),
                         sy(s.values[i]));
    }
    out += fmt::format(
        "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{} points=\"{}\"/>\n",
        escape(s.color), s.dashed ? " stroke-dasharray=\"5,3\"" : "", pts);
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    out += fmt::format(
        "<line x1=\"{0:.1f}\" x2=\"{1:.1f}\" y1=\"{2:.1f}\" y2=\"{2:.1f}\" stroke=\"{3}\" "
        "stroke-width=\"2\"{4}/><text x=\"{5:.1f}\" y=\"{6:.1f}\">{7}</text>\n",
        kLeft + pw + 10, kLeft + pw + 34, ly, escape(s.color),
        s.dashed ? " stroke-dasharray=\"5,3\"" : "", kLeft + pw + 40, ly + 4, escape(s.label));
  }
  out += "</svg>\n";
  return out;
}

void write_line_plot(const std::filesystem::path& path, const std::string& title,
                     const std::string& xlabel, const std::string& ylabel,
                     const std::vector<PlotSeries>& series) {
  std::ofstream f(path);
  f << line_plot_svg(title, xlabel, ylabel, series);
  if (!f) throw IoError(IoError::Kind::WriteFailed, "cannot write " + path.string());
}

}  // namespace sasvr
