#include "pisa/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pisa {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
constexpr double kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;

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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Frame {
  double x0, x1, y0, y1;
  double w, h;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (w - kLeft - kRight); }
  double py(double y) const { return h - kBottom - (y - y0) / (y1 - y0) * (h - kTop - kBottom); }
};

Frame frame_for(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot series: x and y differ in length");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  return {x0, x1, y0 - pad, y1 + pad, static_cast<double>(spec.width), static_cast<double>(spec.height)};
}

void axes(std::ostringstream& o, const PlotSpec& spec, const Frame& f) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(f.w / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(spec.title) << "</text>\n";
  const double xa = f.py(f.y0), ya = f.px(f.x0);
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(xa) << "\" x2=\"" << num(f.w - kRight) << "\" y2=\""
    << num(xa) << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << num(ya) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(ya) << "\" y2=\""
    << num(f.h - kBottom) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double xv = f.x0 + (f.x1 - f.x0) * t / 5.0;
    const double yv = f.y0 + (f.y1 - f.y0) * t / 5.0;
    o << "<text x=\"" << num(f.px(xv)) << "\" y=\"" << num(xa + 15) << "\" text-anchor=\"middle\">"
      << tick_label(xv) << "</text>\n";
    o << "<text x=\"" << num(ya - 5) << "\" y=\"" << num(f.py(yv) + 4) << "\" text-anchor=\"end\">"
      << tick_label(yv) << "</text>\n";
  }
  o << "<text x=\"" << num((kLeft + f.w - kRight) / 2) << "\" y=\"" << num(f.h - 12)
    << "\" text-anchor=\"middle\">" << xml_escape(spec.x_label) << "</text>\n";
  o << "<text transform=\"translate(15," << num((kTop + f.h - kBottom) / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(spec.y_label) << "</text>\n";
}

void legend(std::ostringstream& o, const Frame& f, const std::vector<PlotSeries>& series) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = kTop + 16.0 * static_cast<double>(i);
    const char* color = kPalette[i % std::size(kPalette)];
    o << "<rect x=\"" << num(f.w - kRight + 10) << "\" y=\"" << num(y) << "\" width=\"10\" height=\"10\" fill=\""
      << color << "\"/>\n";
    o << "<text x=\"" << num(f.w - kRight + 25) << "\" y=\"" << num(y + 9) << "\">"
      << xml_escape(series[i].label) << "</text>\n";
  }
}

}  // namespace

std::string svg_line_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  const Frame f = frame_for(spec, series);
  std::ostringstream o;
  axes(o, spec, f);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    o << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kPalette[i % std::size(kPalette)]
      << "\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      o << num(f.px(s.x[k])) << ',' << num(f.py(s.y[k])) << ' ';
    }
    o << "\"/>\n";
  }
  legend(o, f, series);
  o << "</svg>\n";
  return o.str();
}

std::string svg_scatter_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  const Frame f = frame_for(spec, series);
  std::ostringstream o;
  axes(o, spec, f);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      o << "<circle cx=\"" << num(f.px(s.x[k])) << "\" cy=\"" << num(f.py(s.y[k])) << "\" r=\"2.5\" fill=\""
        << color << "\" fill-opacity=\"0.7\"/>\n";
    }
  }
  legend(o, f, series);
  o << "</svg>\n";
  return o.str();
}

}  // namespace pisa
