#include "wermlab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace wermlab::svg {

namespace {

constexpr double kWidth = 800.0, kHeight = 500.0;
constexpr double kLeft = 70.0, kRight = 25.0, kTop = 25.0, kBottom = 55.0;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b"};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
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

// Round tick spacing to 1/2/5 times a power of ten.
double nice_step(double span, int target_ticks) {
  const double raw = span / target_ticks;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double frac = raw / mag;
  double step;
  if (frac <= 1.0) step = 1.0;
  else if (frac <= 2.0) step = 2.0;
  else if (frac <= 5.0) step = 5.0;
  else step = 10.0;
  return step * mag;
}

}  // namespace

std::string render_svg_curve(const std::vector<Series>& series, std::string_view x_label,
                             std::string_view y_label, std::string_view provenance) {
  if (series.empty()) throw std::invalid_argument("svg: series list must be nonempty");
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    if (s.points.empty()) throw std::invalid_argument("svg: series must be nonempty");
    if (!s.band.empty() && s.band.size() != s.points.size())
      throw std::invalid_argument("svg: band length must match points");
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      if (i + 1 < s.points.size() && !(s.points[i][0] <= s.points[i + 1][0]))
        throw std::invalid_argument("svg: points must be sorted by x");
      xmin = std::min(xmin, s.points[i][0]);
      xmax = std::max(xmax, s.points[i][0]);
      ymin = std::min(ymin, s.points[i][1]);
      ymax = std::max(ymax, s.points[i][1]);
      if (!s.band.empty()) {
        ymin = std::min(ymin, s.band[i][0]);
        ymax = std::max(ymax, s.band[i][1]);
      }
    }
  }
  if (xmax == xmin) { xmax += 1.0; xmin -= 1.0; }
  if (ymax == ymin) { ymax += 1.0; ymin -= 1.0; }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return kTop + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 500\" "
         "font-family=\"sans-serif\" font-size=\"13\">\n";
  out += "<metadata>" + escape(provenance) + "</metadata>\n";
  out += "<rect x=\"0\" y=\"0\" width=\"800\" height=\"500\" fill=\"white\"/>\n";

  // Grid and ticks.
  const double xstep = nice_step(xmax - xmin, 6);
  const double ystep = nice_step(ymax - ymin, 6);
  for (double t = std::ceil(xmin / xstep) * xstep; t <= xmax + 1e-9 * xstep; t += xstep) {
    const double px = sx(t);
    out += "<line x1=\"" + fmt(px) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(px) +
           "\" y2=\"" + fmt(kTop + ph) + "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    out += "<text x=\"" + fmt(px) + "\" y=\"" + fmt(kTop + ph + 18.0) +
           "\" text-anchor=\"middle\">" + fmt(t) + "</text>\n";
  }
  for (double t = std::ceil(ymin / ystep) * ystep; t <= ymax + 1e-9 * ystep; t += ystep) {
    const double py = sy(t);
    out += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(py) + "\" x2=\"" +
           fmt(kLeft + pw) + "\" y2=\"" + fmt(py) +
           "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    out += "<text x=\"" + fmt(kLeft - 8.0) + "\" y=\"" + fmt(py + 4.0) +
           "\" text-anchor=\"end\">" + fmt(t) + "</text>\n";
  }
  // Axes.
  out += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop + ph) + "\" x2=\"" +
         fmt(kLeft + pw) + "\" y2=\"" + fmt(kTop + ph) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(kLeft) +
         "\" y2=\"" + fmt(kTop + ph) + "\" stroke=\"black\"/>\n";
  out += "<text x=\"" + fmt(kLeft + pw / 2.0) + "\" y=\"" + fmt(kHeight - 12.0) +
         "\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
  out += "<text x=\"18\" y=\"" + fmt(kTop + ph / 2.0) +
         "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " + fmt(kTop + ph / 2.0) +
         ")\">" + escape(y_label) + "</text>\n";

  // Bands first, polylines on top.
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    if (s.band.empty()) continue;
    const char* color = kPalette[si % 6];
    std::string pts;
    for (std::size_t i = 0; i < s.points.size(); ++i)
      pts += fmt(sx(s.points[i][0])) + "," + fmt(sy(s.band[i][1])) + " ";
    for (std::size_t i = s.points.size(); i-- > 0;)
      pts += fmt(sx(s.points[i][0])) + "," + fmt(sy(s.band[i][0])) + " ";
    pts.pop_back();
    out += "<polygon points=\"" + pts + "\" fill=\"" + color +
           "\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
  }
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % 6];
    std::string pts;
    for (const auto& p : s.points) pts += fmt(sx(p[0])) + "," + fmt(sy(p[1])) + " ";
    pts.pop_back();
    out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
  }
  // Legend, top-right.
  for (std::size_t si = 0; si < series.size(); ++si) {
    const double ly = kTop + 10.0 + 18.0 * si;
    const char* color = kPalette[si % 6];
    out += "<line x1=\"" + fmt(kLeft + pw - 150.0) + "\" y1=\"" + fmt(ly) + "\" x2=\"" +
           fmt(kLeft + pw - 120.0) + "\" y2=\"" + fmt(ly) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt(kLeft + pw - 112.0) + "\" y=\"" + fmt(ly + 4.0) + "\">" +
           escape(series[si].label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

void write_svg_curve(const std::vector<Series>& series, std::string_view x_label,
                     std::string_view y_label, const std::string& path,
                     std::string_view provenance) {
  const std::string body = render_svg_curve(series, x_label, y_label, provenance);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("svg: cannot write " + path);
  f << body;
}

}  // namespace wermlab::svg
