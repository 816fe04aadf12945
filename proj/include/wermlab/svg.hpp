#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace wermlab::svg {

// One curve: points sorted by x, with an optional per-point band [lo, hi]
// rendered as a translucent polygon behind the polyline.
struct Series {
  std::string label;
  std::vector<std::array<double, 2>> points;       // (x, y)
  std::vector<std::array<double, 2>> band;         // (lo, hi); empty or same length
};

// Renders a self-contained 800x500 SVG line chart (linear axes, one polyline
// per series, legend, axis labels) to `path`. `provenance` lands in a
// <metadata> element. Deterministic output: same inputs, same bytes.
void write_svg_curve(const std::vector<Series>& series, std::string_view x_label,
                     std::string_view y_label, const std::string& path,
                     std::string_view provenance);

// In-memory variant, used by tests and by the file writer.
std::string render_svg_curve(const std::vector<Series>& series, std::string_view x_label,
                             std::string_view y_label, std::string_view provenance);

}  // namespace wermlab::svg
