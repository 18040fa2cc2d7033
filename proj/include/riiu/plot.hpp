#pragma once

// Minimal static SVG line charts: stacked panels sharing a layout, with an
// optional dashed vertical marker per panel.

#include <optional>
#include <string>
#include <vector>

namespace riiu::plot {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
  double width = 1.5;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::optional<double> marker;
  std::string marker_label;
};

std::string render_svg(const std::vector<Panel>& panels, int width = 720, int panel_height = 280);

/// Trailing moving average; the first entries average what is available.
std::vector<double> moving_average(const std::vector<double>& y, std::size_t window);

}  // namespace riiu::plot
