#include "riiu/plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

namespace riiu::plot {

namespace {

std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, std::round(v * 100.0) / 100.0);
  return std::string(buf, res.ptr);
}

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

std::string tick_label(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
      const double pad = std::max(1e-3, std::abs(hi) * 0.1);
      lo -= pad;
      hi += pad;
    }
  }
};

}  // namespace

std::vector<double> moving_average(const std::vector<double>& y, std::size_t window) {
  std::vector<double> out(y.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sum += y[i];
    if (i >= window) sum -= y[i - window];
    out[i] = sum / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

std::string render_svg(const std::vector<Panel>& panels, int width, int panel_height) {
  const double left = 64, right = 150, top = 30, bottom = 42;
  const int height = panel_height * static_cast<int>(panels.size());
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const double y0 = static_cast<double>(p) * panel_height;
    const double plot_w = width - left - right;
    const double plot_h = panel_height - top - bottom;
    Range xr, yr;
    for (const auto& s : panel.series) {
      for (double v : s.x) xr.add(v);
      for (double v : s.y) yr.add(v);
    }
    if (panel.marker) xr.add(*panel.marker);
    xr.finish();
    yr.finish();
    auto px = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * plot_w; };
    auto py = [&](double y) { return y0 + top + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * plot_h; };

    svg << "<g>\n<text x=\"" << num(left) << "\" y=\"" << num(y0 + 18) << "\" font-size=\"13\">"
        << escape(panel.title) << "</text>\n";
    svg << "<rect x=\"" << num(left) << "\" y=\"" << num(y0 + top) << "\" width=\"" << num(plot_w)
        << "\" height=\"" << num(plot_h) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double fx = xr.lo + (xr.hi - xr.lo) * t / 4.0;
      const double fy = yr.lo + (yr.hi - yr.lo) * t / 4.0;
      svg << "<line x1=\"" << num(px(fx)) << "\" y1=\"" << num(y0 + top + plot_h) << "\" x2=\""
          << num(px(fx)) << "\" y2=\"" << num(y0 + top + plot_h + 4) << "\" stroke=\"#444\"/>\n"
          << "<text x=\"" << num(px(fx)) << "\" y=\"" << num(y0 + top + plot_h + 16)
          << "\" text-anchor=\"middle\">" << tick_label(fx) << "</text>\n"
          << "<line x1=\"" << num(left - 4) << "\" y1=\"" << num(py(fy)) << "\" x2=\"" << num(left)
          << "\" y2=\"" << num(py(fy)) << "\" stroke=\"#444\"/>\n"
          << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(fy) + 4)
          << "\" text-anchor=\"end\">" << tick_label(fy) << "</text>\n";
    }
    svg << "<text x=\"" << num(left + plot_w / 2) << "\" y=\"" << num(y0 + panel_height - 6)
        << "\" text-anchor=\"middle\">" << escape(panel.x_label) << "</text>\n"
        << "<text transform=\"translate(14," << num(y0 + top + plot_h / 2)
        << ") rotate(-90)\" text-anchor=\"middle\">" << escape(panel.y_label) << "</text>\n";

    if (panel.marker) {
      svg << "<line x1=\"" << num(px(*panel.marker)) << "\" y1=\"" << num(y0 + top) << "\" x2=\""
          << num(px(*panel.marker)) << "\" y2=\"" << num(y0 + top + plot_h)
          << "\" stroke=\"#c00\" stroke-dasharray=\"5,4\"/>\n";
      if (!panel.marker_label.empty())
        svg << "<text x=\"" << num(px(*panel.marker) + 4) << "\" y=\"" << num(y0 + top + 12)
            << "\" fill=\"#c00\">" << escape(panel.marker_label) << "</text>\n";
    }

    for (std::size_t k = 0; k < panel.series.size(); ++k) {
      const Series& s = panel.series[k];
      svg << "<polyline fill=\"none\" stroke=\"" << escape(s.color) << "\" stroke-width=\""
          << num(s.width) << '"' << (s.dashed ? " stroke-dasharray=\"4,3\"" : "") << " points=\"";
      for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
        if (!std::isfinite(s.y[i])) continue;
        svg << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
      }
      svg << "\"/>\n";
      const double ly = y0 + top + 14 + 16.0 * static_cast<double>(k);
      svg << "<line x1=\"" << num(left + plot_w + 10) << "\" y1=\"" << num(ly - 4) << "\" x2=\""
          << num(left + plot_w + 30) << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << escape(s.color)
          << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"4,3\"" : "") << "/>\n"
          << "<text x=\"" << num(left + plot_w + 34) << "\" y=\"" << num(ly) << "\">"
          << escape(s.label) << "</text>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace riiu::plot
