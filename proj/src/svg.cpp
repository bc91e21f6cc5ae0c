#include "pd/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace pd::svg {
namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct Mapper {
  double xmin, xmax, ymin, ymax;
  int width, height, margin;
  double px(double x) const {
    return margin + (x - xmin) / (xmax - xmin) * (width - 2.0 * margin);
  }
  double py(double y) const {
    return height - margin - (y - ymin) / (ymax - ymin) * (height - 2.0 * margin);
  }
};

void header(std::ostringstream& os, int width, int height, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty())
    os << "<text x=\"" << width / 2 << "\" y=\"16\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
}

void frame(std::ostringstream& os, const Mapper& m) {
  os << "<rect x=\"" << m.margin << "\" y=\"" << m.margin << "\" width=\""
     << m.width - 2 * m.margin << "\" height=\"" << m.height - 2 * m.margin
     << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
}

}  // namespace

std::string scatter(std::span<const ScatterGroup> groups, double xmin, double xmax,
                    double ymin, double ymax, int width, int height,
                    const std::string& title) {
  std::ostringstream os;
  header(os, width, height, title);
  const Mapper m{xmin, xmax, ymin, ymax, width, height, 24};
  frame(os, m);
  for (const auto& g : groups) {
    const int n = static_cast<int>(g.points.size()) / 2;
    os << "<g fill=\"" << g.color << "\" fill-opacity=\"0.6\">\n";
    for (int i = 0; i < n; ++i) {
      const double x = g.points[2 * static_cast<size_t>(i)];
      const double y = g.points[2 * static_cast<size_t>(i) + 1];
      if (x < xmin || x > xmax || y < ymin || y > ymax) continue;
      os << "<circle cx=\"" << num(m.px(x)) << "\" cy=\"" << num(m.py(y)) << "\" r=\""
         << num(g.radius) << "\"/>\n";
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string heatmap(std::span<const double> values, int mgrid, double xmin, double xmax,
                    double ymin, double ymax, int width, int height,
                    const std::string& title) {
  std::ostringstream os;
  header(os, width, height, title);
  const Mapper m{xmin, xmax, ymin, ymax, width, height, 24};
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;
  const double dx = (xmax - xmin) / mgrid, dy = (ymax - ymin) / mgrid;
  for (int gy = 0; gy < mgrid; ++gy)
    for (int gx = 0; gx < mgrid; ++gx) {
      const double v = values[static_cast<size_t>(gy) * mgrid + gx] / vmax;
      // white -> blue -> dark ramp
      const int r = static_cast<int>(255 * (1.0 - v));
      const int g = static_cast<int>(255 * (1.0 - 0.65 * v));
      const int b = static_cast<int>(255 * (1.0 - 0.25 * v));
      const double x0 = xmin + gx * dx, y0 = ymin + gy * dy;
      os << "<rect x=\"" << num(m.px(x0)) << "\" y=\"" << num(m.py(y0 + dy)) << "\" width=\""
         << num(m.px(x0 + dx) - m.px(x0)) << "\" height=\"" << num(m.py(y0) - m.py(y0 + dy))
         << "\" fill=\"rgb(" << r << "," << g << "," << b << ")\"/>\n";
    }
  frame(os, m);
  os << "</svg>\n";
  return os.str();
}

}  // namespace pd::svg
