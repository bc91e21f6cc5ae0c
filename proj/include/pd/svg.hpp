#pragma once

#include <span>
#include <string>
#include <vector>

namespace pd::svg {

struct ScatterGroup {
  std::vector<double> points;  ///< n x 2, row-major
  std::string color = "#1f6fb4";
  double radius = 2.0;
};

/// Fixed-size scatter plot with axes box; data window given explicitly so
/// frames of an animation share coordinates.
std::string scatter(std::span<const ScatterGroup> groups, double xmin, double xmax,
                    double ymin, double ymax, int width = 480, int height = 480,
                    const std::string& title = "");

/// Grayscale-to-color heatmap of an m x m row-major grid (row 0 = bottom).
std::string heatmap(std::span<const double> values, int m, double xmin, double xmax,
                    double ymin, double ymax, int width = 480, int height = 480,
                    const std::string& title = "");

}  // namespace pd::svg
