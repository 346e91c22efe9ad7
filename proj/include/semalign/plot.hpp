#ifndef SEMALIGN_PLOT_HPP_
#define SEMALIGN_PLOT_HPP_

#include <array>
#include <filesystem>
#include <span>
#include <vector>

namespace semalign {

struct PlotSeries {
  std::vector<double> x, y;
  std::array<double, 3> color{0.1, 0.3, 0.8};
  bool markers = false;
};

struct PlotOptions {
  int width = 640;
  int height = 400;
  bool log_y = false;
};

// Line chart rendered to an RGB PNG: frame, light grid, axis range labels.
void write_line_plot(const std::filesystem::path& path, std::span<const PlotSeries> series,
                     const PlotOptions& options = {});

// Trailing moving average over `window` samples.
std::vector<double> moving_average(std::span<const double> values, int window);

}  // namespace semalign

#endif  // SEMALIGN_PLOT_HPP_
