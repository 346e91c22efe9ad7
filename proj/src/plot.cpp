#include "semalign/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "semalign/errors.hpp"
#include "semalign/image.hpp"
#include "semalign/tensor.hpp"

namespace semalign {

namespace {

// 3x5 glyphs, one row per 3-bit group (MSB = left column).
const char* glyph(char c) {
  switch (c) {
    case '0': return "\7\5\5\5\7";
    case '1': return "\2\6\2\2\7";
    case '2': return "\7\1\7\4\7";
    case '3': return "\7\1\7\1\7";
    case '4': return "\5\5\7\1\1";
    case '5': return "\7\4\7\1\7";
    case '6': return "\7\4\7\5\7";
    case '7': return "\7\1\1\1\1";
    case '8': return "\7\5\7\5\7";
    case '9': return "\7\5\7\1\7";
    case '.': return "\0\0\0\0\2";
    case '-': return "\0\0\7\0\0";
    case 'e': return "\7\5\7\4\7";
    default: return "\0\0\0\0\0";
  }
}

class Canvas {
 public:
  Canvas(int w, int h) : img_(Tensor::chw(3, h, w, 1.0)) {}

  void set(int x, int y, const std::array<double, 3>& c) {
    if (x < 0 || y < 0 || x >= img_.width() || y >= img_.height()) return;
    for (int ch = 0; ch < 3; ++ch) img_.at(ch, y, x) = c[ch];
  }

  void line(double x0, double y0, double x1, double y1, const std::array<double, 3>& c, int thickness = 1) {
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
      const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
      for (int dy = 0; dy < thickness; ++dy) {
        for (int dx = 0; dx < thickness; ++dx) set(x + dx - thickness / 2, y + dy - thickness / 2, c);
      }
    }
  }

  void text(int x, int y, const std::string& s, int scale = 2) {
    for (char ch : s) {
      const char* g = glyph(ch);
      for (int row = 0; row < 5; ++row) {
        for (int col = 0; col < 3; ++col) {
          if (!((g[row] >> (2 - col)) & 1)) continue;
          for (int sy = 0; sy < scale; ++sy) {
            for (int sx = 0; sx < scale; ++sx) set(x + col * scale + sx, y + row * scale + sy, {0, 0, 0});
          }
        }
      }
      x += 4 * scale;
    }
  }

  const Tensor& image() const { return img_; }

 private:
  Tensor img_;
};

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

void write_line_plot(const std::filesystem::path& path, std::span<const PlotSeries> series,
                     const PlotOptions& options) {
  if (options.width < 64 || options.height < 64) throw ConfigError("plot must be at least 64x64 pixels");
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  auto ty = [&options](double v) { return options.log_y ? std::log10(std::max(v, 1e-12)) : v; };
  for (const PlotSeries& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("plot series x and y differ in length");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, ty(s.y[i]));
      ymax = std::max(ymax, ty(s.y[i]));
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax - xmin < 1e-12) xmin -= 0.5, xmax += 0.5;
  if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  Canvas canvas(options.width, options.height);
  const int left = 56, right = options.width - 12, top = 12, bottom = options.height - 28;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  auto py = [&](double y) { return bottom - (ty(y) - ymin) / (ymax - ymin) * (bottom - top); };

  const std::array<double, 3> grid{0.88, 0.88, 0.88}, frame{0.2, 0.2, 0.2};
  for (int i = 1; i < 4; ++i) {
    const double fx = left + i * (right - left) / 4.0, fy = top + i * (bottom - top) / 4.0;
    canvas.line(fx, top, fx, bottom, grid);
    canvas.line(left, fy, right, fy, grid);
  }
  canvas.line(left, top, right, top, frame);
  canvas.line(left, bottom, right, bottom, frame);
  canvas.line(left, top, left, bottom, frame);
  canvas.line(right, top, right, bottom, frame);

  for (const PlotSeries& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (i + 1 < s.x.size() && std::isfinite(s.y[i + 1])) {
        canvas.line(px(s.x[i]), py(s.y[i]), px(s.x[i + 1]), py(s.y[i + 1]), s.color, 2);
      }
      if (s.markers) {
        const double cx = px(s.x[i]), cy = py(s.y[i]);
        for (int d = -3; d <= 3; ++d) canvas.line(cx - 3, cy + d, cx + 3, cy + d, s.color);
      }
    }
  }

  const double y_hi = options.log_y ? std::pow(10.0, ymax) : ymax;
  const double y_lo = options.log_y ? std::pow(10.0, ymin) : ymin;
  canvas.text(4, top, label(y_hi));
  canvas.text(4, bottom - 10, label(y_lo));
  canvas.text(left, bottom + 8, label(xmin));
  const std::string xr = label(xmax);
  canvas.text(right - 8 * static_cast<int>(xr.size()), bottom + 8, xr);
  write_png(path, canvas.image());
}

std::vector<double> moving_average(std::span<const double> values, int window) {
  if (window < 1) throw ConfigError("smoothing window must be >= 1");
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= static_cast<std::size_t>(window)) acc -= values[i - window];
    out[i] = acc / static_cast<double>(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

}  // namespace semalign
