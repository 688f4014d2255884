#pragma once

// Class-probability surface over a 2D input plane as an SVG heatmap. Each
// cell is colored by the probability-weighted mix of per-class colors, so
// low-confidence regions show up as blended bands.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "advamd/data.hpp"
#include "advamd/error.hpp"
#include "advamd/nn.hpp"
#include "advamd/tensor.hpp"

namespace advamd {

struct SurfaceGrid {
  double x_lo = -1.0, x_hi = 1.0;
  double y_lo = -1.0, y_hi = 1.0;
  std::size_t resolution = 50;  // cells per axis
};

// Bounding box of the inputs padded by `pad` of its extent on each side.
inline SurfaceGrid fit_grid(const Dataset& data, std::size_t resolution, double pad = 0.1) {
  require(data.width() == 2, ErrorCode::InvalidArgument, "surface plots need 2D inputs");
  SurfaceGrid g{1e300, -1e300, 1e300, -1e300, resolution};
  for (std::size_t r = 0; r < data.size(); ++r) {
    g.x_lo = std::min(g.x_lo, data.inputs.at(r, 0));
    g.x_hi = std::max(g.x_hi, data.inputs.at(r, 0));
    g.y_lo = std::min(g.y_lo, data.inputs.at(r, 1));
    g.y_hi = std::max(g.y_hi, data.inputs.at(r, 1));
  }
  const double px = std::max(g.x_hi - g.x_lo, 1e-9) * pad, py = std::max(g.y_hi - g.y_lo, 1e-9) * pad;
  g.x_lo -= px;
  g.x_hi += px;
  g.y_lo -= py;
  g.y_hi += py;
  return g;
}

inline std::vector<double> softmax_row(const Tensor& z, std::size_t r) {
  std::vector<double> p(z.cols());
  double m = z.at(r, 0);
  for (std::size_t c = 1; c < z.cols(); ++c) m = std::max(m, z.at(r, c));
  double s = 0.0;
  for (std::size_t c = 0; c < z.cols(); ++c) s += p[c] = std::exp(z.at(r, c) - m);
  for (double& v : p) v /= s;
  return p;
}

inline std::string surface_svg(const Model& model, const SurfaceGrid& grid, const Dataset* points = nullptr,
                               const std::string& title = "") {
  require(model.input_width() == 2, ErrorCode::InvalidArgument, "surface plots need 2D inputs");
  require(grid.resolution >= 1, ErrorCode::InvalidArgument, "resolution must be >= 1");
  require(grid.x_hi > grid.x_lo && grid.y_hi > grid.y_lo, ErrorCode::InvalidArgument, "empty plot range");
  if (points) require(points->width() == 2, ErrorCode::InvalidArgument, "surface plots need 2D inputs");

  static constexpr std::array<std::array<int, 3>, 8> palette = {{{31, 119, 180},
                                                                 {255, 127, 14},
                                                                 {44, 160, 44},
                                                                 {214, 39, 40},
                                                                 {148, 103, 189},
                                                                 {140, 86, 75},
                                                                 {227, 119, 194},
                                                                 {127, 127, 127}}};
  const std::size_t n = grid.resolution;
  const double size = 400.0, cell = size / static_cast<double>(n);
  const double dx = (grid.x_hi - grid.x_lo) / static_cast<double>(n);
  const double dy = (grid.y_hi - grid.y_lo) / static_cast<double>(n);

  std::vector<double> centers;
  centers.reserve(n * n * 2);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      centers.push_back(grid.x_lo + (static_cast<double>(i) + 0.5) * dx);
      centers.push_back(grid.y_hi - (static_cast<double>(j) + 0.5) * dy);
    }
  const Tensor z = model.logits(Tensor({n * n, 2}, std::move(centers)));

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size + 20
     << "\" viewBox=\"0 0 " << size << ' ' << size + 20 << "\">\n";
  os << "<text x=\"4\" y=\"14\" font-size=\"12\" font-family=\"sans-serif\">";
  for (char c : title) {
    if (c == '<') os << "&lt;";
    else if (c == '>') os << "&gt;";
    else if (c == '&') os << "&amp;";
    else os << c;
  }
  os << "</text>\n<g transform=\"translate(0,20)\">\n";
  char buf[160];
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = softmax_row(z, j * n + i);
      double rgb[3] = {0, 0, 0};
      for (std::size_t c = 0; c < p.size(); ++c)
        for (int k = 0; k < 3; ++k) rgb[k] += p[c] * palette[c % palette.size()][k];
      std::snprintf(buf, sizeof buf,
                    "<rect class=\"cell\" x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" "
                    "fill=\"rgb(%d,%d,%d)\"/>\n",
                    static_cast<double>(i) * cell, static_cast<double>(j) * cell, cell, cell,
                    static_cast<int>(std::lround(rgb[0])), static_cast<int>(std::lround(rgb[1])),
                    static_cast<int>(std::lround(rgb[2])));
      os << buf;
    }
  if (points) {
    for (std::size_t r = 0; r < points->size(); ++r) {
      const double px = (points->inputs.at(r, 0) - grid.x_lo) / (grid.x_hi - grid.x_lo) * size;
      const double py = (grid.y_hi - points->inputs.at(r, 1)) / (grid.y_hi - grid.y_lo) * size;
      if (px < 0 || px > size || py < 0 || py > size) continue;
      const auto& col = palette[points->labels[r] % palette.size()];
      std::snprintf(buf, sizeof buf,
                    "<circle class=\"point\" cx=\"%.3f\" cy=\"%.3f\" r=\"2\" fill=\"rgb(%d,%d,%d)\" "
                    "stroke=\"black\" stroke-width=\"0.5\"/>\n",
                    px, py, col[0], col[1], col[2]);
      os << buf;
    }
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

}  // namespace advamd
