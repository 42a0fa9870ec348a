#include "subdrend/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "subdrend/errors.hpp"

namespace subdrend {

void PointSet::validate() const {
  for (const Point& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw ConfigError("PointSet: non-finite coordinate");
    }
  }
}

FeatureMap FeatureMap::filled(int c, int h, int w, double v) {
  FeatureMap m;
  m.channels = c;
  m.height = h;
  m.width = w;
  m.values.assign(static_cast<std::size_t>(c) * h * w, v);
  return m;
}

void FeatureMap::validate() const {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw ConfigError("FeatureMap: dimensions must be positive");
  }
  if (values.size() != static_cast<std::size_t>(channels) * height * width) {
    throw ConfigError("FeatureMap: value count does not match C*H*W");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw ConfigError("FeatureMap: non-finite value");
  }
}

ProbGrid ProbGrid::filled(int k, int h, int w, double v) {
  ProbGrid g;
  g.classes = k;
  g.height = h;
  g.width = w;
  g.values.assign(static_cast<std::size_t>(k) * h * w, v);
  return g;
}

void ProbGrid::validate() const {
  if (classes <= 0 || height <= 0 || width <= 0) {
    throw ConfigError("ProbGrid: dimensions must be positive");
  }
  if (values.size() != static_cast<std::size_t>(classes) * height * width) {
    throw ConfigError("ProbGrid: value count does not match K*H*W");
  }
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("ProbGrid: value outside [0,1]");
  }
  if (classes > 1) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (std::size_t i = 0; i < plane; ++i) {
      double sum = 0.0;
      for (int k = 0; k < classes; ++k) sum += values[k * plane + i];
      if (std::abs(sum - 1.0) > kSimplexTol) {
        throw ConfigError("ProbGrid: class probabilities do not sum to 1 at cell " +
                          std::to_string(i));
      }
    }
  }
}

BinaryMask BinaryMask::filled(int h, int w, std::uint8_t v) {
  BinaryMask m;
  m.height = h;
  m.width = w;
  m.values.assign(static_cast<std::size_t>(h) * w, v);
  return m;
}

Point cell_center(int row, int col, int grid_h, int grid_w) {
  if (grid_h <= 0 || grid_w <= 0 || row < 0 || row >= grid_h || col < 0 || col >= grid_w) {
    throw ConfigError("cell_center: index out of range");
  }
  return {(col + 0.5) / grid_w, (row + 0.5) / grid_h};
}

namespace {

// Shared bilinear kernel over a channel-major grid. Writes one C-wide row per
// point, in point order.
Matrix bilinear_sample_raw(const double* values, int channels, int height, int width,
                           const PointSet& pts) {
  pts.validate();
  Matrix out(pts.size(), channels);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int i = 0; i < pts.size(); ++i) {
    const Point& p = pts.points[i];
    // Continuous cell coordinates relative to cell centers.
    double gx = p.x * width - 0.5;
    double gy = p.y * height - 0.5;
    gx = std::clamp(gx, 0.0, static_cast<double>(width - 1));
    gy = std::clamp(gy, 0.0, static_cast<double>(height - 1));
    const int x0 = std::min(static_cast<int>(gx), width - 1);
    const int y0 = std::min(static_cast<int>(gy), height - 1);
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    const double tx = gx - x0;
    const double ty = gy - y0;
    const double w00 = (1.0 - tx) * (1.0 - ty);
    const double w01 = tx * (1.0 - ty);
    const double w10 = (1.0 - tx) * ty;
    const double w11 = tx * ty;
    const std::size_t i00 = static_cast<std::size_t>(y0) * width + x0;
    const std::size_t i01 = static_cast<std::size_t>(y0) * width + x1;
    const std::size_t i10 = static_cast<std::size_t>(y1) * width + x0;
    const std::size_t i11 = static_cast<std::size_t>(y1) * width + x1;
    double* row = out.data.data() + static_cast<std::size_t>(i) * channels;
    for (int c = 0; c < channels; ++c) {
      const double* ch = values + c * plane;
      row[c] = w00 * ch[i00] + w01 * ch[i01] + w10 * ch[i10] + w11 * ch[i11];
    }
  }
  return out;
}

}  // namespace

Matrix bilinear_sample(const FeatureMap& map, const PointSet& pts) {
  if (map.empty()) throw ConfigError("bilinear_sample: empty feature map");
  return bilinear_sample_raw(map.values.data(), map.channels, map.height, map.width, pts);
}

Matrix bilinear_sample(const ProbGrid& grid, const PointSet& pts) {
  if (grid.empty()) throw ConfigError("bilinear_sample: empty grid");
  return bilinear_sample_raw(grid.values.data(), grid.classes, grid.height, grid.width, pts);
}

ProbGrid bilinear_upsample_x2(const ProbGrid& grid) {
  if (grid.empty()) throw ConfigError("bilinear_upsample_x2: empty grid");
  ProbGrid out;
  out.classes = grid.classes;
  out.height = grid.height * 2;
  out.width = grid.width * 2;
  out.values.resize(static_cast<std::size_t>(out.classes) * out.height * out.width);
  const std::size_t in_plane = static_cast<std::size_t>(grid.height) * grid.width;
  const std::size_t out_plane = static_cast<std::size_t>(out.height) * out.width;
  for (int r = 0; r < out.height; ++r) {
    // Input-grid coordinates of the output cell center; exact in binary FP.
    const double gy = std::clamp(0.5 * r - 0.25, 0.0, static_cast<double>(grid.height - 1));
    const int y0 = std::min(static_cast<int>(gy), grid.height - 1);
    const int y1 = std::min(y0 + 1, grid.height - 1);
    const double ty = gy - y0;
    for (int c = 0; c < out.width; ++c) {
      const double gx = std::clamp(0.5 * c - 0.25, 0.0, static_cast<double>(grid.width - 1));
      const int x0 = std::min(static_cast<int>(gx), grid.width - 1);
      const int x1 = std::min(x0 + 1, grid.width - 1);
      const double tx = gx - x0;
      const double w00 = (1.0 - tx) * (1.0 - ty);
      const double w01 = tx * (1.0 - ty);
      const double w10 = (1.0 - tx) * ty;
      const double w11 = tx * ty;
      const std::size_t i00 = static_cast<std::size_t>(y0) * grid.width + x0;
      const std::size_t i01 = static_cast<std::size_t>(y0) * grid.width + x1;
      const std::size_t i10 = static_cast<std::size_t>(y1) * grid.width + x0;
      const std::size_t i11 = static_cast<std::size_t>(y1) * grid.width + x1;
      const std::size_t o = static_cast<std::size_t>(r) * out.width + c;
      for (int k = 0; k < grid.classes; ++k) {
        const double* in = grid.values.data() + k * in_plane;
        out.values[k * out_plane + o] =
            w00 * in[i00] + w01 * in[i01] + w10 * in[i10] + w11 * in[i11];
      }
    }
  }
  return out;
}

ProbGrid scatter(const ProbGrid& grid, const GridIndexSet& cells, const Matrix& values) {
  if (grid.empty()) throw ConfigError("scatter: empty grid");
  if (values.rows != cells.size() || (cells.size() > 0 && values.cols != grid.classes)) {
    throw ConfigError("scatter: value shape does not match cell list");
  }
  std::unordered_set<std::int64_t> seen;
  seen.reserve(cells.cells.size());
  for (const GridCell& cell : cells.cells) {
    if (cell.row < 0 || cell.row >= grid.height || cell.col < 0 || cell.col >= grid.width) {
      throw ConfigError("scatter: cell out of range");
    }
    const std::int64_t key = static_cast<std::int64_t>(cell.row) * grid.width + cell.col;
    if (!seen.insert(key).second) throw ConfigError("scatter: duplicate cell");
  }
  for (int i = 0; i < values.rows; ++i) {
    double sum = 0.0;
    for (int k = 0; k < values.cols; ++k) {
      const double v = values.at(i, k);
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("scatter: value outside [0,1]");
      sum += v;
    }
    if (grid.classes > 1 && std::abs(sum - 1.0) > ProbGrid::kSimplexTol) {
      throw ConfigError("scatter: value row off the probability simplex");
    }
  }
  ProbGrid out = grid;
  const std::size_t plane = static_cast<std::size_t>(grid.height) * grid.width;
  for (int i = 0; i < cells.size(); ++i) {
    const GridCell& cell = cells.cells[i];
    const std::size_t o = static_cast<std::size_t>(cell.row) * grid.width + cell.col;
    for (int k = 0; k < grid.classes; ++k) {
      out.values[k * plane + o] = values.at(i, k);
    }
  }
  return out;
}

Matrix concat_features(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw ConfigError("concat_features: point count mismatch");
  if (b.cols == 0) return a;
  if (a.cols == 0) return b;
  Matrix out(a.rows, a.cols + b.cols);
  for (int r = 0; r < a.rows; ++r) {
    double* dst = out.data.data() + static_cast<std::size_t>(r) * out.cols;
    std::copy_n(a.data.data() + static_cast<std::size_t>(r) * a.cols, a.cols, dst);
    std::copy_n(b.data.data() + static_cast<std::size_t>(r) * b.cols, b.cols, dst + a.cols);
  }
  return out;
}

}  // namespace subdrend
