#pragma once

#include <cassert>
#include <cstdint>
#include <span>
#include <vector>

#include "subdrend/matrix.hpp"

namespace subdrend {

// All grids live on the normalized [0,1]^2 domain with half-pixel cell
// centers: cell (r, c) of an H x W grid is centered at ((c+0.5)/W, (r+0.5)/H),
// x growing left to right and y top to bottom. Interpolation clamps
// coordinates beyond the outermost centers to the border lattice, so a
// 1x1 grid is well defined everywhere.

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Ordered list of real-valued query points. Order is significant and is
// preserved by every operation that consumes one.
struct PointSet {
  std::vector<Point> points;

  int size() const { return static_cast<int>(points.size()); }
  void validate() const;  // finite coordinates
};

// C-channel real-valued grid; values stored channel-major, row-major within
// each channel.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  static FeatureMap filled(int c, int h, int w, double v);

  bool empty() const { return channels <= 0 || height <= 0 || width <= 0; }
  std::size_t index(int c, int r, int col) const {
    return (static_cast<std::size_t>(c) * height + r) * width + col;
  }
  double at(int c, int r, int col) const {
    assert(c >= 0 && c < channels && r >= 0 && r < height && col >= 0 && col < width);
    return values[index(c, r, col)];
  }
  double& at(int c, int r, int col) {
    assert(c >= 0 && c < channels && r >= 0 && r < height && col >= 0 && col < width);
    return values[index(c, r, col)];
  }
  void validate() const;  // size and finiteness
};

// K-channel probability grid, same storage layout as FeatureMap. K = 1 holds
// an independent foreground probability; K > 1 holds a per-cell distribution
// over classes (channel sums within kSimplexTol of 1).
struct ProbGrid {
  int classes = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  static constexpr double kSimplexTol = 1e-5;

  static ProbGrid filled(int k, int h, int w, double v);

  bool empty() const { return classes <= 0 || height <= 0 || width <= 0; }
  std::size_t index(int k, int r, int c) const {
    return (static_cast<std::size_t>(k) * height + r) * width + c;
  }
  double at(int k, int r, int c) const {
    assert(k >= 0 && k < classes && r >= 0 && r < height && c >= 0 && c < width);
    return values[index(k, r, c)];
  }
  double& at(int k, int r, int c) {
    assert(k >= 0 && k < classes && r >= 0 && r < height && c >= 0 && c < width);
    return values[index(k, r, c)];
  }
  void validate() const;
};

// Integer cell addresses on a specific grid; ordered, duplicate-free.
struct GridCell {
  int row = 0;
  int col = 0;
  bool operator==(const GridCell&) const = default;
};

struct GridIndexSet {
  std::vector<GridCell> cells;

  int size() const { return static_cast<int>(cells.size()); }
};

// Binary mask on an H x W grid (0 = background, 1 = foreground).
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  static BinaryMask filled(int h, int w, std::uint8_t v);

  std::uint8_t at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
};

// Center of cell (row, col) on a grid_h x grid_w grid. Throws on out-of-range
// indices.
Point cell_center(int row, int col, int grid_h, int grid_w);

// Samples every point by blending its 4 nearest cell centers; border
// replication outside the center lattice. Returns |pts| x C rows in point
// order. Throws on an empty map or non-finite coordinates.
Matrix bilinear_sample(const FeatureMap& map, const PointSet& pts);
Matrix bilinear_sample(const ProbGrid& grid, const PointSet& pts);

// 2x bilinear upsampling: output cell (r, c) equals a bilinear_sample of the
// input at the output cell's center. Probability invariants are preserved.
ProbGrid bilinear_upsample_x2(const ProbGrid& grid);

// Returns a copy of `grid` with exactly the listed cells replaced by the
// supplied |cells| x K value rows. Throws on duplicate cells, off-grid cells,
// length mismatch, or rows that violate the probability invariants.
ProbGrid scatter(const ProbGrid& grid, const GridIndexSet& cells, const Matrix& values);

// Per-point concatenation, a's channels first. Throws on point-count mismatch.
Matrix concat_features(const Matrix& a, const Matrix& b);

}  // namespace subdrend
