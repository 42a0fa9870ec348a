#include "subdrend/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "subdrend/errors.hpp"

namespace subdrend {

BinaryMask threshold_mask(const ProbGrid& grid, int channel) {
  if (grid.empty()) throw ConfigError("threshold_mask: empty grid");
  if (channel < 0 || channel >= grid.classes) throw ConfigError("threshold_mask: bad channel");
  BinaryMask mask = BinaryMask::filled(grid.height, grid.width, 0);
  const std::size_t plane = static_cast<std::size_t>(grid.height) * grid.width;
  const double* ch = grid.values.data() + channel * plane;
  for (std::size_t i = 0; i < plane; ++i) mask.values[i] = ch[i] >= 0.5 ? 1 : 0;
  return mask;
}

std::vector<int> argmax_labels(const ProbGrid& grid) {
  if (grid.empty()) throw ConfigError("argmax_labels: empty grid");
  const std::size_t plane = static_cast<std::size_t>(grid.height) * grid.width;
  std::vector<int> labels(plane, 0);
  for (std::size_t i = 0; i < plane; ++i) {
    double best = grid.values[i];
    int arg = 0;
    for (int k = 1; k < grid.classes; ++k) {
      const double v = grid.values[k * plane + i];
      if (v > best) {
        best = v;
        arg = k;
      }
    }
    labels[i] = arg;
  }
  return labels;
}

namespace {

void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (a.height != b.height || a.width != b.width) {
    throw ConfigError(std::string(op) + ": mask shape mismatch");
  }
}

// Mask cells 4-adjacent to the complement; out-of-grid counts as background.
BinaryMask boundary_cells(const BinaryMask& mask) {
  BinaryMask out = BinaryMask::filled(mask.height, mask.width, 0);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      const bool edge = r == 0 || r == mask.height - 1 || c == 0 || c == mask.width - 1 ||
                        !mask.at(r - 1, c) || !mask.at(r + 1, c) || !mask.at(r, c - 1) ||
                        !mask.at(r, c + 1);
      if (edge) out.at(r, c) = 1;
    }
  }
  return out;
}

// Chebyshev dilation by `radius` cells.
BinaryMask dilate(const BinaryMask& mask, int radius) {
  if (radius <= 0) return mask;
  BinaryMask out = BinaryMask::filled(mask.height, mask.width, 0);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      const int r0 = std::max(0, r - radius);
      const int r1 = std::min(mask.height - 1, r + radius);
      const int c0 = std::max(0, c - radius);
      const int c1 = std::min(mask.width - 1, c + radius);
      for (int rr = r0; rr <= r1; ++rr) {
        for (int cc = c0; cc <= c1; ++cc) out.at(rr, cc) = 1;
      }
    }
  }
  return out;
}

}  // namespace

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "iou");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] != 0;
    const bool g = gt.values[i] != 0;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double boundary_f(const BinaryMask& pred, const BinaryMask& gt, int tolerance_px) {
  require_same_shape(pred, gt, "boundary_f");
  if (tolerance_px < 0) throw ConfigError("boundary_f: tolerance must be >= 0");
  const BinaryMask pb = boundary_cells(pred);
  const BinaryMask gb = boundary_cells(gt);
  std::int64_t n_pred = 0, n_gt = 0;
  for (auto v : pb.values) n_pred += v;
  for (auto v : gb.values) n_gt += v;
  if (n_pred == 0 && n_gt == 0) return 1.0;
  if (n_pred == 0 || n_gt == 0) return 0.0;
  const BinaryMask gb_d = dilate(gb, tolerance_px);
  const BinaryMask pb_d = dilate(pb, tolerance_px);
  std::int64_t hit_pred = 0, hit_gt = 0;
  for (std::size_t i = 0; i < pb.values.size(); ++i) {
    if (pb.values[i] && gb_d.values[i]) ++hit_pred;
    if (gb.values[i] && pb_d.values[i]) ++hit_gt;
  }
  const double precision = static_cast<double>(hit_pred) / static_cast<double>(n_pred);
  const double recall = static_cast<double>(hit_gt) / static_cast<double>(n_gt);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double multiclass_miou(const std::vector<int>& pred, const std::vector<int>& gt, int height,
                       int width, int classes) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (pred.size() != n || gt.size() != n) throw ConfigError("multiclass_miou: shape mismatch");
  if (classes < 1) throw ConfigError("multiclass_miou: classes must be >= 1");
  double total = 0.0;
  int present = 0;
  for (int k = 0; k < classes; ++k) {
    std::int64_t inter = 0, uni = 0, gt_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = pred[i] == k;
      const bool g = gt[i] == k;
      gt_count += g ? 1 : 0;
      inter += (p && g) ? 1 : 0;
      uni += (p || g) ? 1 : 0;
    }
    if (gt_count == 0) continue;
    total += static_cast<double>(inter) / static_cast<double>(uni);
    ++present;
  }
  return present == 0 ? 1.0 : total / present;
}

}  // namespace subdrend
