#pragma once

#include <vector>

#include "subdrend/grid.hpp"

namespace subdrend {

// Thresholds one channel of a probability grid at 0.5; ties (exactly 0.5) go
// to foreground.
BinaryMask threshold_mask(const ProbGrid& grid, int channel = 0);

// Per-cell argmax labels of a K-channel grid; ties resolve to the lowest
// class index.
std::vector<int> argmax_labels(const ProbGrid& grid);

// Intersection over union of two equal-shape binary masks; 1.0 when both are
// empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

// Boundary F-score. Boundary cells are mask cells 4-adjacent to the
// complement (cells beyond the grid count as background). Precision is the
// fraction of predicted boundary cells within Chebyshev distance
// tolerance_px of the ground-truth boundary; recall is symmetric; F is their
// harmonic mean. Both boundaries empty -> 1; exactly one empty -> 0.
double boundary_f(const BinaryMask& pred, const BinaryMask& gt, int tolerance_px);

// Mean IoU over the classes present in the ground-truth label map.
double multiclass_miou(const std::vector<int>& pred, const std::vector<int>& gt, int height,
                       int width, int classes);

}  // namespace subdrend
