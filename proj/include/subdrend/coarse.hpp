#pragma once

#include <cstdint>
#include <vector>

#include "subdrend/grid.hpp"
#include "subdrend/scene.hpp"

namespace subdrend {

enum class CoarseMode { oracle_pool, trained_affine };

struct CoarseConfig {
  int resolution = 7;  // M0
  CoarseMode mode = CoarseMode::oracle_pool;
  double noise_sigma = 0.0;  // oracle mode only
  int supersample = 8;       // s: s*s stratified sub-samples per cell

  void validate() const;
};

// Pools the continuous occupancy: each cell holds the per-class fraction of
// s x s stratified sub-samples (sub-cell centers) landing in that class, then
// seeded Gaussian noise of noise_sigma is added and values are clamped back
// to [0,1] (K > 1 grids are renormalized). noise_sigma = 0 is deterministic
// and noise-free.
ProbGrid oracle_coarse(const Scene& scene, int classes, const CoarseConfig& cfg,
                       std::uint64_t noise_seed = 0);

// Per-cell area average of every fine-map channel over each coarse cell,
// approximated by a 4x4 stratified bilinear sampling. Rows are coarse cells
// in row-major order; columns are the concatenated map channels.
Matrix pool_features(const std::vector<FeatureMap>& fine_maps, int resolution);

// Affine head shared across cells: logits = W * pooled + b, then sigmoid
// (K = 1) or softmax.
struct AffineCoarseParams {
  Matrix weight;  // K x pooled_width
  std::vector<double> bias;

  static AffineCoarseParams zeros(int pooled_width, int classes);
  int classes() const { return weight.rows; }
  void validate() const;
};

ProbGrid trained_coarse_forward(const AffineCoarseParams& params, const Matrix& pooled,
                                int resolution);

// Mean cross-entropy of a predicted grid against ground-truth occupancy:
// the noise-free pooled grid thresholded at 0.5 for K = 1, per-cell argmax
// labels for K > 1. Probabilities are clamped to [1e-7, 1-1e-7].
double coarse_loss(const ProbGrid& pred, const ProbGrid& gt);

struct AffineCoarseGrads {
  Matrix weight;
  std::vector<double> bias;
  double loss = 0.0;
};

// Analytic gradients of coarse_loss(trained_coarse_forward(...), gt) w.r.t.
// the affine parameters.
AffineCoarseGrads affine_coarse_backward(const AffineCoarseParams& params, const Matrix& pooled,
                                         int resolution, const ProbGrid& gt);

}  // namespace subdrend
