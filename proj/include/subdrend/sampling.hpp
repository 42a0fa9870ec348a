#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "subdrend/grid.hpp"

namespace subdrend {

// Parameters of the biased training-time point sampler: floor(k*N) uniform
// candidates are over-generated, the round(beta*N) most uncertain of them are
// kept, and the remaining points are drawn uniformly for coverage.
struct SamplerConfig {
  int n_points = 196;
  double oversample_k = 3.0;
  double importance_beta = 0.75;

  void validate() const;
  int candidate_count() const;   // floor(k*N)
  int importance_count() const;  // round(beta*N), half away from zero
  int coverage_count() const;    // N - importance_count()
};

// Per-cell uncertainty scores for a grid; higher means more uncertain.
struct UncertaintyMap {
  int height = 0;
  int width = 0;
  std::vector<double> scores;

  double at(int r, int c) const { return scores[static_cast<std::size_t>(r) * width + c]; }
};

// 0.5 - |p - 0.5|: distance of a foreground probability from a confident
// decision. Maximal (0.5) at p = 0.5. Throws if p is outside [0,1].
double uncertainty_binary(double p);

// Negated top-1/top-2 probability gap, in [-1, 0]; 0 is maximally uncertain.
// Throws for fewer than two classes.
double uncertainty_multiclass(std::span<const double> probs);

// Per-cell uncertainty of a probability grid. With gt_class set, scores the
// given channel with the binary measure (training mode); otherwise uses the
// binary measure for K = 1 and the multiclass gap for K > 1.
UncertaintyMap uncertainty_map(const ProbGrid& grid, std::optional<int> gt_class = std::nullopt);

// The min(n, H*W) highest-scoring cells, sorted by descending score with ties
// broken by ascending row-major index.
GridIndexSet select_top_n(const UncertaintyMap& map, int n);

// Stage sizes actually used by one sampler invocation, for inspection.
struct TrainingSampleInfo {
  int candidates = 0;
  int importance = 0;
  int coverage = 0;
};

// Draws exactly N points in [0,1]^2: floor(k*N) i.i.d. uniform candidates are
// scored by interpolating `coarse` and applying the task uncertainty, the
// round(beta*N) highest keep their draw order on ties, and N - round(beta*N)
// fresh uniform points are appended. Candidate i consumes draws (x_i, y_i) in
// order, so the result is a pure function of rng_seed.
PointSet sample_training_points(const ProbGrid& coarse, const SamplerConfig& cfg,
                                std::optional<int> gt_class, std::uint64_t rng_seed,
                                TrainingSampleInfo* info = nullptr);

// sqrt(n) x sqrt(n) lattice of cell centers over [0,1]^2, row-major. Throws
// if n is not a perfect square.
PointSet regular_grid_points(int n);

}  // namespace subdrend
