#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "subdrend/grid.hpp"
#include "subdrend/point_head.hpp"
#include "subdrend/sampling.hpp"

namespace subdrend {

// Anything that predicts per-point K-class probabilities from a point set and
// its assembled feature rows. Implementations must be deterministic and
// per-point independent.
class PointPredictor {
 public:
  virtual ~PointPredictor() = default;
  virtual int classes() const = 0;
  virtual std::uint64_t madds_per_point() const = 0;
  virtual Matrix predict(const PointSet& pts, const Matrix& features) const = 0;
};

// Wraps a plain function; used for oracle predictors in tests and tools.
class FunctionPredictor : public PointPredictor {
 public:
  using Fn = std::function<Matrix(const PointSet&, const Matrix&)>;

  FunctionPredictor(int classes, std::uint64_t madds, Fn fn)
      : classes_(classes), madds_(madds), fn_(std::move(fn)) {}

  int classes() const override { return classes_; }
  std::uint64_t madds_per_point() const override { return madds_; }
  Matrix predict(const PointSet& pts, const Matrix& features) const override {
    return fn_(pts, features);
  }

 private:
  int classes_;
  std::uint64_t madds_;
  Fn fn_;
};

// Point-head-backed predictor.
class MlpPointPredictor : public PointPredictor {
 public:
  explicit MlpPointPredictor(const PointHeadParams& params, int threads = 1)
      : params_(&params), threads_(threads) {}

  int classes() const override { return params_->config.output_classes; }
  std::uint64_t madds_per_point() const override { return params_->config.madds_per_point(); }
  Matrix predict(const PointSet& pts, const Matrix& features) const override {
    (void)pts;
    return point_head_forward(*params_, features, threads_);
  }

 private:
  const PointHeadParams* params_;
  int threads_;
};

struct SubdivisionConfig {
  int target_resolution = 224;  // M; must be M0 * 2^t
  int points_per_step = 784;    // N

  void validate(int coarse_resolution) const;
};

struct PointBudget {
  int steps = 0;
  std::int64_t max_evaluations = 0;
};

// steps = log2(M/M0); max_evaluations = sum over steps of min(N, grid cells).
// Throws unless M = M0 * 2^t.
PointBudget point_budget(int coarse_resolution, int target_resolution, int points_per_step);

struct SubdivisionStepInfo {
  int step = 0;  // 1-based
  int grid_h = 0;
  int grid_w = 0;
  std::int64_t candidates = 0;  // cells available at this step
  std::int64_t evaluated = 0;   // points re-predicted
  std::uint64_t madds = 0;      // point-head multiply-adds spent
  double min_uncertainty = 0.0;
  double max_uncertainty = 0.0;
};

struct SubdivisionTrace {
  std::vector<SubdivisionStepInfo> steps;
  std::int64_t total_evaluations = 0;
  std::uint64_t total_madds = 0;

  // step,grid_h,grid_w,evaluated,cum_evaluated,cum_madds (with header row).
  std::string to_csv() const;
};

struct SubdivisionResult {
  ProbGrid grid;
  SubdivisionTrace trace;
};

// Adaptive subdivision inference: repeatedly upsample the grid by 2x, select
// the N most uncertain cells, re-predict only those with features assembled
// from the fine maps and the ORIGINAL coarse grid, and scatter the results
// back. Stops at target_resolution. on_step, when set, observes each step's
// grid after the scatter.
SubdivisionResult subdivide_infer(
    const ProbGrid& coarse, const PointPredictor& predictor,
    const std::vector<FeatureMap>& fine_maps, const SubdivisionConfig& cfg,
    const std::function<void(int, const ProbGrid&)>& on_step = {});

// Dense reference: the predictor evaluated at every cell center of an m x m
// grid, with the same feature assembly as subdivision.
ProbGrid dense_infer(const PointPredictor& predictor, const std::vector<FeatureMap>& fine_maps,
                     const ProbGrid& coarse, int m);

}  // namespace subdrend
