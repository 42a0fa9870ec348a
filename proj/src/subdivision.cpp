#include "subdrend/subdivision.hpp"

#include <cstdio>

#include "subdrend/errors.hpp"

namespace subdrend {

void SubdivisionConfig::validate(int coarse_resolution) const {
  if (points_per_step < 1) throw ConfigError("SubdivisionConfig: points_per_step must be >= 1");
  if (coarse_resolution < 1) throw ConfigError("SubdivisionConfig: coarse resolution must be >= 1");
  if (target_resolution < coarse_resolution) {
    throw ConfigError("SubdivisionConfig: target resolution below coarse resolution");
  }
  point_budget(coarse_resolution, target_resolution, points_per_step);  // power-of-two check
}

PointBudget point_budget(int coarse_resolution, int target_resolution, int points_per_step) {
  if (coarse_resolution < 1 || target_resolution < coarse_resolution || points_per_step < 1) {
    throw ConfigError("point_budget: bad arguments");
  }
  int steps = 0;
  std::int64_t res = coarse_resolution;
  while (res < target_resolution) {
    res *= 2;
    ++steps;
  }
  if (res != target_resolution) {
    throw ConfigError("point_budget: target must be coarse resolution times a power of two");
  }
  PointBudget budget;
  budget.steps = steps;
  res = coarse_resolution;
  for (int i = 0; i < steps; ++i) {
    res *= 2;
    budget.max_evaluations += std::min<std::int64_t>(points_per_step, res * res);
  }
  return budget;
}

std::string SubdivisionTrace::to_csv() const {
  std::string out = "step,grid_h,grid_w,evaluated,cum_evaluated,cum_madds\n";
  std::int64_t cum_eval = 0;
  std::uint64_t cum_madds = 0;
  char buf[160];
  for (const SubdivisionStepInfo& s : steps) {
    cum_eval += s.evaluated;
    cum_madds += s.madds;
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%lld,%lld,%llu\n", s.step, s.grid_h, s.grid_w,
                  static_cast<long long>(s.evaluated), static_cast<long long>(cum_eval),
                  static_cast<unsigned long long>(cum_madds));
    out += buf;
  }
  return out;
}

SubdivisionResult subdivide_infer(const ProbGrid& coarse, const PointPredictor& predictor,
                                  const std::vector<FeatureMap>& fine_maps,
                                  const SubdivisionConfig& cfg,
                                  const std::function<void(int, const ProbGrid&)>& on_step) {
  cfg.validate(coarse.height);
  if (coarse.height != coarse.width) throw ConfigError("subdivide_infer: coarse grid not square");
  if (predictor.classes() != coarse.classes) {
    throw ConfigError("subdivide_infer: predictor/coarse class mismatch");
  }
  const PointBudget budget = point_budget(coarse.height, cfg.target_resolution, cfg.points_per_step);

  SubdivisionResult result;
  result.grid = coarse;
  for (int step = 1; step <= budget.steps; ++step) {
    result.grid = bilinear_upsample_x2(result.grid);
    const UncertaintyMap umap = uncertainty_map(result.grid);
    const GridIndexSet cells = select_top_n(umap, cfg.points_per_step);

    PointSet pts;
    pts.points.reserve(cells.cells.size());
    for (const GridCell& cell : cells.cells) {
      pts.points.push_back(cell_center(cell.row, cell.col, result.grid.height, result.grid.width));
    }
    // Coarse point features always come from the original coarse grid, never
    // from the partially refined one.
    const Matrix features = assemble_point_features(fine_maps, coarse, pts);
    const Matrix probs = predictor.predict(pts, features);
    if (probs.rows != cells.size() || probs.cols != coarse.classes) {
      throw ConfigError("subdivide_infer: predictor output shape mismatch");
    }
    result.grid = scatter(result.grid, cells, probs);

    SubdivisionStepInfo info;
    info.step = step;
    info.grid_h = result.grid.height;
    info.grid_w = result.grid.width;
    info.candidates = static_cast<std::int64_t>(result.grid.height) * result.grid.width;
    info.evaluated = cells.size();
    info.madds = static_cast<std::uint64_t>(info.evaluated) * predictor.madds_per_point();
    info.min_uncertainty = cells.size() > 0 ? umap.at(cells.cells.back().row, cells.cells.back().col) : 0.0;
    info.max_uncertainty =
        cells.size() > 0 ? umap.at(cells.cells.front().row, cells.cells.front().col) : 0.0;
    result.trace.steps.push_back(info);
    result.trace.total_evaluations += info.evaluated;
    result.trace.total_madds += info.madds;
    if (on_step) on_step(step, result.grid);
  }
  return result;
}

ProbGrid dense_infer(const PointPredictor& predictor, const std::vector<FeatureMap>& fine_maps,
                     const ProbGrid& coarse, int m) {
  if (m < 1) throw ConfigError("dense_infer: resolution must be >= 1");
  PointSet pts;
  pts.points.reserve(static_cast<std::size_t>(m) * m);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) pts.points.push_back(cell_center(r, c, m, m));
  }
  const Matrix features = assemble_point_features(fine_maps, coarse, pts);
  const Matrix probs = predictor.predict(pts, features);
  if (probs.rows != pts.size() || probs.cols != predictor.classes()) {
    throw ConfigError("dense_infer: predictor output shape mismatch");
  }
  ProbGrid grid = ProbGrid::filled(predictor.classes(), m, m, 0.0);
  const std::size_t plane = static_cast<std::size_t>(m) * m;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int k = 0; k < grid.classes; ++k) {
      grid.values[k * plane + i] = probs.at(static_cast<int>(i), k);
    }
  }
  return grid;
}

}  // namespace subdrend
