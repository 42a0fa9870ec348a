#include "subdrend/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "subdrend/errors.hpp"
#include "subdrend/rng.hpp"

namespace subdrend {

void SamplerConfig::validate() const {
  if (n_points <= 0) throw ConfigError("SamplerConfig: n_points must be positive");
  if (!(oversample_k >= 1.0)) throw ConfigError("SamplerConfig: oversample_k must be >= 1");
  if (!(importance_beta >= 0.0 && importance_beta <= 1.0)) {
    throw ConfigError("SamplerConfig: importance_beta must be in [0,1]");
  }
  if (importance_beta > 0.0 && candidate_count() < n_points) {
    throw ConfigError("SamplerConfig: floor(k*N) must be >= N when beta > 0");
  }
}

int SamplerConfig::candidate_count() const {
  return static_cast<int>(std::floor(oversample_k * n_points));
}

int SamplerConfig::importance_count() const {
  return static_cast<int>(std::lround(importance_beta * n_points));
}

int SamplerConfig::coverage_count() const { return n_points - importance_count(); }

double uncertainty_binary(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("uncertainty_binary: p outside [0,1]");
  return 0.5 - std::abs(p - 0.5);
}

double uncertainty_multiclass(std::span<const double> probs) {
  if (probs.size() < 2) throw ConfigError("uncertainty_multiclass: needs at least 2 classes");
  double top1 = -1.0, top2 = -1.0;
  for (double p : probs) {
    if (p > top1) {
      top2 = top1;
      top1 = p;
    } else if (p > top2) {
      top2 = p;
    }
  }
  return -(top1 - top2);
}

UncertaintyMap uncertainty_map(const ProbGrid& grid, std::optional<int> gt_class) {
  if (grid.empty()) throw ConfigError("uncertainty_map: empty grid");
  if (gt_class && (*gt_class < 0 || *gt_class >= grid.classes)) {
    throw ConfigError("uncertainty_map: gt_class out of range");
  }
  UncertaintyMap map;
  map.height = grid.height;
  map.width = grid.width;
  map.scores.resize(static_cast<std::size_t>(grid.height) * grid.width);
  const std::size_t plane = map.scores.size();
  if (gt_class || grid.classes == 1) {
    const int channel = gt_class.value_or(0);
    const double* ch = grid.values.data() + channel * plane;
    for (std::size_t i = 0; i < plane; ++i) map.scores[i] = uncertainty_binary(ch[i]);
  } else {
    std::vector<double> probs(grid.classes);
    for (std::size_t i = 0; i < plane; ++i) {
      for (int k = 0; k < grid.classes; ++k) probs[k] = grid.values[k * plane + i];
      map.scores[i] = uncertainty_multiclass(probs);
    }
  }
  return map;
}

GridIndexSet select_top_n(const UncertaintyMap& map, int n) {
  if (n < 0) throw ConfigError("select_top_n: n must be >= 0");
  const std::size_t cells = map.scores.size();
  const std::size_t keep = std::min<std::size_t>(n, cells);
  std::vector<std::int64_t> order(cells);
  std::iota(order.begin(), order.end(), 0);
  // Strict total order (index breaks score ties), so partial_sort is
  // deterministic and equals a full sort's prefix.
  std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                    [&](std::int64_t a, std::int64_t b) {
                      if (map.scores[a] != map.scores[b]) return map.scores[a] > map.scores[b];
                      return a < b;
                    });
  GridIndexSet out;
  out.cells.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    const int row = static_cast<int>(order[i] / map.width);
    const int col = static_cast<int>(order[i] % map.width);
    out.cells.push_back({row, col});
  }
  return out;
}

PointSet sample_training_points(const ProbGrid& coarse, const SamplerConfig& cfg,
                                std::optional<int> gt_class, std::uint64_t rng_seed,
                                TrainingSampleInfo* info) {
  cfg.validate();
  if (coarse.empty()) throw ConfigError("sample_training_points: empty coarse grid");
  if (gt_class && (*gt_class < 0 || *gt_class >= coarse.classes)) {
    throw ConfigError("sample_training_points: gt_class out of range");
  }
  Xoshiro256ss rng(rng_seed);

  const int n_cand = cfg.candidate_count();
  const int n_keep = cfg.importance_count();
  const int n_cover = cfg.coverage_count();

  PointSet candidates;
  candidates.points.reserve(n_cand);
  for (int i = 0; i < n_cand; ++i) {
    const double x = rng.next_double();
    const double y = rng.next_double();
    candidates.points.push_back({x, y});
  }

  PointSet out;
  out.points.reserve(cfg.n_points);
  if (n_keep > 0) {
    const Matrix interp = bilinear_sample(coarse, candidates);
    std::vector<double> score(n_cand);
    for (int i = 0; i < n_cand; ++i) {
      if (gt_class || coarse.classes == 1) {
        const double p = std::clamp(interp.at(i, gt_class.value_or(0)), 0.0, 1.0);
        score[i] = uncertainty_binary(p);
      } else {
        score[i] = uncertainty_multiclass(interp.row(i));
      }
    }
    std::vector<int> order(n_cand);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + n_keep, order.end(), [&](int a, int b) {
      if (score[a] != score[b]) return score[a] > score[b];
      return a < b;  // ties by draw order
    });
    for (int i = 0; i < n_keep; ++i) out.points.push_back(candidates.points[order[i]]);
  }
  for (int i = 0; i < n_cover; ++i) {
    const double x = rng.next_double();
    const double y = rng.next_double();
    out.points.push_back({x, y});
  }
  if (info) *info = {n_cand, n_keep, n_cover};
  return out;
}

PointSet regular_grid_points(int n) {
  if (n <= 0) throw ConfigError("regular_grid_points: n must be positive");
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) throw ConfigError("regular_grid_points: n must be a perfect square");
  PointSet out;
  out.points.reserve(n);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      out.points.push_back(cell_center(r, c, side, side));
    }
  }
  return out;
}

}  // namespace subdrend
