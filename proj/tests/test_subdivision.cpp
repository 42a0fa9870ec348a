#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "subdrend/coarse.hpp"
#include "subdrend/errors.hpp"
#include "subdrend/harness.hpp"
#include "subdrend/metrics.hpp"
#include "subdrend/rng.hpp"
#include "subdrend/scene.hpp"
#include "subdrend/subdivision.hpp"

using namespace subdrend;

namespace {

FunctionPredictor constant_predictor(double value) {
  return FunctionPredictor(1, 0, [value](const PointSet& pts, const Matrix&) {
    Matrix out(pts.size(), 1);
    for (double& v : out.data) v = value;
    return out;
  });
}

std::vector<FeatureMap> dummy_features() { return {FeatureMap::filled(1, 4, 4, 0.0)}; }

}  // namespace

TEST_CASE("point_budget") {
  const PointBudget b = point_budget(7, 224, 784);
  CHECK(b.steps == 5);
  CHECK(b.max_evaluations == 3332);  // 196 + 4 * 784
  CHECK(50176.0 / double(b.max_evaluations) == doctest::Approx(15.06).epsilon(0.003));

  const PointBudget zero = point_budget(5, 5, 100);
  CHECK(zero.steps == 0);
  CHECK(zero.max_evaluations == 0);

  const PointBudget small = point_budget(4, 8, 3);
  CHECK(small.steps == 1);
  CHECK(small.max_evaluations == 3);

  CHECK_THROWS_AS(point_budget(7, 100, 10), ConfigError);
  CHECK_THROWS_AS(point_budget(7, 3, 10), ConfigError);
}

TEST_CASE("subdivide_infer t=0 returns the coarse grid unchanged") {
  const ProbGrid coarse = ProbGrid::filled(1, 7, 7, 0.3);
  const FunctionPredictor pred = constant_predictor(0.9);
  const SubdivisionResult result =
      subdivide_infer(coarse, pred, dummy_features(), SubdivisionConfig{7, 10});
  CHECK(result.grid.values == coarse.values);
  CHECK(result.trace.total_evaluations == 0);
  CHECK(result.trace.steps.empty());
}

TEST_CASE("subdivide_infer trace totals and budget equality") {
  const ProbGrid coarse = ProbGrid::filled(1, 7, 7, 0.5);
  const FunctionPredictor pred = constant_predictor(0.5);
  const SubdivisionResult result =
      subdivide_infer(coarse, pred, dummy_features(), SubdivisionConfig{224, 784});
  CHECK(result.trace.total_evaluations == 3332);
  REQUIRE(result.trace.steps.size() == 5);
  CHECK(result.trace.steps[0].evaluated == 196);  // 14^2 grid has only 196 cells
  for (int i = 1; i < 5; ++i) CHECK(result.trace.steps[i].evaluated == 784);
  std::int64_t sum = 0;
  for (const auto& s : result.trace.steps) sum += s.evaluated;
  CHECK(sum == result.trace.total_evaluations);
}

TEST_CASE("budget bound property over random configurations") {
  Xoshiro256ss rng(99);
  const FunctionPredictor pred = constant_predictor(0.5);
  for (int trial = 0; trial < 40; ++trial) {
    const int m0 = 1 + int(rng.below(8));
    const int t = int(rng.below(4));
    const int m = m0 << t;
    const int n = 1 + int(rng.below(500));
    const ProbGrid coarse = ProbGrid::filled(1, m0, m0, rng.next_double());
    const SubdivisionResult result =
        subdivide_infer(coarse, pred, dummy_features(), SubdivisionConfig{m, n});
    const PointBudget budget = point_budget(m0, m, n);
    CHECK(result.trace.total_evaluations <= budget.max_evaluations);
    bool all_steps_saturated = true;
    for (const auto& s : result.trace.steps) {
      all_steps_saturated = all_steps_saturated && s.candidates >= n;
    }
    if (all_steps_saturated) CHECK(result.trace.total_evaluations == budget.max_evaluations);
  }
}

TEST_CASE("oracle predictor with a full budget rasterizes the scene exactly") {
  const ShapeMix mix;
  const auto scenes = generate_dataset(5, 1, mix, 404);
  CoarseConfig coarse_cfg;
  coarse_cfg.resolution = 8;
  coarse_cfg.noise_sigma = 0.1;
  const int m = 32;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const FunctionPredictor oracle = make_oracle_predictor(scenes[i], 1);
    const ProbGrid coarse = oracle_coarse(scenes[i], 1, coarse_cfg, 1000 + i);
    const SubdivisionResult result =
        subdivide_infer(coarse, oracle, dummy_features(), SubdivisionConfig{m, m * m});
    const BinaryMask got = threshold_mask(result.grid);
    const BinaryMask expect = rasterize(scenes[i], m, 1);
    CHECK(got.values == expect.values);
  }
}

TEST_CASE("unselected cells keep their upsampled values at the final step") {
  Xoshiro256ss rng(123);
  ProbGrid coarse = ProbGrid::filled(1, 4, 4, 0.0);
  for (double& v : coarse.values) v = rng.next_double();
  const FunctionPredictor pred = constant_predictor(1.0);
  const int n = 5;

  // Capture the grid after the penultimate step, then verify by hand.
  ProbGrid before_final;
  const SubdivisionResult result = subdivide_infer(
      coarse, pred, dummy_features(), SubdivisionConfig{16, n},
      [&](int step, const ProbGrid& grid) {
        if (step == 1) before_final = grid;
      });
  const ProbGrid upsampled = bilinear_upsample_x2(before_final);
  const GridIndexSet selected = select_top_n(uncertainty_map(upsampled), n);
  std::set<std::pair<int, int>> chosen;
  for (const GridCell& cell : selected.cells) chosen.insert({cell.row, cell.col});
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      if (chosen.count({r, c})) {
        CHECK(result.grid.at(0, r, c) == doctest::Approx(1.0));
      } else {
        CHECK(result.grid.at(0, r, c) == upsampled.at(0, r, c));
      }
    }
  }
}

TEST_CASE("monotone budget: N1 <= N2 selects a step-1 subset and more evaluations") {
  Xoshiro256ss rng(321);
  ProbGrid coarse = ProbGrid::filled(1, 6, 6, 0.0);
  for (double& v : coarse.values) v = rng.next_double();
  const ProbGrid up = bilinear_upsample_x2(coarse);
  const UncertaintyMap umap = uncertainty_map(up);
  const GridIndexSet small = select_top_n(umap, 9);
  const GridIndexSet big = select_top_n(umap, 30);
  std::set<std::pair<int, int>> big_set;
  for (const GridCell& cell : big.cells) big_set.insert({cell.row, cell.col});
  for (const GridCell& cell : small.cells) CHECK(big_set.count({cell.row, cell.col}) == 1);

  const FunctionPredictor pred = constant_predictor(0.5);
  const auto r1 = subdivide_infer(coarse, pred, dummy_features(), SubdivisionConfig{24, 9});
  const auto r2 = subdivide_infer(coarse, pred, dummy_features(), SubdivisionConfig{24, 30});
  CHECK(r1.trace.total_evaluations <= r2.trace.total_evaluations);
}

TEST_CASE("per-step selected uncertainties are recorded sorted") {
  Xoshiro256ss rng(55);
  ProbGrid coarse = ProbGrid::filled(1, 4, 4, 0.0);
  for (double& v : coarse.values) v = rng.next_double();
  const FunctionPredictor pred = constant_predictor(0.25);
  const SubdivisionResult result =
      subdivide_infer(coarse, pred, dummy_features(), SubdivisionConfig{16, 12});
  for (const auto& s : result.trace.steps) {
    CHECK(s.min_uncertainty <= s.max_uncertainty + 1e-15);
    CHECK(s.candidates == std::int64_t(s.grid_h) * s.grid_w);
  }
}

TEST_CASE("dense_infer") {
  SUBCASE("m = 1 evaluates exactly the center") {
    const ProbGrid coarse = ProbGrid::filled(1, 1, 1, 0.5);
    int calls = 0;
    Point seen{};
    const FunctionPredictor probe(1, 0, [&](const PointSet& pts, const Matrix&) {
      calls += pts.size();
      seen = pts.points.at(0);
      Matrix out(pts.size(), 1);
      for (double& v : out.data) v = 0.5;
      return out;
    });
    dense_infer(probe, dummy_features(), coarse, 1);
    CHECK(calls == 1);
    CHECK(seen.x == doctest::Approx(0.5));
    CHECK(seen.y == doctest::Approx(0.5));
  }

  SUBCASE("constant predictor gives a constant grid") {
    const ProbGrid coarse = ProbGrid::filled(1, 2, 2, 0.5);
    const ProbGrid out = dense_infer(constant_predictor(0.75), dummy_features(), coarse, 8);
    for (double v : out.values) CHECK(v == doctest::Approx(0.75));
  }

  SUBCASE("m = 16 with a real head matches a per-point loop") {
    PointHeadConfig cfg;
    cfg.fine_channels = 1;
    cfg.coarse_channels = 1;
    cfg.hidden_layers = 2;
    cfg.hidden_width = 8;
    cfg.output_classes = 1;
    const PointHeadParams params = init_point_head(cfg, 17);
    const MlpPointPredictor pred(params);
    Xoshiro256ss rng(18);
    FeatureMap fine = FeatureMap::filled(1, 6, 6, 0.0);
    for (double& v : fine.values) v = rng.uniform(-1.0, 1.0);
    ProbGrid coarse = ProbGrid::filled(1, 4, 4, 0.0);
    for (double& v : coarse.values) v = rng.next_double();

    const ProbGrid out = dense_infer(pred, {fine}, coarse, 16);
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 16; ++c) {
        PointSet one;
        one.points = {cell_center(r, c, 16, 16)};
        const Matrix features = assemble_point_features({fine}, coarse, one);
        const Matrix p = point_head_forward(params, features);
        CHECK(out.at(0, r, c) == p.at(0, 0));
      }
    }
  }
}

TEST_CASE("subdivision handles multiclass grids with the top1-top2 measure") {
  const ShapeMix mix;
  const auto scenes = generate_dataset(1, 3, mix, 71);
  const Scene& scene = scenes[0];
  CoarseConfig coarse_cfg;
  coarse_cfg.resolution = 4;
  const ProbGrid coarse = oracle_coarse(scene, 3, coarse_cfg);
  const FunctionPredictor oracle = make_oracle_predictor(scene, 3);
  const int m = 16;
  const SubdivisionResult result =
      subdivide_infer(coarse, oracle, dummy_features(), SubdivisionConfig{m, m * m});
  const auto labels = argmax_labels(result.grid);
  const auto expect = rasterize_labels(scene, m);
  CHECK(labels == expect);
}

TEST_CASE("trace CSV layout") {
  const ProbGrid coarse = ProbGrid::filled(1, 4, 4, 0.5);
  const FunctionPredictor pred = constant_predictor(0.5);
  const SubdivisionResult result =
      subdivide_infer(coarse, pred, dummy_features(), SubdivisionConfig{16, 10});
  const std::string csv = result.trace.to_csv();
  CHECK(csv.rfind("step,grid_h,grid_w,evaluated,cum_evaluated,cum_madds\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 steps
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS((SubdivisionConfig{100, 10}.validate(7)), ConfigError);
  CHECK_THROWS_AS((SubdivisionConfig{4, 10}.validate(7)), ConfigError);
  CHECK_THROWS_AS((SubdivisionConfig{28, 0}.validate(7)), ConfigError);
  SubdivisionConfig{28, 10}.validate(7);
}
