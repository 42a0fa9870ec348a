#include <doctest.h>

#include <cmath>

#include "subdrend/errors.hpp"
#include "subdrend/grid.hpp"
#include "subdrend/rng.hpp"

using namespace subdrend;

namespace {

FeatureMap map_2x2_0123() {
  FeatureMap m = FeatureMap::filled(1, 2, 2, 0.0);
  m.values = {0.0, 1.0, 2.0, 3.0};
  return m;
}

ProbGrid random_prob_grid(int k, int h, int w, Xoshiro256ss& rng) {
  ProbGrid g = ProbGrid::filled(k, h, w, 0.0);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i) {
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
      const double v = rng.next_double() + 1e-6;
      g.values[c * plane + i] = v;
      sum += v;
    }
    if (k > 1) {
      for (int c = 0; c < k; ++c) g.values[c * plane + i] /= sum;
    }
  }
  return g;
}

// Closed-form 4-neighbor oracle, written independently of the library kernel
// (lerp-of-lerps instead of weight sums).
double bilinear_oracle(const FeatureMap& m, int channel, double x, double y) {
  const double gx = std::clamp(x * m.width - 0.5, 0.0, double(m.width - 1));
  const double gy = std::clamp(y * m.height - 0.5, 0.0, double(m.height - 1));
  const int x0 = std::min(int(gx), m.width - 1);
  const int y0 = std::min(int(gy), m.height - 1);
  const int x1 = std::min(x0 + 1, m.width - 1);
  const int y1 = std::min(y0 + 1, m.height - 1);
  const double tx = gx - x0, ty = gy - y0;
  const double top = m.at(channel, y0, x0) + tx * (m.at(channel, y0, x1) - m.at(channel, y0, x0));
  const double bot = m.at(channel, y1, x0) + tx * (m.at(channel, y1, x1) - m.at(channel, y1, x0));
  return top + ty * (bot - top);
}

}  // namespace

TEST_CASE("cell_center convention") {
  CHECK(cell_center(0, 0, 2, 2).x == doctest::Approx(0.25));
  CHECK(cell_center(0, 0, 2, 2).y == doctest::Approx(0.25));
  CHECK(cell_center(1, 1, 2, 2).x == doctest::Approx(0.75));
  CHECK(cell_center(1, 1, 2, 2).y == doctest::Approx(0.75));
  CHECK(cell_center(0, 0, 1, 1).x == doctest::Approx(0.5));
  CHECK(cell_center(0, 0, 1, 1).y == doctest::Approx(0.5));
  CHECK_THROWS_AS(cell_center(2, 0, 2, 2), ConfigError);
  CHECK_THROWS_AS(cell_center(0, -1, 2, 2), ConfigError);
}

TEST_CASE("bilinear_sample basics") {
  const FeatureMap constant = FeatureMap::filled(3, 4, 5, 5.0);
  PointSet pts;
  Xoshiro256ss rng(11);
  for (int i = 0; i < 50; ++i) pts.points.push_back({rng.next_double(), rng.next_double()});
  const Matrix out = bilinear_sample(constant, pts);
  for (int i = 0; i < out.rows; ++i) {
    for (int c = 0; c < out.cols; ++c) CHECK(out.at(i, c) == doctest::Approx(5.0));
  }

  const FeatureMap m = map_2x2_0123();
  PointSet q;
  q.points = {{0.5, 0.5}, {0.0, 0.0}};
  const Matrix r = bilinear_sample(m, q);
  CHECK(r.at(0, 0) == doctest::Approx(1.5));
  CHECK(r.at(1, 0) == doctest::Approx(0.0));

  CHECK_THROWS_AS(bilinear_sample(FeatureMap{}, q), ConfigError);
  PointSet bad;
  bad.points = {{std::nan(""), 0.5}};
  CHECK_THROWS_AS(bilinear_sample(m, bad), ConfigError);
}

TEST_CASE("bilinear_sample at cell centers returns cell values") {
  Xoshiro256ss rng(22);
  FeatureMap m = FeatureMap::filled(2, 7, 5, 0.0);
  for (double& v : m.values) v = rng.uniform(-3.0, 3.0);
  PointSet pts;
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) pts.points.push_back(cell_center(r, c, m.height, m.width));
  }
  const Matrix out = bilinear_sample(m, pts);
  int i = 0;
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c, ++i) {
      for (int ch = 0; ch < m.channels; ++ch) {
        CHECK(std::abs(out.at(i, ch) - m.at(ch, r, c)) <= 1e-6);
      }
    }
  }
}

TEST_CASE("bilinear_sample convexity and oracle agreement") {
  Xoshiro256ss rng(33);
  FeatureMap m = FeatureMap::filled(1, 9, 6, 0.0);
  for (double& v : m.values) v = rng.uniform(-2.0, 2.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const double x = rng.uniform(-0.2, 1.2);
    const double y = rng.uniform(-0.2, 1.2);
    PointSet pts;
    pts.points = {{x, y}};
    const double got = bilinear_sample(m, pts).at(0, 0);
    CHECK(std::abs(got - bilinear_oracle(m, 0, x, y)) <= 1e-6);

    // Convexity: within [min, max] of the 4 neighbors.
    const double gx = std::clamp(x * m.width - 0.5, 0.0, double(m.width - 1));
    const double gy = std::clamp(y * m.height - 0.5, 0.0, double(m.height - 1));
    const int x0 = std::min(int(gx), m.width - 1), y0 = std::min(int(gy), m.height - 1);
    const int x1 = std::min(x0 + 1, m.width - 1), y1 = std::min(y0 + 1, m.height - 1);
    double lo = 1e30, hi = -1e30;
    for (int rr : {y0, y1}) {
      for (int cc : {x0, x1}) {
        lo = std::min(lo, m.at(0, rr, cc));
        hi = std::max(hi, m.at(0, rr, cc));
      }
    }
    CHECK(got >= lo - 1e-12);
    CHECK(got <= hi + 1e-12);
  }
}

TEST_CASE("bilinear_upsample_x2 grids") {
  const ProbGrid constant = ProbGrid::filled(1, 3, 3, 0.42);
  const ProbGrid up = bilinear_upsample_x2(constant);
  CHECK(up.height == 6);
  CHECK(up.width == 6);
  for (double v : up.values) CHECK(v == doctest::Approx(0.42));

  const ProbGrid single = ProbGrid::filled(1, 1, 1, 0.7);
  const ProbGrid single_up = bilinear_upsample_x2(single);
  CHECK(single_up.height == 2);
  for (double v : single_up.values) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("bilinear_upsample_x2 equals per-cell bilinear_sample at output centers") {
  // 2x2 case from first principles.
  ProbGrid g = ProbGrid::filled(1, 2, 2, 0.0);
  g.values = {0.0, 0.25, 0.5, 0.75};
  const ProbGrid up = bilinear_upsample_x2(g);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      PointSet pts;
      pts.points = {cell_center(r, c, 4, 4)};
      CHECK(std::abs(up.at(0, r, c) - bilinear_sample(g, pts).at(0, 0)) <= 1e-6);
    }
  }
  // Center cell value check: (1,1) blends all four input cells at weights
  // 0.75/0.25 per axis.
  CHECK(up.at(0, 1, 1) ==
        doctest::Approx(0.75 * 0.75 * 0.0 + 0.25 * 0.75 * 0.25 + 0.75 * 0.25 * 0.5 +
                        0.25 * 0.25 * 0.75));

  // Random grids, K = 3: agreement and preserved invariants.
  Xoshiro256ss rng(44);
  for (int trial = 0; trial < 10; ++trial) {
    const ProbGrid grid = random_prob_grid(3, 4, 5, rng);
    const ProbGrid up3 = bilinear_upsample_x2(grid);
    up3.validate();
    PointSet pts;
    for (int r = 0; r < up3.height; ++r) {
      for (int c = 0; c < up3.width; ++c) pts.points.push_back(cell_center(r, c, up3.height, up3.width));
    }
    const Matrix sampled = bilinear_sample(grid, pts);
    int i = 0;
    for (int r = 0; r < up3.height; ++r) {
      for (int c = 0; c < up3.width; ++c, ++i) {
        for (int k = 0; k < 3; ++k) CHECK(std::abs(up3.at(k, r, c) - sampled.at(i, k)) <= 1e-6);
      }
    }
  }
}

TEST_CASE("scatter semantics") {
  const ProbGrid grid = ProbGrid::filled(1, 3, 3, 0.5);

  SUBCASE("empty cell list is the identity") {
    const ProbGrid out = scatter(grid, {}, Matrix(0, 0));
    CHECK(out.values == grid.values);
  }

  SUBCASE("single cell grid") {
    const ProbGrid one = ProbGrid::filled(1, 1, 1, 0.2);
    Matrix v(1, 1);
    v.at(0, 0) = 0.9;
    const ProbGrid out = scatter(one, GridIndexSet{{{0, 0}}}, v);
    CHECK(out.values[0] == doctest::Approx(0.9));
    CHECK(one.values[0] == doctest::Approx(0.2));  // input untouched
  }

  SUBCASE("read-back oracle over random cases") {
    Xoshiro256ss rng(55);
    for (int trial = 0; trial < 100; ++trial) {
      const int h = 2 + int(rng.below(6)), w = 2 + int(rng.below(6));
      const ProbGrid base = ProbGrid::filled(1, h, w, 0.5);
      const int n = 1 + int(rng.below(std::uint64_t(h) * w));
      GridIndexSet cells;
      std::vector<std::pair<int, int>> seen;
      while (int(cells.cells.size()) < n) {
        const int r = int(rng.below(h)), c = int(rng.below(w));
        bool dup = false;
        for (auto& p : seen) dup = dup || (p.first == r && p.second == c);
        if (!dup) {
          cells.cells.push_back({r, c});
          seen.emplace_back(r, c);
        }
      }
      Matrix vals(int(cells.cells.size()), 1);
      for (int i = 0; i < vals.rows; ++i) vals.at(i, 0) = rng.next_double();
      const ProbGrid out = scatter(base, cells, vals);
      for (int i = 0; i < vals.rows; ++i) {
        CHECK(out.at(0, cells.cells[i].row, cells.cells[i].col) == vals.at(i, 0));
      }
    }
  }

  SUBCASE("disjoint scatters commute") {
    Matrix a(1, 1), b(1, 1);
    a.at(0, 0) = 0.1;
    b.at(0, 0) = 0.9;
    const GridIndexSet ca{{{0, 0}}}, cb{{{2, 2}}};
    const ProbGrid ab = scatter(scatter(grid, ca, a), cb, b);
    const ProbGrid ba = scatter(scatter(grid, cb, b), ca, a);
    CHECK(ab.values == ba.values);
  }

  SUBCASE("errors") {
    Matrix v(2, 1);
    v.at(0, 0) = 0.1;
    v.at(1, 0) = 0.2;
    CHECK_THROWS_AS(scatter(grid, GridIndexSet{{{0, 0}, {0, 0}}}, v), ConfigError);
    CHECK_THROWS_AS(scatter(grid, GridIndexSet{{{0, 0}}}, v), ConfigError);  // length mismatch
    CHECK_THROWS_AS(scatter(grid, GridIndexSet{{{5, 0}}}, Matrix(1, 1)), ConfigError);
    Matrix bad(1, 1);
    bad.at(0, 0) = 1.5;
    CHECK_THROWS_AS(scatter(grid, GridIndexSet{{{0, 0}}}, bad), ConfigError);

    // Off-simplex rows are rejected for K > 1.
    const ProbGrid multi = ProbGrid::filled(2, 2, 2, 0.5);
    Matrix off(1, 2);
    off.at(0, 0) = 0.8;
    off.at(0, 1) = 0.8;
    CHECK_THROWS_AS(scatter(multi, GridIndexSet{{{0, 0}}}, off), ConfigError);
  }
}

TEST_CASE("concat_features") {
  Matrix a(2, 2), b(2, 1);
  a.data = {1.0, 2.0, 10.0, 20.0};
  b.data = {3.0, 30.0};
  const Matrix out = concat_features(a, b);
  CHECK(out.cols == 3);
  CHECK(out.at(0, 0) == 1.0);
  CHECK(out.at(0, 1) == 2.0);
  CHECK(out.at(0, 2) == 3.0);
  CHECK(out.at(1, 2) == 30.0);

  const Matrix empty(2, 0);
  const Matrix same = concat_features(a, empty);
  CHECK(same.cols == a.cols);
  CHECK(same.data == a.data);

  CHECK_THROWS_AS(concat_features(a, Matrix(3, 1)), ConfigError);
}

TEST_CASE("ProbGrid validation") {
  ProbGrid g = ProbGrid::filled(2, 1, 1, 0.5);
  g.validate();
  g.values = {0.6, 0.6};
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g.values = {1.2, -0.2};
  CHECK_THROWS_AS(g.validate(), ConfigError);
}
