#include "subdrend/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "subdrend/errors.hpp"
#include "subdrend/rng.hpp"

namespace subdrend {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kGeomEps = 1e-12;
constexpr int kBlobBoundarySamples = 512;

double dist2(Point a, Point b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

double point_segment_distance(Point p, Point a, Point b) {
  const double abx = b.x - a.x;
  const double aby = b.y - a.y;
  const double len2 = abx * abx + aby * aby;
  if (len2 <= 0.0) return std::sqrt(dist2(p, a));
  double t = ((p.x - a.x) * abx + (p.y - a.y) * aby) / len2;
  t = std::clamp(t, 0.0, 1.0);
  const Point q{a.x + t * abx, a.y + t * aby};
  return std::sqrt(dist2(p, q));
}

bool point_in_polygon(const std::vector<Point>& verts, Point p) {
  // Closed boundary: points within kGeomEps of an edge count as inside.
  const std::size_t n = verts.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (point_segment_distance(p, verts[i], verts[(i + 1) % n]) <= kGeomEps) return true;
  }
  // Winding number; robust to collinear edges because boundary hits were
  // handled above.
  int winding = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = verts[i];
    const Point& b = verts[(i + 1) % n];
    if (a.y <= p.y) {
      if (b.y > p.y) {
        const double cross = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
        if (cross > 0.0) ++winding;
      }
    } else {
      if (b.y <= p.y) {
        const double cross = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
        if (cross < 0.0) --winding;
      }
    }
  }
  return winding != 0;
}

// Proper intersection test for polygon simplicity checking.
double orient(Point a, Point b, Point c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

bool segments_cross(Point a, Point b, Point c, Point d) {
  const double o1 = orient(a, b, c);
  const double o2 = orient(a, b, d);
  const double o3 = orient(c, d, a);
  const double o4 = orient(c, d, b);
  return ((o1 > kGeomEps && o2 < -kGeomEps) || (o1 < -kGeomEps && o2 > kGeomEps)) &&
         ((o3 > kGeomEps && o4 < -kGeomEps) || (o3 < -kGeomEps && o4 > kGeomEps));
}

Point rect_local(const RotatedRect& r, Point p) {
  const double c = std::cos(r.angle);
  const double s = std::sin(r.angle);
  const double dx = p.x - r.center.x;
  const double dy = p.y - r.center.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

double rect_boundary_distance(const RotatedRect& r, Point p) {
  const Point q = rect_local(r, p);
  const double qx = std::abs(q.x) - r.half_x;
  const double qy = std::abs(q.y) - r.half_y;
  const double ox = std::max(qx, 0.0);
  const double oy = std::max(qy, 0.0);
  const double outside = std::sqrt(ox * ox + oy * oy);
  const double inside = std::min(std::max(qx, qy), 0.0);
  return std::abs(outside + inside);
}

double polyline_distance(const std::vector<Point>& closed, Point p) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = closed.size();
  for (std::size_t i = 0; i < n; ++i) {
    best = std::min(best, point_segment_distance(p, closed[i], closed[(i + 1) % n]));
  }
  return best;
}

}  // namespace

double FourierBlob::radius_at(double theta) const {
  double f = 1.0;
  for (std::size_t k = 0; k < amplitudes.size(); ++k) {
    f += amplitudes[k] * std::cos((static_cast<double>(k) + 1.0) * theta + phases[k]);
  }
  return base_radius * f;
}

bool Shape::contains(Point p) const {
  return std::visit(
      [&](const auto& g) -> bool {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, Disk>) {
          return dist2(p, g.center) <= g.radius * g.radius;
        } else if constexpr (std::is_same_v<T, RotatedRect>) {
          const Point q = rect_local(g, p);
          return std::abs(q.x) <= g.half_x && std::abs(q.y) <= g.half_y;
        } else if constexpr (std::is_same_v<T, Polygon>) {
          return point_in_polygon(g.vertices, p);
        } else {
          const double dx = p.x - g.center.x;
          const double dy = p.y - g.center.y;
          const double rho2 = dx * dx + dy * dy;
          const double r = g.radius_at(std::atan2(dy, dx));
          return rho2 <= r * r;
        }
      },
      geom);
}

void Shape::validate() const {
  std::visit(
      [&](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, Disk>) {
          if (!(g.radius > 0.0)) throw ConfigError("Disk: radius must be positive");
        } else if constexpr (std::is_same_v<T, RotatedRect>) {
          if (!(g.half_x > 0.0 && g.half_y > 0.0)) {
            throw ConfigError("RotatedRect: half extents must be positive");
          }
        } else if constexpr (std::is_same_v<T, Polygon>) {
          const auto& v = g.vertices;
          if (v.size() < 3) throw ConfigError("Polygon: needs at least 3 vertices");
          for (std::size_t i = 0; i < v.size(); ++i) {
            for (std::size_t j = i + 1; j < v.size(); ++j) {
              // Skip edges sharing a vertex.
              if (j == i || (j + 1) % v.size() == i || (i + 1) % v.size() == j) continue;
              if (segments_cross(v[i], v[(i + 1) % v.size()], v[j], v[(j + 1) % v.size()])) {
                throw ConfigError("Polygon: self-intersecting");
              }
            }
          }
        } else {
          if (!(g.base_radius > 0.0)) throw ConfigError("FourierBlob: base radius must be positive");
          if (g.amplitudes.size() != g.phases.size()) {
            throw ConfigError("FourierBlob: amplitude/phase count mismatch");
          }
          if (g.amplitudes.size() > 8) throw ConfigError("FourierBlob: harmonics above order 8");
          double total = 0.0;
          for (double a : g.amplitudes) total += std::abs(a);
          if (!(total < 1.0)) throw ConfigError("FourierBlob: sum |a_k| must be < 1");
        }
      },
      geom);
  if (class_id < 0) throw ConfigError("Shape: class_id must be >= 0");
}

int Scene::class_at(Point p) const {
  for (auto it = shapes.rbegin(); it != shapes.rend(); ++it) {
    if (it->contains(p)) return it->class_id;
  }
  return 0;
}

void Scene::validate() const {
  for (const Shape& s : shapes) s.validate();
}

int occupancy(const Scene& scene, Point p, int class_id) {
  if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
    throw ConfigError("occupancy: point outside [0,1]^2");
  }
  return scene.class_at(p) == class_id ? 1 : 0;
}

BinaryMask rasterize(const Scene& scene, int m, int class_id) {
  if (m <= 0) throw ConfigError("rasterize: resolution must be positive");
  BinaryMask mask = BinaryMask::filled(m, m, 0);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      mask.at(r, c) = static_cast<std::uint8_t>(occupancy(scene, cell_center(r, c, m, m), class_id));
    }
  }
  return mask;
}

std::vector<int> rasterize_labels(const Scene& scene, int m) {
  if (m <= 0) throw ConfigError("rasterize_labels: resolution must be positive");
  std::vector<int> labels(static_cast<std::size_t>(m) * m);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      labels[static_cast<std::size_t>(r) * m + c] = scene.class_at(cell_center(r, c, m, m));
    }
  }
  return labels;
}

SceneDistance::SceneDistance(const Scene& scene) : scene_(&scene) {
  blob_boundary_.resize(scene.shapes.size());
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    if (const auto* blob = std::get_if<FourierBlob>(&scene.shapes[i].geom)) {
      auto& poly = blob_boundary_[i];
      poly.reserve(kBlobBoundarySamples);
      for (int k = 0; k < kBlobBoundarySamples; ++k) {
        const double theta = 2.0 * kPi * k / kBlobBoundarySamples;
        const double r = blob->radius_at(theta);
        poly.push_back({blob->center.x + r * std::cos(theta), blob->center.y + r * std::sin(theta)});
      }
    }
  }
}

double SceneDistance::boundary_distance(Point p) const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scene_->shapes.size(); ++i) {
    const Shape& s = scene_->shapes[i];
    double d;
    if (const auto* disk = std::get_if<Disk>(&s.geom)) {
      d = std::abs(std::sqrt(dist2(p, disk->center)) - disk->radius);
    } else if (const auto* rect = std::get_if<RotatedRect>(&s.geom)) {
      d = rect_boundary_distance(*rect, p);
    } else if (const auto* poly = std::get_if<Polygon>(&s.geom)) {
      d = polyline_distance(poly->vertices, p);
    } else {
      d = polyline_distance(blob_boundary_[i], p);
    }
    best = std::min(best, d);
  }
  return best;
}

double SceneDistance::signed_distance(Point p) const {
  const double d = boundary_distance(p);
  return scene_->class_at(p) != 0 ? d : -d;
}

void FeatureSpec::validate() const {
  if (resolutions.empty()) throw ConfigError("FeatureSpec: needs at least one resolution");
  for (int r : resolutions) {
    if (r <= 0) throw ConfigError("FeatureSpec: resolutions must be positive");
  }
  if (class_channels < 0) throw ConfigError("FeatureSpec: class_channels must be >= 0");
  if (noise_sigma < 0.0) throw ConfigError("FeatureSpec: noise_sigma must be >= 0");
  if (smoothing_radius < 0) throw ConfigError("FeatureSpec: smoothing_radius must be >= 0");
}

namespace {

// (2r+1)^2 box mean with replicated edges; r = 0 is the identity.
void box_smooth(std::vector<double>& grid, int h, int w, int radius) {
  if (radius <= 0) return;
  std::vector<double> src = grid;
  const double inv = 1.0 / ((2 * radius + 1) * (2 * radius + 1));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double sum = 0.0;
      for (int dr = -radius; dr <= radius; ++dr) {
        const int rr = std::clamp(r + dr, 0, h - 1);
        for (int dc = -radius; dc <= radius; ++dc) {
          const int cc = std::clamp(c + dc, 0, w - 1);
          sum += src[static_cast<std::size_t>(rr) * w + cc];
        }
      }
      grid[static_cast<std::size_t>(r) * w + c] = sum * inv;
    }
  }
}

}  // namespace

std::vector<FeatureMap> synth_features(const Scene& scene, const FeatureSpec& spec,
                                       std::uint64_t seed) {
  spec.validate();
  const SceneDistance dist(scene);
  std::vector<FeatureMap> maps;
  maps.reserve(spec.resolutions.size());
  for (std::size_t mi = 0; mi < spec.resolutions.size(); ++mi) {
    const int res = spec.resolutions[mi];
    FeatureMap map = FeatureMap::filled(spec.channels_per_map(), res, res, 0.0);
    const std::size_t plane = static_cast<std::size_t>(res) * res;

    for (int r = 0; r < res; ++r) {
      for (int c = 0; c < res; ++c) {
        const Point p = cell_center(r, c, res, res);
        map.at(0, r, c) = p.x;
        map.at(1, r, c) = p.y;
        const double sd = scene.shapes.empty() ? -FeatureSpec::kDistanceClamp
                                               : dist.signed_distance(p);
        map.at(2, r, c) = std::clamp(sd, -FeatureSpec::kDistanceClamp, FeatureSpec::kDistanceClamp);
        for (int k = 1; k <= spec.class_channels; ++k) {
          map.at(2 + k, r, c) = scene.class_at(p) == k ? 1.0 : 0.0;
        }
      }
    }

    // Degrade the non-coordinate channels: smooth, then seeded noise in
    // channel-major cell order.
    Xoshiro256ss rng(mix_seed(seed, seed_stream::features, mi));
    for (int ch = 2; ch < map.channels; ++ch) {
      std::vector<double> plane_vals(map.values.begin() + ch * plane,
                                     map.values.begin() + (ch + 1) * plane);
      box_smooth(plane_vals, res, res, spec.smoothing_radius);
      if (spec.noise_sigma > 0.0) {
        for (double& v : plane_vals) v += spec.noise_sigma * rng.gaussian();
      }
      std::copy(plane_vals.begin(), plane_vals.end(), map.values.begin() + ch * plane);
    }
    maps.push_back(std::move(map));
  }
  return maps;
}

void ShapeMix::validate() const {
  if (!(disks || rects || polygons || blobs)) throw ConfigError("ShapeMix: no shape kinds enabled");
  if (min_shapes < 0 || max_shapes < min_shapes) throw ConfigError("ShapeMix: bad shape counts");
}

std::vector<Scene> generate_dataset(int count, int classes, const ShapeMix& mix,
                                    std::uint64_t seed) {
  if (count < 0) throw ConfigError("generate_dataset: count must be >= 0");
  if (classes < 1) throw ConfigError("generate_dataset: classes must be >= 1");
  mix.validate();
  std::vector<int> kinds;
  if (mix.disks) kinds.push_back(0);
  if (mix.rects) kinds.push_back(1);
  if (mix.polygons) kinds.push_back(2);
  if (mix.blobs) kinds.push_back(3);

  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (int si = 0; si < count; ++si) {
    Xoshiro256ss rng(mix_seed(seed, seed_stream::dataset, static_cast<std::uint64_t>(si)));
    Scene scene;
    const int n_shapes =
        mix.min_shapes + static_cast<int>(rng.below(static_cast<std::uint64_t>(
                             mix.max_shapes - mix.min_shapes + 1)));
    for (int j = 0; j < n_shapes; ++j) {
      Shape shape;
      shape.class_id =
          classes == 1 ? 1 : 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(classes - 1)));
      const Point center{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
      switch (kinds[rng.below(kinds.size())]) {
        case 0:
          shape.geom = Disk{center, rng.uniform(0.05, 0.4)};
          break;
        case 1:
          shape.geom = RotatedRect{center, rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4),
                                   rng.uniform(0.0, kPi)};
          break;
        case 2: {
          Polygon poly;
          const int nv = 3 + static_cast<int>(rng.below(6));
          const double radius = rng.uniform(0.1, 0.35);
          poly.vertices.reserve(nv);
          for (int v = 0; v < nv; ++v) {
            // Jittered angles stay strictly increasing, so the polygon is
            // star-shaped around its center and therefore simple.
            const double theta = 2.0 * kPi * (v + rng.uniform(0.05, 0.95)) / nv;
            const double rv = radius * rng.uniform(0.5, 1.0);
            poly.vertices.push_back({center.x + rv * std::cos(theta),
                                     center.y + rv * std::sin(theta)});
          }
          shape.geom = std::move(poly);
          break;
        }
        default: {
          FourierBlob blob;
          blob.center = center;
          blob.base_radius = rng.uniform(0.08, 0.3);
          const int order = 2 + static_cast<int>(rng.below(7));
          double total = 0.0;
          for (int k = 1; k <= order; ++k) {
            const double a = rng.uniform(-0.35, 0.35) / std::pow(static_cast<double>(k), 1.2);
            blob.amplitudes.push_back(a);
            blob.phases.push_back(rng.uniform(0.0, 2.0 * kPi));
            total += std::abs(a);
          }
          if (total > 0.55) {
            const double scale = 0.55 / total;
            for (double& a : blob.amplitudes) a *= scale;
          }
          shape.geom = std::move(blob);
          break;
        }
      }
      shape.validate();
      scene.shapes.push_back(std::move(shape));
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

namespace {

void print_double(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

}  // namespace

void save_scene(const Scene& scene, std::ostream& os) {
  os << "# subdrend scene v1\n";
  for (const Shape& s : scene.shapes) {
    if (const auto* disk = std::get_if<Disk>(&s.geom)) {
      os << "disk " << s.class_id << ' ';
      print_double(os, disk->center.x);
      os << ' ';
      print_double(os, disk->center.y);
      os << ' ';
      print_double(os, disk->radius);
      os << '\n';
    } else if (const auto* rect = std::get_if<RotatedRect>(&s.geom)) {
      os << "rect " << s.class_id;
      for (double v : {rect->center.x, rect->center.y, rect->half_x, rect->half_y, rect->angle}) {
        os << ' ';
        print_double(os, v);
      }
      os << '\n';
    } else if (const auto* poly = std::get_if<Polygon>(&s.geom)) {
      os << "poly " << s.class_id << ' ' << poly->vertices.size();
      for (const Point& p : poly->vertices) {
        os << ' ';
        print_double(os, p.x);
        os << ' ';
        print_double(os, p.y);
      }
      os << '\n';
    } else {
      const auto& blob = std::get<FourierBlob>(s.geom);
      os << "blob " << s.class_id;
      for (double v : {blob.center.x, blob.center.y, blob.base_radius}) {
        os << ' ';
        print_double(os, v);
      }
      os << ' ' << blob.amplitudes.size();
      for (std::size_t k = 0; k < blob.amplitudes.size(); ++k) {
        os << ' ';
        print_double(os, blob.amplitudes[k]);
        os << ' ';
        print_double(os, blob.phases[k]);
      }
      os << '\n';
    }
  }
}

Scene load_scene(std::istream& is) {
  Scene scene;
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    Shape shape;
    if (kind == "disk") {
      Disk d;
      if (!(ls >> shape.class_id >> d.center.x >> d.center.y >> d.radius)) {
        throw IoError("scene: malformed disk line");
      }
      shape.geom = d;
    } else if (kind == "rect") {
      RotatedRect r;
      if (!(ls >> shape.class_id >> r.center.x >> r.center.y >> r.half_x >> r.half_y >> r.angle)) {
        throw IoError("scene: malformed rect line");
      }
      shape.geom = r;
    } else if (kind == "poly") {
      Polygon p;
      std::size_t n = 0;
      if (!(ls >> shape.class_id >> n)) throw IoError("scene: malformed poly line");
      p.vertices.resize(n);
      for (auto& v : p.vertices) {
        if (!(ls >> v.x >> v.y)) throw IoError("scene: malformed poly vertices");
      }
      shape.geom = std::move(p);
    } else if (kind == "blob") {
      FourierBlob b;
      std::size_t n = 0;
      if (!(ls >> shape.class_id >> b.center.x >> b.center.y >> b.base_radius >> n)) {
        throw IoError("scene: malformed blob line");
      }
      b.amplitudes.resize(n);
      b.phases.resize(n);
      for (std::size_t k = 0; k < n; ++k) {
        if (!(ls >> b.amplitudes[k] >> b.phases[k])) throw IoError("scene: malformed blob harmonics");
      }
      shape.geom = std::move(b);
    } else {
      throw IoError("scene: unknown shape kind '" + kind + "'");
    }
    shape.validate();
    scene.shapes.push_back(std::move(shape));
  }
  return scene;
}

void save_scene_file(const Scene& scene, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  save_scene(scene, os);
  if (!os) throw IoError("write failed: " + path.string());
}

Scene load_scene_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  return load_scene(is);
}

}  // namespace subdrend
