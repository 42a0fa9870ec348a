#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <variant>
#include <vector>

#include "subdrend/grid.hpp"

namespace subdrend {

// Analytic shapes over the [0,1]^2 domain. Boundaries are closed: a point
// exactly on a boundary counts as inside. Shapes may extend past the domain;
// only queries are restricted to it.

struct Disk {
  Point center;
  double radius = 0.0;
};

struct RotatedRect {
  Point center;
  double half_x = 0.0;
  double half_y = 0.0;
  double angle = 0.0;  // radians, counter-clockwise in (x right, y down) coords
};

struct Polygon {
  std::vector<Point> vertices;  // non-self-intersecting
};

// Star-shaped blob with boundary r(theta) = base * (1 + sum_k a_k cos(k theta + phi_k)),
// harmonics up to order 8; requires sum |a_k| < 1 so the radius stays positive.
struct FourierBlob {
  Point center;
  double base_radius = 0.0;
  std::vector<double> amplitudes;
  std::vector<double> phases;

  double radius_at(double theta) const;
};

struct Shape {
  std::variant<Disk, RotatedRect, Polygon, FourierBlob> geom;
  int class_id = 1;

  bool contains(Point p) const;
  void validate() const;
};

// Ordered shape list; later shapes occlude earlier ones. Class 0 is the
// background. Binary tasks use a single foreground class with id 1 and a
// one-channel prediction grid for it.
struct Scene {
  std::vector<Shape> shapes;

  // Class of the topmost shape containing p, or 0 for background.
  int class_at(Point p) const;
  void validate() const;
};

// Exact occupancy query: 1 iff class_at(point) == class_id. Throws if the
// point is outside [0,1]^2.
int occupancy(const Scene& scene, Point p, int class_id);

// Occupancy at every cell center of an m x m grid.
BinaryMask rasterize(const Scene& scene, int m, int class_id);

// Per-cell class labels at cell centers of an m x m grid.
std::vector<int> rasterize_labels(const Scene& scene, int m);

// Precomputes boundary geometry (blob boundaries are densely polygonized) so
// repeated distance queries stay cheap. Queries are pure and thread-safe.
class SceneDistance {
 public:
  explicit SceneDistance(const Scene& scene);

  // Euclidean distance to the nearest shape boundary (unsigned). For blobs
  // this is the distance to the cached boundary polyline.
  double boundary_distance(Point p) const;

  // boundary_distance with sign: positive inside any shape, negative outside.
  double signed_distance(Point p) const;

 private:
  const Scene* scene_;
  std::vector<std::vector<Point>> blob_boundary_;  // per shape; empty unless blob
};

// Synthetic stand-ins for backbone feature maps. Each resolution yields one
// map whose channels are: normalized x, normalized y, a signed-distance
// channel clamped to +-kDistanceClamp, then class-indicator channels for
// classes 1..class_channels. Distance and indicator channels are box-smoothed
// by smoothing_radius cells and corrupted with Gaussian noise of noise_sigma;
// the coordinate channels stay exact.
struct FeatureSpec {
  std::vector<int> resolutions{64};
  int class_channels = 0;
  double noise_sigma = 0.0;
  int smoothing_radius = 0;

  static constexpr double kDistanceClamp = 0.25;

  void validate() const;
  int channels_per_map() const { return 3 + class_channels; }
  int total_channels() const { return channels_per_map() * static_cast<int>(resolutions.size()); }
};

std::vector<FeatureMap> synth_features(const Scene& scene, const FeatureSpec& spec,
                                       std::uint64_t seed);

// Which shape kinds the generator may draw, and how many per scene.
struct ShapeMix {
  bool disks = true;
  bool rects = true;
  bool polygons = true;
  bool blobs = true;
  int min_shapes = 1;
  int max_shapes = 3;

  void validate() const;
};

// Deterministic random scenes. classes == 1 gives binary scenes (all shapes
// class 1); classes > 1 draws shape classes uniformly from 1..classes-1.
// Documented ranges: centers in [0.2, 0.8], disk/blob radii and rect half
// extents in [0.05, 0.4], blob harmonic magnitudes capped so sum |a_k| <= 0.55.
std::vector<Scene> generate_dataset(int count, int classes, const ShapeMix& mix,
                                    std::uint64_t seed);

// Line-oriented text format, one shape per line; '#' starts a comment.
// Round-trips losslessly (values printed with 17 significant digits).
void save_scene(const Scene& scene, std::ostream& os);
Scene load_scene(std::istream& is);
void save_scene_file(const Scene& scene, const std::filesystem::path& path);
Scene load_scene_file(const std::filesystem::path& path);

}  // namespace subdrend
