#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "subdrend/grid.hpp"
#include "subdrend/sampling.hpp"
#include "subdrend/scene.hpp"

namespace subdrend {

// Weight-shared MLP predicting a label at one real-valued point from
// concatenated fine-grained + coarse features. The K coarse values are
// appended to the raw input and to every hidden activation, so layer 0 sees
// fine_channels + coarse_channels inputs and every later layer sees
// hidden_width + coarse_channels.
struct PointHeadConfig {
  int fine_channels = 0;
  int coarse_channels = 1;
  int hidden_layers = 3;
  int hidden_width = 256;
  int output_classes = 1;  // 1 -> sigmoid, >1 -> softmax

  void validate() const;
  int layer_count() const { return hidden_layers + 1; }
  int input_width(int layer) const;
  int output_width(int layer) const;
  std::uint64_t madds_per_point() const;
};

struct PointHeadParams {
  PointHeadConfig config;
  std::vector<Matrix> weights;              // per layer, out x in
  std::vector<std::vector<double>> biases;  // per layer, out

  void validate() const;
};

// Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)) per layer,
// zero biases; bit-reproducible for a given seed.
PointHeadParams init_point_head(const PointHeadConfig& cfg, std::uint64_t seed);

// Per point: bilinear samples from each fine map in list order, then the K
// coarse values. Throws on an empty map list.
Matrix assemble_point_features(const std::vector<FeatureMap>& fine_maps, const ProbGrid& coarse,
                               const PointSet& pts);

// Per-point probabilities (|pts| x K). Points are independent; identical
// results for any thread count.
Matrix point_head_forward(const PointHeadParams& params, const Matrix& features, int threads = 1);

// Mean binary cross-entropy; probabilities are clamped to
// [1e-7, 1 - 1e-7] before the logs. Labels must be exactly 0 or 1.
double loss_bce(const Matrix& probs, std::span<const double> labels);

// Mean -log p[label] with the same clamping.
double loss_ce_multiclass(const Matrix& probs, std::span<const int> labels);

struct PointHeadGrads {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  double loss = 0.0;
};

// Analytic gradients of the mean loss w.r.t. every parameter. The loss clamp
// guards only the reported value; gradients use the exact softmax/sigmoid
// cross-entropy form (p - y), which matches the unclamped composition.
// Per-point contributions are accumulated in fixed chunk order, so results
// are bit-identical for any thread count.
PointHeadGrads point_head_backward(const PointHeadParams& params, const Matrix& features,
                                   std::span<const double> binary_labels, int threads = 1);
PointHeadGrads point_head_backward(const PointHeadParams& params, const Matrix& features,
                                   std::span<const int> class_labels, int threads = 1);

// Classical momentum: v <- mu*v + g; theta <- theta - lr*v.
void sgd_update(std::span<double> value, std::span<const double> grad, std::span<double> velocity,
                double lr, double momentum);

struct SgdState {
  std::vector<Matrix> weight_velocity;
  std::vector<std::vector<double>> bias_velocity;

  static SgdState zeros_like(const PointHeadParams& params);
};

void sgd_step(PointHeadParams& params, const PointHeadGrads& grads, double lr, double momentum,
              SgdState& state);

// One region of training data: a scene plus its synthetic backbone features.
struct TrainRegion {
  Scene scene;
  std::vector<FeatureMap> fine_maps;
};

// Supplies the coarse prediction for each region during training. A
// trainable implementation accumulates its own loss gradients in
// accumulate() and updates itself in apply().
class CoarseSource {
 public:
  virtual ~CoarseSource() = default;
  virtual const ProbGrid& coarse_for(int region_index) = 0;
  virtual void begin_step() {}
  virtual double accumulate(int region_index) {
    (void)region_index;
    return 0.0;
  }
  virtual void apply(double lr, double momentum) {
    (void)lr;
    (void)momentum;
  }
  virtual bool trainable() const { return false; }
};

// Fixed per-region coarse grids (oracle-style sources).
class FixedCoarseSource : public CoarseSource {
 public:
  explicit FixedCoarseSource(std::vector<ProbGrid> grids) : grids_(std::move(grids)) {}
  const ProbGrid& coarse_for(int region_index) override { return grids_.at(region_index); }

 private:
  std::vector<ProbGrid> grids_;
};

struct TrainConfig {
  double learning_rate = 0.2;
  double momentum = 0.9;
  int steps = 500;
  int batch_scenes = 2;
  SamplerConfig sampler{196, 3.0, 0.75};
  bool regular_grid = false;  // fixed lattice instead of the biased sampler
  std::uint64_t rng_seed = 1;

  void validate() const;
  int points_per_region() const { return sampler.n_points; }
};

struct TrainLogRow {
  int step = 0;
  double point_loss = 0.0;
  double coarse_loss = 0.0;
};

struct TrainResult {
  PointHeadParams head;
  std::vector<TrainLogRow> log;
};

// SGD training loop. Each step takes batch_scenes regions round-robin,
// samples N training points per region from the coarse prediction, labels
// them with the exact scene occupancy (class 1 for binary heads, the scene
// class otherwise), and applies one momentum-SGD update on the mean loss.
// Deterministic given rng_seed; thread count never changes results.
TrainResult train_point_head(PointHeadParams initial, std::span<const TrainRegion> regions,
                             CoarseSource& coarse_source, const TrainConfig& cfg, int threads = 1);

}  // namespace subdrend
