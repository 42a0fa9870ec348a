#include "subdrend/point_head.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "subdrend/errors.hpp"
#include "subdrend/parallel.hpp"
#include "subdrend/rng.hpp"

namespace subdrend {

namespace {

constexpr double kProbClamp = 1e-7;
constexpr std::size_t kPointChunk = 128;

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void softmax_inplace(std::span<double> z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

// y = W x + b, W row-major out x in.
void affine(const Matrix& w, std::span<const double> b, std::span<const double> x,
            std::span<double> y) {
  for (int j = 0; j < w.rows; ++j) {
    const double* wr = w.data.data() + static_cast<std::size_t>(j) * w.cols;
    double acc = b[j];
    for (int i = 0; i < w.cols; ++i) acc += wr[i] * x[i];
    y[j] = acc;
  }
}

}  // namespace

void PointHeadConfig::validate() const {
  if (fine_channels <= 0) throw ConfigError("PointHeadConfig: fine_channels must be positive");
  if (coarse_channels <= 0) throw ConfigError("PointHeadConfig: coarse_channels must be positive");
  if (hidden_layers < 1) throw ConfigError("PointHeadConfig: hidden_layers must be >= 1");
  if (hidden_width <= 0) throw ConfigError("PointHeadConfig: hidden_width must be positive");
  if (output_classes <= 0) throw ConfigError("PointHeadConfig: output_classes must be positive");
}

int PointHeadConfig::input_width(int layer) const {
  return layer == 0 ? fine_channels + coarse_channels : hidden_width + coarse_channels;
}

int PointHeadConfig::output_width(int layer) const {
  return layer == hidden_layers ? output_classes : hidden_width;
}

std::uint64_t PointHeadConfig::madds_per_point() const {
  std::uint64_t total = 0;
  for (int l = 0; l < layer_count(); ++l) {
    total += static_cast<std::uint64_t>(input_width(l)) * static_cast<std::uint64_t>(output_width(l));
  }
  return total;
}

void PointHeadParams::validate() const {
  config.validate();
  if (static_cast<int>(weights.size()) != config.layer_count() ||
      static_cast<int>(biases.size()) != config.layer_count()) {
    throw ConfigError("PointHeadParams: layer count mismatch");
  }
  for (int l = 0; l < config.layer_count(); ++l) {
    if (weights[l].rows != config.output_width(l) || weights[l].cols != config.input_width(l) ||
        static_cast<int>(biases[l].size()) != config.output_width(l)) {
      throw ConfigError("PointHeadParams: layer shape mismatch");
    }
  }
}

PointHeadParams init_point_head(const PointHeadConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PointHeadParams params;
  params.config = cfg;
  Xoshiro256ss rng(mix_seed(seed, seed_stream::head_init));
  for (int l = 0; l < cfg.layer_count(); ++l) {
    const int out = cfg.output_width(l);
    const int in = cfg.input_width(l);
    Matrix w(out, in);
    const double a = std::sqrt(6.0 / (in + out));
    for (double& v : w.data) v = rng.uniform(-a, a);
    params.weights.push_back(std::move(w));
    params.biases.emplace_back(out, 0.0);
  }
  return params;
}

Matrix assemble_point_features(const std::vector<FeatureMap>& fine_maps, const ProbGrid& coarse,
                               const PointSet& pts) {
  if (fine_maps.empty()) throw ConfigError("assemble_point_features: no fine maps");
  Matrix out = bilinear_sample(fine_maps.front(), pts);
  for (std::size_t i = 1; i < fine_maps.size(); ++i) {
    out = concat_features(out, bilinear_sample(fine_maps[i], pts));
  }
  return concat_features(out, bilinear_sample(coarse, pts));
}

namespace {

struct Workspace {
  // Per-point forward state: the (appended) input row of each layer and each
  // layer's activation.
  std::vector<std::vector<double>> layer_in;
  std::vector<std::vector<double>> layer_out;

  explicit Workspace(const PointHeadConfig& cfg) {
    for (int l = 0; l < cfg.layer_count(); ++l) {
      layer_in.emplace_back(cfg.input_width(l));
      layer_out.emplace_back(cfg.output_width(l));
    }
  }
};

// Runs one point through the head; leaves activations in ws. The coarse
// features are the last K entries of the feature row.
void forward_point(const PointHeadParams& params, std::span<const double> feature_row,
                   Workspace& ws) {
  const PointHeadConfig& cfg = params.config;
  const int k = cfg.coarse_channels;
  std::span<const double> coarse = feature_row.subspan(feature_row.size() - k, k);
  std::copy(feature_row.begin(), feature_row.end(), ws.layer_in[0].begin());
  for (int l = 0; l < cfg.layer_count(); ++l) {
    if (l > 0) {
      auto& in = ws.layer_in[l];
      std::copy(ws.layer_out[l - 1].begin(), ws.layer_out[l - 1].end(), in.begin());
      std::copy(coarse.begin(), coarse.end(), in.begin() + cfg.hidden_width);
    }
    affine(params.weights[l], params.biases[l], ws.layer_in[l], ws.layer_out[l]);
    if (l < cfg.hidden_layers) {
      for (double& v : ws.layer_out[l]) v = std::max(v, 0.0);
    }
  }
  auto& logits = ws.layer_out[cfg.hidden_layers];
  if (cfg.output_classes == 1) {
    logits[0] = sigmoid(logits[0]);
  } else {
    softmax_inplace(logits);
  }
}

}  // namespace

Matrix point_head_forward(const PointHeadParams& params, const Matrix& features, int threads) {
  params.validate();
  const PointHeadConfig& cfg = params.config;
  if (features.cols != cfg.fine_channels + cfg.coarse_channels) {
    throw ConfigError("point_head_forward: feature width mismatch");
  }
  Matrix out(features.rows, cfg.output_classes);
  parallel_chunks(features.rows, kPointChunk, threads, [&](std::size_t begin, std::size_t end) {
    Workspace ws(cfg);
    for (std::size_t i = begin; i < end; ++i) {
      forward_point(params, features.row(static_cast<int>(i)), ws);
      const auto& probs = ws.layer_out[cfg.hidden_layers];
      std::copy(probs.begin(), probs.end(), out.row(static_cast<int>(i)).begin());
    }
  });
  return out;
}

double loss_bce(const Matrix& probs, std::span<const double> labels) {
  if (probs.cols != 1 || static_cast<std::size_t>(probs.rows) != labels.size()) {
    throw ConfigError("loss_bce: shape mismatch");
  }
  if (probs.rows == 0) throw ConfigError("loss_bce: empty batch");
  double total = 0.0;
  for (int i = 0; i < probs.rows; ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw ConfigError("loss_bce: label must be 0 or 1");
    const double p = clamp_prob(probs.at(i, 0));
    total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return total / probs.rows;
}

double loss_ce_multiclass(const Matrix& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows) != labels.size()) {
    throw ConfigError("loss_ce_multiclass: shape mismatch");
  }
  if (probs.rows == 0) throw ConfigError("loss_ce_multiclass: empty batch");
  double total = 0.0;
  for (int i = 0; i < probs.rows; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= probs.cols) throw ConfigError("loss_ce_multiclass: label out of range");
    total += -std::log(clamp_prob(probs.at(i, y)));
  }
  return total / probs.rows;
}

namespace {

PointHeadGrads zero_grads(const PointHeadParams& params) {
  PointHeadGrads g;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    g.weights.emplace_back(params.weights[l].rows, params.weights[l].cols);
    g.biases.emplace_back(params.biases[l].size(), 0.0);
  }
  return g;
}

void add_grads(PointHeadGrads& into, const PointHeadGrads& from) {
  for (std::size_t l = 0; l < into.weights.size(); ++l) {
    for (std::size_t i = 0; i < into.weights[l].data.size(); ++i) {
      into.weights[l].data[i] += from.weights[l].data[i];
    }
    for (std::size_t i = 0; i < into.biases[l].size(); ++i) {
      into.biases[l][i] += from.biases[l][i];
    }
  }
  into.loss += from.loss;
}

// Shared backward driver. label_kind: 0 = binary {0,1} doubles, 1 = class
// indices. Accumulation order is fixed by the chunk grid, never by threads.
PointHeadGrads backward_impl(const PointHeadParams& params, const Matrix& features,
                             std::span<const double> binary_labels,
                             std::span<const int> class_labels, int threads) {
  params.validate();
  const PointHeadConfig& cfg = params.config;
  if (features.cols != cfg.fine_channels + cfg.coarse_channels) {
    throw ConfigError("point_head_backward: feature width mismatch");
  }
  const bool binary = !binary_labels.empty() || class_labels.empty();
  const std::size_t n = binary ? binary_labels.size() : class_labels.size();
  if (static_cast<std::size_t>(features.rows) != n || n == 0) {
    throw ConfigError("point_head_backward: label count mismatch");
  }
  if (binary && cfg.output_classes != 1) {
    throw ConfigError("point_head_backward: binary labels need a 1-class head");
  }
  if (!binary && cfg.output_classes < 2) {
    throw ConfigError("point_head_backward: class labels need a multiclass head");
  }

  const std::size_t n_chunks = (n + kPointChunk - 1) / kPointChunk;
  std::vector<PointHeadGrads> partials(n_chunks);
  const double inv_n = 1.0 / static_cast<double>(n);

  parallel_chunks(n, kPointChunk, threads, [&](std::size_t begin, std::size_t end) {
    PointHeadGrads local = zero_grads(params);
    Workspace ws(cfg);
    std::vector<double> delta(cfg.hidden_width + cfg.output_classes);
    std::vector<double> delta_next(cfg.hidden_width + cfg.output_classes);
    for (std::size_t i = begin; i < end; ++i) {
      forward_point(params, features.row(static_cast<int>(i)), ws);
      const auto& probs = ws.layer_out[cfg.hidden_layers];
      // d(mean loss)/d(logit): (p - y)/n for both heads.
      if (binary) {
        const double y = binary_labels[i];
        if (y != 0.0 && y != 1.0) throw ConfigError("point_head_backward: label must be 0 or 1");
        const double p = clamp_prob(probs[0]);
        local.loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        delta[0] = (probs[0] - y) * inv_n;
      } else {
        const int y = class_labels[i];
        if (y < 0 || y >= cfg.output_classes) {
          throw ConfigError("point_head_backward: label out of range");
        }
        local.loss += -std::log(clamp_prob(probs[y]));
        for (int k = 0; k < cfg.output_classes; ++k) {
          delta[k] = (probs[k] - (k == y ? 1.0 : 0.0)) * inv_n;
        }
      }
      for (int l = cfg.layer_count() - 1; l >= 0; --l) {
        const int out_w = cfg.output_width(l);
        const int in_w = cfg.input_width(l);
        const auto& x = ws.layer_in[l];
        Matrix& dw = local.weights[l];
        auto& db = local.biases[l];
        std::fill(delta_next.begin(), delta_next.begin() + in_w, 0.0);
        for (int j = 0; j < out_w; ++j) {
          const double d = delta[j];
          if (d == 0.0) continue;
          db[j] += d;
          double* dwr = dw.data.data() + static_cast<std::size_t>(j) * in_w;
          const double* wr =
              params.weights[l].data.data() + static_cast<std::size_t>(j) * in_w;
          for (int ii = 0; ii < in_w; ++ii) {
            dwr[ii] += d * x[ii];
            delta_next[ii] += d * wr[ii];
          }
        }
        if (l > 0) {
          // Drop the appended coarse entries; gate through the ReLU.
          const auto& h = ws.layer_out[l - 1];
          for (int j = 0; j < cfg.hidden_width; ++j) {
            delta[j] = h[j] > 0.0 ? delta_next[j] : 0.0;
          }
        }
      }
    }
    partials[begin / kPointChunk] = std::move(local);
  });

  PointHeadGrads grads = zero_grads(params);
  for (auto& part : partials) add_grads(grads, part);
  grads.loss *= inv_n;
  return grads;
}

}  // namespace

PointHeadGrads point_head_backward(const PointHeadParams& params, const Matrix& features,
                                   std::span<const double> binary_labels, int threads) {
  return backward_impl(params, features, binary_labels, {}, threads);
}

PointHeadGrads point_head_backward(const PointHeadParams& params, const Matrix& features,
                                   std::span<const int> class_labels, int threads) {
  return backward_impl(params, features, {}, class_labels, threads);
}

void sgd_update(std::span<double> value, std::span<const double> grad, std::span<double> velocity,
                double lr, double momentum) {
  if (value.size() != grad.size() || value.size() != velocity.size()) {
    throw ConfigError("sgd_update: size mismatch");
  }
  for (std::size_t i = 0; i < value.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    value[i] -= lr * velocity[i];
  }
}

SgdState SgdState::zeros_like(const PointHeadParams& params) {
  SgdState s;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    s.weight_velocity.emplace_back(params.weights[l].rows, params.weights[l].cols);
    s.bias_velocity.emplace_back(params.biases[l].size(), 0.0);
  }
  return s;
}

void sgd_step(PointHeadParams& params, const PointHeadGrads& grads, double lr, double momentum,
              SgdState& state) {
  if (grads.weights.size() != params.weights.size()) throw ConfigError("sgd_step: layer mismatch");
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    if (!params.weights[l].same_shape(grads.weights[l])) {
      throw ConfigError("sgd_step: weight shape mismatch");
    }
    sgd_update(params.weights[l].data, grads.weights[l].data, state.weight_velocity[l].data, lr,
               momentum);
    sgd_update(params.biases[l], grads.biases[l], state.bias_velocity[l], lr, momentum);
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("TrainConfig: learning_rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("TrainConfig: momentum in [0,1)");
  if (steps < 0) throw ConfigError("TrainConfig: steps must be >= 0");
  if (batch_scenes <= 0) throw ConfigError("TrainConfig: batch_scenes must be positive");
  sampler.validate();
  if (regular_grid) {
    const int side = static_cast<int>(std::lround(std::sqrt(double(sampler.n_points))));
    if (side * side != sampler.n_points) {
      throw ConfigError("TrainConfig: regular_grid needs a perfect-square point count");
    }
  }
}

TrainResult train_point_head(PointHeadParams initial, std::span<const TrainRegion> regions,
                             CoarseSource& coarse_source, const TrainConfig& cfg, int threads) {
  cfg.validate();
  initial.validate();
  TrainResult result;
  result.head = std::move(initial);
  if (cfg.steps == 0) return result;
  if (regions.empty()) throw ConfigError("train_point_head: no training regions");

  const PointHeadConfig& head_cfg = result.head.config;
  const int n = cfg.points_per_region();
  SgdState state = SgdState::zeros_like(result.head);
  result.log.reserve(cfg.steps);

  for (int step = 0; step < cfg.steps; ++step) {
    coarse_source.begin_step();
    Matrix features(cfg.batch_scenes * n, head_cfg.fine_channels + head_cfg.coarse_channels);
    std::vector<double> binary_labels;
    std::vector<int> class_labels;
    if (head_cfg.output_classes == 1) {
      binary_labels.resize(features.rows);
    } else {
      class_labels.resize(features.rows);
    }
    double coarse_loss = 0.0;
    for (int j = 0; j < cfg.batch_scenes; ++j) {
      const int region_index =
          static_cast<int>((static_cast<std::int64_t>(step) * cfg.batch_scenes + j) %
                           static_cast<std::int64_t>(regions.size()));
      const TrainRegion& region = regions[region_index];
      const ProbGrid& coarse = coarse_source.coarse_for(region_index);
      const std::uint64_t draw_seed =
          mix_seed(cfg.rng_seed, seed_stream::train_sampler,
                   static_cast<std::uint64_t>(step) * cfg.batch_scenes + j);
      const PointSet pts = cfg.regular_grid
                               ? regular_grid_points(n)
                               : sample_training_points(coarse, cfg.sampler, std::nullopt, draw_seed);
      const Matrix rows = assemble_point_features(region.fine_maps, coarse, pts);
      std::copy(rows.data.begin(), rows.data.end(),
                features.data.begin() + static_cast<std::size_t>(j) * n * features.cols);
      for (int i = 0; i < n; ++i) {
        if (head_cfg.output_classes == 1) {
          binary_labels[static_cast<std::size_t>(j) * n + i] =
              static_cast<double>(occupancy(region.scene, pts.points[i], 1));
        } else {
          class_labels[static_cast<std::size_t>(j) * n + i] =
              region.scene.class_at(pts.points[i]);
        }
      }
      coarse_loss += coarse_source.accumulate(region_index);
    }
    PointHeadGrads grads =
        head_cfg.output_classes == 1
            ? point_head_backward(result.head, features, std::span<const double>(binary_labels),
                                  threads)
            : point_head_backward(result.head, features, std::span<const int>(class_labels),
                                  threads);
    sgd_step(result.head, grads, cfg.learning_rate, cfg.momentum, state);
    coarse_source.apply(cfg.learning_rate, cfg.momentum);
    result.log.push_back({step, grads.loss, coarse_loss / cfg.batch_scenes});
  }
  return result;
}

}  // namespace subdrend
