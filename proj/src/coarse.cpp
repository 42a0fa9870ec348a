#include "subdrend/coarse.hpp"

#include <algorithm>
#include <cmath>

#include "subdrend/errors.hpp"
#include "subdrend/rng.hpp"

namespace subdrend {

namespace {

constexpr double kProbClamp = 1e-7;

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

void CoarseConfig::validate() const {
  if (resolution < 1) throw ConfigError("CoarseConfig: resolution must be >= 1");
  if (noise_sigma < 0.0) throw ConfigError("CoarseConfig: noise_sigma must be >= 0");
  if (supersample < 1) throw ConfigError("CoarseConfig: supersample must be >= 1");
}

ProbGrid oracle_coarse(const Scene& scene, int classes, const CoarseConfig& cfg,
                       std::uint64_t noise_seed) {
  cfg.validate();
  if (classes < 1) throw ConfigError("oracle_coarse: classes must be >= 1");
  const int m = cfg.resolution;
  const int s = cfg.supersample;
  ProbGrid grid = ProbGrid::filled(classes, m, m, 0.0);
  const double frac = 1.0 / (s * s);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
          const Point p{(c + (j + 0.5) / s) / m, (r + (i + 0.5) / s) / m};
          const int label = scene.class_at(p);
          if (classes == 1) {
            if (label == 1) grid.at(0, r, c) += frac;
          } else if (label >= classes) {
            throw ConfigError("oracle_coarse: scene class exceeds grid classes");
          } else {
            grid.at(label, r, c) += frac;
          }
        }
      }
    }
  }
  if (cfg.noise_sigma > 0.0) {
    Xoshiro256ss rng(mix_seed(noise_seed, seed_stream::coarse_noise));
    for (double& v : grid.values) {
      v = std::clamp(v + cfg.noise_sigma * rng.gaussian(), 0.0, 1.0);
    }
    if (classes > 1) {
      const std::size_t plane = static_cast<std::size_t>(m) * m;
      for (std::size_t i = 0; i < plane; ++i) {
        double sum = 0.0;
        for (int k = 0; k < classes; ++k) sum += grid.values[k * plane + i];
        if (sum < 1e-9) {
          for (int k = 0; k < classes; ++k) grid.values[k * plane + i] = 1.0 / classes;
        } else {
          for (int k = 0; k < classes; ++k) grid.values[k * plane + i] /= sum;
        }
      }
    }
  }
  return grid;
}

Matrix pool_features(const std::vector<FeatureMap>& fine_maps, int resolution) {
  if (fine_maps.empty()) throw ConfigError("pool_features: no fine maps");
  if (resolution < 1) throw ConfigError("pool_features: resolution must be >= 1");
  constexpr int kSub = 4;
  int total_channels = 0;
  for (const FeatureMap& m : fine_maps) total_channels += m.channels;

  // One stratified sub-grid of query points per coarse cell.
  PointSet pts;
  pts.points.reserve(static_cast<std::size_t>(resolution) * resolution * kSub * kSub);
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) {
      for (int i = 0; i < kSub; ++i) {
        for (int j = 0; j < kSub; ++j) {
          pts.points.push_back(
              {(c + (j + 0.5) / kSub) / resolution, (r + (i + 0.5) / kSub) / resolution});
        }
      }
    }
  }

  Matrix pooled(resolution * resolution, total_channels);
  int channel_offset = 0;
  const double inv = 1.0 / (kSub * kSub);
  for (const FeatureMap& map : fine_maps) {
    const Matrix samples = bilinear_sample(map, pts);
    for (int cell = 0; cell < pooled.rows; ++cell) {
      for (int ch = 0; ch < map.channels; ++ch) {
        double sum = 0.0;
        for (int q = 0; q < kSub * kSub; ++q) {
          sum += samples.at(cell * kSub * kSub + q, ch);
        }
        pooled.at(cell, channel_offset + ch) = sum * inv;
      }
    }
    channel_offset += map.channels;
  }
  return pooled;
}

AffineCoarseParams AffineCoarseParams::zeros(int pooled_width, int classes) {
  AffineCoarseParams p;
  p.weight = Matrix(classes, pooled_width);
  p.bias.assign(classes, 0.0);
  return p;
}

void AffineCoarseParams::validate() const {
  if (weight.rows < 1 || weight.cols < 1 || static_cast<int>(bias.size()) != weight.rows) {
    throw ConfigError("AffineCoarseParams: bad shapes");
  }
}

ProbGrid trained_coarse_forward(const AffineCoarseParams& params, const Matrix& pooled,
                                int resolution) {
  params.validate();
  if (pooled.rows != resolution * resolution || pooled.cols != params.weight.cols) {
    throw ConfigError("trained_coarse_forward: pooled feature shape mismatch");
  }
  const int k = params.classes();
  ProbGrid grid = ProbGrid::filled(k, resolution, resolution, 0.0);
  const std::size_t plane = static_cast<std::size_t>(resolution) * resolution;
  std::vector<double> logits(k);
  for (int cell = 0; cell < pooled.rows; ++cell) {
    for (int j = 0; j < k; ++j) {
      double acc = params.bias[j];
      const double* wr = params.weight.data.data() + static_cast<std::size_t>(j) * params.weight.cols;
      for (int i = 0; i < pooled.cols; ++i) acc += wr[i] * pooled.at(cell, i);
      logits[j] = acc;
    }
    if (k == 1) {
      grid.values[cell] = stable_sigmoid(logits[0]);
    } else {
      double m = logits[0];
      for (double v : logits) m = std::max(m, v);
      double sum = 0.0;
      for (double& v : logits) {
        v = std::exp(v - m);
        sum += v;
      }
      for (int j = 0; j < k; ++j) grid.values[j * plane + cell] = logits[j] / sum;
    }
  }
  return grid;
}

namespace {

// Ground-truth targets for the coarse loss: thresholded occupancy for K = 1,
// argmax labels otherwise.
std::vector<int> coarse_targets(const ProbGrid& gt) {
  const std::size_t plane = static_cast<std::size_t>(gt.height) * gt.width;
  std::vector<int> targets(plane, 0);
  if (gt.classes == 1) {
    for (std::size_t i = 0; i < plane; ++i) targets[i] = gt.values[i] >= 0.5 ? 1 : 0;
  } else {
    for (std::size_t i = 0; i < plane; ++i) {
      double best = gt.values[i];
      int arg = 0;
      for (int k = 1; k < gt.classes; ++k) {
        const double v = gt.values[k * plane + i];
        if (v > best) {
          best = v;
          arg = k;
        }
      }
      targets[i] = arg;
    }
  }
  return targets;
}

}  // namespace

double coarse_loss(const ProbGrid& pred, const ProbGrid& gt) {
  if (pred.classes != gt.classes || pred.height != gt.height || pred.width != gt.width) {
    throw ConfigError("coarse_loss: shape mismatch");
  }
  const std::size_t plane = static_cast<std::size_t>(pred.height) * pred.width;
  const std::vector<int> targets = coarse_targets(gt);
  double total = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (pred.classes == 1) {
      const double p = clamp_prob(pred.values[i]);
      total += targets[i] ? -std::log(p) : -std::log(1.0 - p);
    } else {
      total += -std::log(clamp_prob(pred.values[targets[i] * plane + i]));
    }
  }
  return total / static_cast<double>(plane);
}

AffineCoarseGrads affine_coarse_backward(const AffineCoarseParams& params, const Matrix& pooled,
                                         int resolution, const ProbGrid& gt) {
  const ProbGrid pred = trained_coarse_forward(params, pooled, resolution);
  if (gt.classes != pred.classes || gt.height != pred.height || gt.width != pred.width) {
    throw ConfigError("affine_coarse_backward: gt shape mismatch");
  }
  AffineCoarseGrads grads;
  grads.weight = Matrix(params.weight.rows, params.weight.cols);
  grads.bias.assign(params.bias.size(), 0.0);
  grads.loss = coarse_loss(pred, gt);
  const std::size_t plane = static_cast<std::size_t>(resolution) * resolution;
  const std::vector<int> targets = coarse_targets(gt);
  const double inv = 1.0 / static_cast<double>(plane);
  const int k = params.classes();
  for (std::size_t cell = 0; cell < plane; ++cell) {
    for (int j = 0; j < k; ++j) {
      const double target =
          k == 1 ? static_cast<double>(targets[cell]) : (targets[cell] == j ? 1.0 : 0.0);
      const double dz = (pred.values[j * plane + cell] - target) * inv;
      if (dz == 0.0) continue;
      grads.bias[j] += dz;
      double* gw = grads.weight.data.data() + static_cast<std::size_t>(j) * params.weight.cols;
      for (int i = 0; i < pooled.cols; ++i) {
        gw[i] += dz * pooled.at(static_cast<int>(cell), i);
      }
    }
  }
  return grads;
}

}  // namespace subdrend
