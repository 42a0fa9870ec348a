#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "subdrend/coarse.hpp"
#include "subdrend/point_head.hpp"
#include "subdrend/scene.hpp"
#include "subdrend/subdivision.hpp"

namespace subdrend {

// Training-time point selection strategies (ablation presets). `custom` keeps
// the sampler.* keys as configured.
enum class SelectionStrategy { custom, regular_grid, uniform, mild, heavy };

std::string strategy_name(SelectionStrategy s);
SelectionStrategy strategy_from_name(const std::string& name);

// Which shapes the dataset generator may draw.
struct DatasetConfig {
  int count = 200;
  int eval_count = 100;
  int classes = 1;
  std::string split = "train";  // which split cmd_gen writes: train | eval
  ShapeMix mix;

  void validate() const;
};

struct BenchConfig {
  std::vector<int> resolutions{28, 56, 112, 224};
  int points_per_step = 784;
  std::vector<std::string> methods{"subdivision", "coarse"};  // + "dense"
  int eval_resolution = 224;
  int boundary_tolerance_px = 1;
  int trials = 1;

  void validate() const;
};

struct RefineConfig {
  int scene_index = 0;
  std::string predictor = "mlp";  // mlp | oracle
};

// Everything a run needs; parsed from flat `section.key=value` text.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  DatasetConfig dataset;
  FeatureSpec features;
  SamplerConfig sampler{196, 3.0, 0.75};
  int head_hidden_layers = 3;
  int head_hidden_width = 256;
  TrainConfig train;
  SelectionStrategy train_strategy = SelectionStrategy::custom;
  CoarseConfig coarse;
  SubdivisionConfig subdiv;
  BenchConfig bench;
  RefineConfig refine;

  void validate() const;

  // Derived head configuration (fine channel count follows the feature spec).
  PointHeadConfig head_config() const;

  // Effective training config: strategy preset applied over sampler.*.
  TrainConfig effective_train() const;
};

// Parses `key=value` lines ('#' comments, blank lines allowed). Unknown keys
// are errors. Later assignments override earlier ones.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::filesystem::path& path);
void apply_config_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides);

// Canonical dump (every key, fixed order); parse(dump(c)) == c.
std::string dump_config(const ExperimentConfig& cfg);

// FNV-1a 64 over the canonical dump; stamped into every emitted CSV.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

// In-memory dataset: scenes plus their synthetic features, as used by
// training and benchmarking.
std::vector<TrainRegion> make_regions(const ExperimentConfig& cfg, const std::string& split,
                                      int count, int threads);

// Seeds, derived once so disk and in-memory paths agree.
std::uint64_t split_seed(const ExperimentConfig& cfg, const std::string& split);
std::uint64_t region_feature_seed(std::uint64_t split_seed_value, int scene_index);
std::uint64_t coarse_noise_seed(const ExperimentConfig& cfg, int scene_index);

// Dataset directory access (layout written by run_gen).
void save_regions(const std::vector<TrainRegion>& regions, const ExperimentConfig& cfg,
                  const std::filesystem::path& dir);
std::vector<TrainRegion> load_regions(const std::filesystem::path& dir);

// CLI commands. All are deterministic given the config (thread count never
// changes any output byte).
void run_gen(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, int threads);
void run_train(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& data_dir,
               const std::filesystem::path& out_dir, int threads);
void run_refine(const ExperimentConfig& cfg,
                const std::optional<std::filesystem::path>& checkpoint,
                const std::optional<std::filesystem::path>& data_dir,
                const std::filesystem::path& out_dir, int threads);
void run_bench(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& checkpoint,
               const std::optional<std::filesystem::path>& data_dir,
               const std::filesystem::path& out_dir, int threads);
void run_ablate(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, int threads);

// Shared evaluation helpers (also used by the acceptance suite).
struct EvalRow {
  int scene_id = 0;
  std::string method;
  int resolution = 0;
  int points_per_step = 0;
  double iou = 0.0;
  double boundary_f = 0.0;
  std::int64_t evals = 0;
  std::uint64_t madds = 0;
};

// Repeated 2x upsampling of `grid` until it reaches `resolution`.
ProbGrid upsample_to(const ProbGrid& grid, int resolution);

// Evaluates one method ("subdivision", "coarse", "dense") on one scene.
// Metrics are computed at eval_resolution (the prediction is upsampled there
// first) against the rasterized ground truth. predictor may be null for the
// "coarse" baseline. For multiclass grids the iou column holds the mean IoU
// over ground-truth classes and boundary_f compares foreground masks.
EvalRow evaluate_scene(const Scene& scene, const std::vector<FeatureMap>& fine_maps,
                       const ProbGrid& coarse_grid, const PointPredictor* predictor,
                       const std::string& method, int resolution, int points_per_step,
                       int eval_resolution, int boundary_tolerance_px);

// Exact-occupancy predictor over a scene: the class-1 probability for
// classes == 1, a one-hot class distribution otherwise.
FunctionPredictor make_oracle_predictor(const Scene& scene, int classes);

}  // namespace subdrend
