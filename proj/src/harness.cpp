#include "subdrend/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "subdrend/errors.hpp"
#include "subdrend/io.hpp"
#include "subdrend/metrics.hpp"
#include "subdrend/parallel.hpp"
#include "subdrend/rng.hpp"

namespace subdrend {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad seed for " + key + ": '" + value + "'");
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir.string());
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << content;
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace

std::string strategy_name(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::custom: return "custom";
    case SelectionStrategy::regular_grid: return "regular_grid";
    case SelectionStrategy::uniform: return "uniform";
    case SelectionStrategy::mild: return "mild";
    case SelectionStrategy::heavy: return "heavy";
  }
  throw ConfigError("strategy_name: bad strategy");
}

SelectionStrategy strategy_from_name(const std::string& name) {
  if (name == "custom") return SelectionStrategy::custom;
  if (name == "regular_grid") return SelectionStrategy::regular_grid;
  if (name == "uniform") return SelectionStrategy::uniform;
  if (name == "mild") return SelectionStrategy::mild;
  if (name == "heavy") return SelectionStrategy::heavy;
  throw ConfigError("config: unknown strategy '" + name + "'");
}

void DatasetConfig::validate() const {
  if (count < 0 || eval_count < 0) throw ConfigError("dataset: counts must be >= 0");
  if (classes < 1) throw ConfigError("dataset: classes must be >= 1");
  if (split != "train" && split != "eval") throw ConfigError("dataset: split must be train|eval");
  mix.validate();
}

void BenchConfig::validate() const {
  if (resolutions.empty()) throw ConfigError("bench: needs at least one resolution");
  if (points_per_step < 1) throw ConfigError("bench: points must be >= 1");
  if (methods.empty()) throw ConfigError("bench: needs at least one method");
  for (const auto& m : methods) {
    if (m != "subdivision" && m != "coarse" && m != "dense") {
      throw ConfigError("bench: unknown method '" + m + "'");
    }
  }
  if (eval_resolution < 1) throw ConfigError("bench: eval_resolution must be >= 1");
  if (boundary_tolerance_px < 0) throw ConfigError("bench: boundary_tol must be >= 0");
  if (trials < 1) throw ConfigError("bench: trials must be >= 1");
}

void ExperimentConfig::validate() const {
  dataset.validate();
  features.validate();
  sampler.validate();
  if (head_hidden_layers < 1) throw ConfigError("head: hidden_layers must be >= 1");
  if (head_hidden_width < 1) throw ConfigError("head: hidden_width must be >= 1");
  effective_train().validate();
  coarse.validate();
  subdiv.validate(coarse.resolution);
  bench.validate();
  if (refine.scene_index < 0) throw ConfigError("refine: scene must be >= 0");
  if (refine.predictor != "mlp" && refine.predictor != "oracle") {
    throw ConfigError("refine: predictor must be mlp|oracle");
  }
}

PointHeadConfig ExperimentConfig::head_config() const {
  PointHeadConfig cfg;
  cfg.fine_channels = features.total_channels();
  cfg.coarse_channels = dataset.classes;
  cfg.hidden_layers = head_hidden_layers;
  cfg.hidden_width = head_hidden_width;
  cfg.output_classes = dataset.classes;
  return cfg;
}

TrainConfig ExperimentConfig::effective_train() const {
  TrainConfig out = train;
  out.sampler = sampler;
  out.regular_grid = false;
  out.rng_seed = seed;
  switch (train_strategy) {
    case SelectionStrategy::custom:
      break;
    case SelectionStrategy::regular_grid:
      out.regular_grid = true;
      break;
    case SelectionStrategy::uniform:
      out.sampler.oversample_k = 1.0;
      out.sampler.importance_beta = 0.0;
      break;
    case SelectionStrategy::mild:
      out.sampler.oversample_k = 3.0;
      out.sampler.importance_beta = 0.75;
      break;
    case SelectionStrategy::heavy:
      out.sampler.oversample_k = 10.0;
      out.sampler.importance_beta = 1.0;
      break;
  }
  return out;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    apply_config_overrides(cfg, {key + "=" + value});
  }
  return cfg;
}

void apply_config_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& entry : overrides) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos) throw ConfigError("config: expected key=value, got '" + entry + "'");
    const std::string key = trim(entry.substr(0, eq));
    const std::string value = trim(entry.substr(eq + 1));

    if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "dataset.count") cfg.dataset.count = parse_int(key, value);
    else if (key == "dataset.eval_count") cfg.dataset.eval_count = parse_int(key, value);
    else if (key == "dataset.classes") cfg.dataset.classes = parse_int(key, value);
    else if (key == "dataset.split") cfg.dataset.split = value;
    else if (key == "dataset.min_shapes") cfg.dataset.mix.min_shapes = parse_int(key, value);
    else if (key == "dataset.max_shapes") cfg.dataset.mix.max_shapes = parse_int(key, value);
    else if (key == "dataset.shapes") {
      cfg.dataset.mix.disks = cfg.dataset.mix.rects = false;
      cfg.dataset.mix.polygons = cfg.dataset.mix.blobs = false;
      for (const auto& kind : split_list(value)) {
        if (kind == "disk") cfg.dataset.mix.disks = true;
        else if (kind == "rect") cfg.dataset.mix.rects = true;
        else if (kind == "poly") cfg.dataset.mix.polygons = true;
        else if (kind == "blob") cfg.dataset.mix.blobs = true;
        else throw ConfigError("config: unknown shape kind '" + kind + "'");
      }
    } else if (key == "features.resolutions") {
      cfg.features.resolutions.clear();
      for (const auto& r : split_list(value)) cfg.features.resolutions.push_back(parse_int(key, r));
    } else if (key == "features.class_channels") cfg.features.class_channels = parse_int(key, value);
    else if (key == "features.noise_sigma") cfg.features.noise_sigma = parse_double(key, value);
    else if (key == "features.smoothing_radius") cfg.features.smoothing_radius = parse_int(key, value);
    else if (key == "sampler.n") cfg.sampler.n_points = parse_int(key, value);
    else if (key == "sampler.k") cfg.sampler.oversample_k = parse_double(key, value);
    else if (key == "sampler.beta") cfg.sampler.importance_beta = parse_double(key, value);
    else if (key == "head.hidden_layers") cfg.head_hidden_layers = parse_int(key, value);
    else if (key == "head.hidden_width") cfg.head_hidden_width = parse_int(key, value);
    else if (key == "train.lr") cfg.train.learning_rate = parse_double(key, value);
    else if (key == "train.momentum") cfg.train.momentum = parse_double(key, value);
    else if (key == "train.steps") cfg.train.steps = parse_int(key, value);
    else if (key == "train.batch_scenes") cfg.train.batch_scenes = parse_int(key, value);
    else if (key == "train.strategy") cfg.train_strategy = strategy_from_name(value);
    else if (key == "coarse.resolution") cfg.coarse.resolution = parse_int(key, value);
    else if (key == "coarse.mode") {
      if (value == "oracle_pool") cfg.coarse.mode = CoarseMode::oracle_pool;
      else if (value == "trained_affine") cfg.coarse.mode = CoarseMode::trained_affine;
      else throw ConfigError("config: unknown coarse mode '" + value + "'");
    } else if (key == "coarse.noise_sigma") cfg.coarse.noise_sigma = parse_double(key, value);
    else if (key == "coarse.supersample") cfg.coarse.supersample = parse_int(key, value);
    else if (key == "subdiv.resolution") cfg.subdiv.target_resolution = parse_int(key, value);
    else if (key == "subdiv.points") cfg.subdiv.points_per_step = parse_int(key, value);
    else if (key == "bench.resolutions") {
      cfg.bench.resolutions.clear();
      for (const auto& r : split_list(value)) cfg.bench.resolutions.push_back(parse_int(key, r));
    } else if (key == "bench.points") cfg.bench.points_per_step = parse_int(key, value);
    else if (key == "bench.methods") cfg.bench.methods = split_list(value);
    else if (key == "bench.eval_resolution") cfg.bench.eval_resolution = parse_int(key, value);
    else if (key == "bench.boundary_tol") cfg.bench.boundary_tolerance_px = parse_int(key, value);
    else if (key == "bench.trials") cfg.bench.trials = parse_int(key, value);
    else if (key == "refine.scene") cfg.refine.scene_index = parse_int(key, value);
    else if (key == "refine.predictor") cfg.refine.predictor = value;
    else throw ConfigError("config: unknown key '" + key + "'");
  }
}

ExperimentConfig load_config_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path.string());
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_config_text(buffer.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "seed=" << cfg.seed << '\n';
  os << "dataset.count=" << cfg.dataset.count << '\n';
  os << "dataset.eval_count=" << cfg.dataset.eval_count << '\n';
  os << "dataset.classes=" << cfg.dataset.classes << '\n';
  os << "dataset.split=" << cfg.dataset.split << '\n';
  os << "dataset.shapes=";
  {
    std::vector<std::string> kinds;
    if (cfg.dataset.mix.disks) kinds.push_back("disk");
    if (cfg.dataset.mix.rects) kinds.push_back("rect");
    if (cfg.dataset.mix.polygons) kinds.push_back("poly");
    if (cfg.dataset.mix.blobs) kinds.push_back("blob");
    for (std::size_t i = 0; i < kinds.size(); ++i) os << (i ? "," : "") << kinds[i];
  }
  os << '\n';
  os << "dataset.min_shapes=" << cfg.dataset.mix.min_shapes << '\n';
  os << "dataset.max_shapes=" << cfg.dataset.mix.max_shapes << '\n';
  os << "features.resolutions=";
  for (std::size_t i = 0; i < cfg.features.resolutions.size(); ++i) {
    os << (i ? "," : "") << cfg.features.resolutions[i];
  }
  os << '\n';
  os << "features.class_channels=" << cfg.features.class_channels << '\n';
  os << "features.noise_sigma=" << fmt_double(cfg.features.noise_sigma) << '\n';
  os << "features.smoothing_radius=" << cfg.features.smoothing_radius << '\n';
  os << "sampler.n=" << cfg.sampler.n_points << '\n';
  os << "sampler.k=" << fmt_double(cfg.sampler.oversample_k) << '\n';
  os << "sampler.beta=" << fmt_double(cfg.sampler.importance_beta) << '\n';
  os << "head.hidden_layers=" << cfg.head_hidden_layers << '\n';
  os << "head.hidden_width=" << cfg.head_hidden_width << '\n';
  os << "train.lr=" << fmt_double(cfg.train.learning_rate) << '\n';
  os << "train.momentum=" << fmt_double(cfg.train.momentum) << '\n';
  os << "train.steps=" << cfg.train.steps << '\n';
  os << "train.batch_scenes=" << cfg.train.batch_scenes << '\n';
  os << "train.strategy=" << strategy_name(cfg.train_strategy) << '\n';
  os << "coarse.resolution=" << cfg.coarse.resolution << '\n';
  os << "coarse.mode="
     << (cfg.coarse.mode == CoarseMode::oracle_pool ? "oracle_pool" : "trained_affine") << '\n';
  os << "coarse.noise_sigma=" << fmt_double(cfg.coarse.noise_sigma) << '\n';
  os << "coarse.supersample=" << cfg.coarse.supersample << '\n';
  os << "subdiv.resolution=" << cfg.subdiv.target_resolution << '\n';
  os << "subdiv.points=" << cfg.subdiv.points_per_step << '\n';
  os << "bench.resolutions=";
  for (std::size_t i = 0; i < cfg.bench.resolutions.size(); ++i) {
    os << (i ? "," : "") << cfg.bench.resolutions[i];
  }
  os << '\n';
  os << "bench.points=" << cfg.bench.points_per_step << '\n';
  os << "bench.methods=";
  for (std::size_t i = 0; i < cfg.bench.methods.size(); ++i) {
    os << (i ? "," : "") << cfg.bench.methods[i];
  }
  os << '\n';
  os << "bench.eval_resolution=" << cfg.bench.eval_resolution << '\n';
  os << "bench.boundary_tol=" << cfg.bench.boundary_tolerance_px << '\n';
  os << "bench.trials=" << cfg.bench.trials << '\n';
  os << "refine.scene=" << cfg.refine.scene_index << '\n';
  os << "refine.predictor=" << cfg.refine.predictor << '\n';
  return os.str();
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string dump = dump_config(cfg);
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  return buf;
}

std::uint64_t split_seed(const ExperimentConfig& cfg, const std::string& split) {
  if (split == "train") return mix_seed(cfg.seed, seed_stream::train_split);
  if (split == "eval") return mix_seed(cfg.seed, seed_stream::eval_split);
  throw ConfigError("split_seed: split must be train|eval");
}

std::uint64_t region_feature_seed(std::uint64_t split_seed_value, int scene_index) {
  return mix_seed(split_seed_value, seed_stream::features, static_cast<std::uint64_t>(scene_index));
}

std::uint64_t coarse_noise_seed(const ExperimentConfig& cfg, int scene_index) {
  return mix_seed(cfg.seed, seed_stream::coarse_noise, static_cast<std::uint64_t>(scene_index));
}

std::vector<TrainRegion> make_regions(const ExperimentConfig& cfg, const std::string& split,
                                      int count, int threads) {
  const std::uint64_t base = split_seed(cfg, split);
  std::vector<Scene> scenes = generate_dataset(count, cfg.dataset.classes, cfg.dataset.mix, base);
  std::vector<TrainRegion> regions(scenes.size());
  parallel_for(scenes.size(), threads, [&](std::size_t i) {
    regions[i].scene = std::move(scenes[i]);
    regions[i].fine_maps = synth_features(regions[i].scene, cfg.features,
                                          region_feature_seed(base, static_cast<int>(i)));
  });
  return regions;
}

void save_regions(const std::vector<TrainRegion>& regions, const ExperimentConfig& cfg,
                  const fs::path& dir) {
  ensure_dir(dir / "scenes");
  ensure_dir(dir / "features");
  std::ostringstream manifest;
  manifest << "# subdrend dataset v1\n";
  manifest << "# config_hash=" << config_hash_hex(cfg) << '\n';
  manifest << "classes " << cfg.dataset.classes << '\n';
  manifest << "maps " << cfg.features.resolutions.size() << '\n';
  manifest << "count " << regions.size() << '\n';
  char name[64];
  for (std::size_t i = 0; i < regions.size(); ++i) {
    std::snprintf(name, sizeof(name), "scenes/scene_%05zu.txt", i);
    const std::string scene_rel = name;
    save_scene_file(regions[i].scene, dir / scene_rel);
    manifest << "scene " << i << ' ' << scene_rel;
    for (std::size_t m = 0; m < regions[i].fine_maps.size(); ++m) {
      std::snprintf(name, sizeof(name), "features/scene_%05zu_map%zu.srt1", i, m);
      save_feature_map(regions[i].fine_maps[m], dir / name);
      manifest << ' ' << name;
    }
    manifest << '\n';
  }
  write_text_file(dir / "manifest.txt", manifest.str());
  write_text_file(dir / "config.txt", dump_config(cfg));
}

std::vector<TrainRegion> load_regions(const fs::path& dir) {
  std::ifstream is(dir / "manifest.txt");
  if (!is) throw IoError("cannot open dataset manifest: " + (dir / "manifest.txt").string());
  std::vector<TrainRegion> regions;
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key != "scene") continue;  // classes/maps/count lines are informational
    int id = 0;
    std::string scene_rel;
    if (!(ls >> id >> scene_rel)) throw IoError("dataset manifest: malformed scene line");
    TrainRegion region;
    region.scene = load_scene_file(dir / scene_rel);
    std::string map_rel;
    while (ls >> map_rel) region.fine_maps.push_back(load_feature_map(dir / map_rel));
    if (region.fine_maps.empty()) throw IoError("dataset manifest: scene without feature maps");
    regions.push_back(std::move(region));
  }
  if (regions.empty()) throw IoError("dataset manifest: no scenes: " + dir.string());
  return regions;
}

void run_gen(const ExperimentConfig& cfg, const fs::path& out_dir, int threads) {
  cfg.validate();
  const auto regions = make_regions(cfg, cfg.dataset.split, cfg.dataset.count, threads);
  ensure_dir(out_dir);
  save_regions(regions, cfg, out_dir);
}

namespace {

// Trainable affine coarse head over pooled fine features, supervised by the
// noise-free pooled occupancy. Gradients from the point loss do not flow into
// these parameters; the coarse head learns from its own loss, as a standalone
// segmentation head would.
class AffineCoarseSource : public CoarseSource {
 public:
  AffineCoarseSource(std::span<const TrainRegion> regions, int classes, const CoarseConfig& cfg)
      : resolution_(cfg.resolution) {
    CoarseConfig gt_cfg = cfg;
    gt_cfg.noise_sigma = 0.0;
    gt_cfg.mode = CoarseMode::oracle_pool;
    pooled_.reserve(regions.size());
    gt_.reserve(regions.size());
    for (const TrainRegion& region : regions) {
      pooled_.push_back(pool_features(region.fine_maps, resolution_));
      gt_.push_back(oracle_coarse(region.scene, classes, gt_cfg));
    }
    params_ = AffineCoarseParams::zeros(pooled_.front().cols, classes);
    weight_velocity_ = Matrix(params_.weight.rows, params_.weight.cols);
    bias_velocity_.assign(params_.bias.size(), 0.0);
    grad_ = AffineCoarseGrads{Matrix(params_.weight.rows, params_.weight.cols),
                              std::vector<double>(params_.bias.size(), 0.0), 0.0};
  }

  const ProbGrid& coarse_for(int region_index) override {
    current_ = trained_coarse_forward(params_, pooled_.at(region_index), resolution_);
    return current_;
  }

  void begin_step() override {
    std::fill(grad_.weight.data.begin(), grad_.weight.data.end(), 0.0);
    std::fill(grad_.bias.begin(), grad_.bias.end(), 0.0);
    accumulated_ = 0;
  }

  double accumulate(int region_index) override {
    const AffineCoarseGrads g =
        affine_coarse_backward(params_, pooled_.at(region_index), resolution_, gt_.at(region_index));
    for (std::size_t i = 0; i < grad_.weight.data.size(); ++i) {
      grad_.weight.data[i] += g.weight.data[i];
    }
    for (std::size_t i = 0; i < grad_.bias.size(); ++i) grad_.bias[i] += g.bias[i];
    ++accumulated_;
    return g.loss;
  }

  void apply(double lr, double momentum) override {
    if (accumulated_ == 0) return;
    const double scale = 1.0 / accumulated_;
    for (double& v : grad_.weight.data) v *= scale;
    for (double& v : grad_.bias) v *= scale;
    sgd_update(params_.weight.data, grad_.weight.data, weight_velocity_.data, lr, momentum);
    sgd_update(params_.bias, grad_.bias, bias_velocity_, lr, momentum);
  }

  bool trainable() const override { return true; }
  const AffineCoarseParams& params() const { return params_; }

 private:
  int resolution_;
  std::vector<Matrix> pooled_;
  std::vector<ProbGrid> gt_;
  AffineCoarseParams params_;
  Matrix weight_velocity_;
  std::vector<double> bias_velocity_;
  AffineCoarseGrads grad_;
  int accumulated_ = 0;
  ProbGrid current_;
};

std::vector<ProbGrid> oracle_grids(const ExperimentConfig& cfg,
                                   std::span<const TrainRegion> regions, int threads) {
  std::vector<ProbGrid> grids(regions.size());
  parallel_for(regions.size(), threads, [&](std::size_t i) {
    grids[i] = oracle_coarse(regions[i].scene, cfg.dataset.classes, cfg.coarse,
                             coarse_noise_seed(cfg, static_cast<int>(i)));
  });
  return grids;
}

std::string csv_hash_line(const ExperimentConfig& cfg) {
  return "# config_hash=" + config_hash_hex(cfg) + "\n";
}

}  // namespace

void run_train(const ExperimentConfig& cfg, const std::optional<fs::path>& data_dir,
               const fs::path& out_dir, int threads) {
  cfg.validate();
  const std::vector<TrainRegion> regions =
      data_dir ? load_regions(*data_dir) : make_regions(cfg, "train", cfg.dataset.count, threads);

  const PointHeadConfig head_cfg = cfg.head_config();
  PointHeadParams init = init_point_head(head_cfg, cfg.seed);

  TrainResult result;
  std::optional<AffineCoarseParams> affine_out;
  if (cfg.coarse.mode == CoarseMode::trained_affine) {
    AffineCoarseSource source(regions, cfg.dataset.classes, cfg.coarse);
    result = train_point_head(std::move(init), regions, source, cfg.effective_train(), threads);
    affine_out = source.params();
  } else {
    FixedCoarseSource source(oracle_grids(cfg, regions, threads));
    result = train_point_head(std::move(init), regions, source, cfg.effective_train(), threads);
  }

  ensure_dir(out_dir);
  save_checkpoint({std::move(result.head), std::move(affine_out)}, out_dir / "checkpoint.ckpt");
  std::string csv = csv_hash_line(cfg) + "step,point_loss,coarse_loss\n";
  for (const TrainLogRow& row : result.log) {
    csv += std::to_string(row.step) + "," + fmt_double(row.point_loss) + "," +
           fmt_double(row.coarse_loss) + "\n";
  }
  write_text_file(out_dir / "loss.csv", csv);
  write_text_file(out_dir / "config.txt", dump_config(cfg));
}

FunctionPredictor make_oracle_predictor(const Scene& scene, int classes) {
  return FunctionPredictor(classes, 0, [&scene, classes](const PointSet& pts, const Matrix&) {
    Matrix out(pts.size(), classes);
    for (int i = 0; i < pts.size(); ++i) {
      if (classes == 1) {
        out.at(i, 0) = static_cast<double>(occupancy(scene, pts.points[i], 1));
      } else {
        const int label = scene.class_at(pts.points[i]);
        if (label < classes) out.at(i, label) = 1.0;
        else out.at(i, 0) = 1.0;
      }
    }
    return out;
  });
}

namespace {

BinaryMask foreground_mask(const ProbGrid& grid) {
  if (grid.classes == 1) return threshold_mask(grid, 0);
  const std::vector<int> labels = argmax_labels(grid);
  BinaryMask mask = BinaryMask::filled(grid.height, grid.width, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) mask.values[i] = labels[i] != 0 ? 1 : 0;
  return mask;
}

BinaryMask gt_foreground(const Scene& scene, int resolution, int classes) {
  if (classes == 1) return rasterize(scene, resolution, 1);
  const std::vector<int> labels = rasterize_labels(scene, resolution);
  BinaryMask mask = BinaryMask::filled(resolution, resolution, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) mask.values[i] = labels[i] != 0 ? 1 : 0;
  return mask;
}

}  // namespace

ProbGrid upsample_to(const ProbGrid& grid, int resolution) {
  if (grid.height != grid.width) throw ConfigError("upsample_to: grid not square");
  ProbGrid out = grid;
  while (out.height < resolution) out = bilinear_upsample_x2(out);
  if (out.height != resolution) {
    throw ConfigError("upsample_to: resolution not reachable by 2x upsampling");
  }
  return out;
}

EvalRow evaluate_scene(const Scene& scene, const std::vector<FeatureMap>& fine_maps,
                       const ProbGrid& coarse_grid, const PointPredictor* predictor,
                       const std::string& method, int resolution, int points_per_step,
                       int eval_resolution, int boundary_tolerance_px) {
  EvalRow row;
  row.method = method;
  row.resolution = resolution;
  row.points_per_step = points_per_step;

  ProbGrid pred;
  if (method == "subdivision") {
    if (!predictor) throw ConfigError("evaluate_scene: subdivision needs a predictor");
    SubdivisionResult result = subdivide_infer(coarse_grid, *predictor, fine_maps,
                                               SubdivisionConfig{resolution, points_per_step});
    pred = std::move(result.grid);
    row.evals = result.trace.total_evaluations;
    row.madds = result.trace.total_madds;
  } else if (method == "coarse") {
    pred = upsample_to(coarse_grid, resolution);
  } else if (method == "dense") {
    if (!predictor) throw ConfigError("evaluate_scene: dense needs a predictor");
    pred = dense_infer(*predictor, fine_maps, coarse_grid, resolution);
    row.evals = static_cast<std::int64_t>(resolution) * resolution;
    row.madds = static_cast<std::uint64_t>(row.evals) * predictor->madds_per_point();
  } else {
    throw ConfigError("evaluate_scene: unknown method '" + method + "'");
  }

  const ProbGrid at_eval = upsample_to(pred, eval_resolution);
  if (coarse_grid.classes == 1) {
    const BinaryMask pm = threshold_mask(at_eval, 0);
    const BinaryMask gm = rasterize(scene, eval_resolution, 1);
    row.iou = iou(pm, gm);
    row.boundary_f = boundary_f(pm, gm, boundary_tolerance_px);
  } else {
    const std::vector<int> pl = argmax_labels(at_eval);
    const std::vector<int> gl = rasterize_labels(scene, eval_resolution);
    row.iou = multiclass_miou(pl, gl, eval_resolution, eval_resolution, coarse_grid.classes);
    row.boundary_f = boundary_f(foreground_mask(at_eval), gt_foreground(scene, eval_resolution,
                                                                        coarse_grid.classes),
                                boundary_tolerance_px);
  }
  return row;
}

void run_refine(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint,
                const std::optional<fs::path>& data_dir, const fs::path& out_dir, int threads) {
  cfg.validate();
  const std::vector<TrainRegion> regions =
      data_dir ? load_regions(*data_dir)
               : make_regions(cfg, "eval", cfg.refine.scene_index + 1, threads);
  if (cfg.refine.scene_index >= static_cast<int>(regions.size())) {
    throw ConfigError("refine: scene index out of range");
  }
  const TrainRegion& region = regions[cfg.refine.scene_index];
  const int classes = cfg.dataset.classes;

  std::optional<Checkpoint> ckpt;
  ProbGrid coarse_grid;
  if (cfg.refine.predictor == "mlp" || cfg.coarse.mode == CoarseMode::trained_affine) {
    if (!checkpoint) throw ConfigError("refine: --checkpoint required for the mlp predictor");
    ckpt = load_checkpoint(*checkpoint);
  }
  if (cfg.coarse.mode == CoarseMode::trained_affine) {
    if (!ckpt->coarse_affine) throw ConfigError("refine: checkpoint has no coarse head");
    coarse_grid = trained_coarse_forward(*ckpt->coarse_affine,
                                         pool_features(region.fine_maps, cfg.coarse.resolution),
                                         cfg.coarse.resolution);
  } else {
    coarse_grid = oracle_coarse(region.scene, classes, cfg.coarse,
                                coarse_noise_seed(cfg, cfg.refine.scene_index));
  }

  std::optional<MlpPointPredictor> mlp;
  std::optional<FunctionPredictor> oracle;
  const PointPredictor* predictor = nullptr;
  if (cfg.refine.predictor == "mlp") {
    mlp.emplace(ckpt->head, threads);
    predictor = &*mlp;
  } else {
    oracle.emplace(make_oracle_predictor(region.scene, classes));
    predictor = &*oracle;
  }

  ensure_dir(out_dir);
  char name[64];
  const auto write_mask = [&](const ProbGrid& grid, const std::string& filename) {
    write_pgm(foreground_mask(grid), out_dir / filename);
  };
  const SubdivisionResult result = subdivide_infer(
      coarse_grid, *predictor, region.fine_maps, cfg.subdiv, [&](int step, const ProbGrid& grid) {
        std::snprintf(name, sizeof(name), "mask_step%d.pgm", step);
        write_mask(grid, name);
      });
  write_mask(result.grid, "mask_final.pgm");
  const BinaryMask gt = gt_foreground(region.scene, cfg.subdiv.target_resolution, classes);
  write_pgm(gt, out_dir / "mask_gt.pgm");
  write_ppm_overlay(foreground_mask(result.grid), gt, out_dir / "overlay.ppm");
  write_text_file(out_dir / "trace.csv", csv_hash_line(cfg) + result.trace.to_csv());
  write_text_file(out_dir / "config.txt", dump_config(cfg));
}

namespace {

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

void run_bench(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint,
               const std::optional<fs::path>& data_dir, const fs::path& out_dir, int threads) {
  cfg.validate();
  const std::vector<TrainRegion> regions =
      data_dir ? load_regions(*data_dir) : make_regions(cfg, "eval", cfg.dataset.eval_count, threads);

  const bool needs_predictor =
      std::any_of(cfg.bench.methods.begin(), cfg.bench.methods.end(),
                  [](const std::string& m) { return m != "coarse"; });
  std::optional<Checkpoint> ckpt;
  if (needs_predictor) {
    if (!checkpoint) throw ConfigError("bench: --checkpoint required for predictor methods");
    ckpt = load_checkpoint(*checkpoint);
  }

  struct ConfigPoint {
    std::string method;
    int resolution;
  };
  std::vector<ConfigPoint> grid_points;
  for (const std::string& method : cfg.bench.methods) {
    for (int res : cfg.bench.resolutions) grid_points.push_back({method, res});
  }

  std::vector<std::vector<EvalRow>> rows(regions.size());
  parallel_for(regions.size(), threads, [&](std::size_t i) {
    const TrainRegion& region = regions[i];
    std::optional<MlpPointPredictor> predictor;
    if (ckpt) predictor.emplace(ckpt->head, 1);
    std::vector<EvalRow>& scene_rows = rows[i];
    for (const ConfigPoint& point : grid_points) {
      std::vector<double> ious, bfs;
      EvalRow base_row;
      for (int trial = 0; trial < cfg.bench.trials; ++trial) {
        const std::uint64_t noise_seed =
            trial == 0 ? coarse_noise_seed(cfg, static_cast<int>(i))
                       : mix_seed(cfg.seed, seed_stream::bench_trial,
                                  (static_cast<std::uint64_t>(trial) << 32) | i);
        const ProbGrid coarse_grid =
            oracle_coarse(region.scene, cfg.dataset.classes, cfg.coarse, noise_seed);
        EvalRow row = evaluate_scene(region.scene, region.fine_maps, coarse_grid,
                                     predictor ? &*predictor : nullptr, point.method,
                                     point.resolution, cfg.bench.points_per_step,
                                     cfg.bench.eval_resolution, cfg.bench.boundary_tolerance_px);
        if (trial == 0) base_row = row;
        ious.push_back(row.iou);
        bfs.push_back(row.boundary_f);
      }
      base_row.scene_id = static_cast<int>(i);
      base_row.iou = median(std::move(ious));
      base_row.boundary_f = median(std::move(bfs));
      scene_rows.push_back(std::move(base_row));
    }
  }, 1);

  ensure_dir(out_dir);
  std::string csv = csv_hash_line(cfg) + "scene_id,method,resolution,N,iou,boundary_f,evals\n";
  for (const auto& scene_rows : rows) {
    for (const EvalRow& row : scene_rows) {
      csv += std::to_string(row.scene_id) + "," + row.method + "," +
             std::to_string(row.resolution) + "," + std::to_string(row.points_per_step) + "," +
             fmt_double(row.iou) + "," + fmt_double(row.boundary_f) + "," +
             std::to_string(row.evals) + "\n";
    }
  }
  write_text_file(out_dir / "bench.csv", csv);

  // Per-configuration means.
  std::string summary =
      csv_hash_line(cfg) + "method,resolution,N,mean_iou,mean_boundary_f,mean_evals,mean_madds\n";
  for (std::size_t p = 0; p < grid_points.size(); ++p) {
    double sum_iou = 0.0, sum_bf = 0.0, sum_evals = 0.0, sum_madds = 0.0;
    for (const auto& scene_rows : rows) {
      sum_iou += scene_rows[p].iou;
      sum_bf += scene_rows[p].boundary_f;
      sum_evals += static_cast<double>(scene_rows[p].evals);
      sum_madds += static_cast<double>(scene_rows[p].madds);
    }
    const double inv = regions.empty() ? 0.0 : 1.0 / static_cast<double>(regions.size());
    summary += grid_points[p].method + "," + std::to_string(grid_points[p].resolution) + "," +
               std::to_string(cfg.bench.points_per_step) + "," + fmt_short(sum_iou * inv) + "," +
               fmt_short(sum_bf * inv) + "," + fmt_short(sum_evals * inv) + "," +
               fmt_short(sum_madds * inv) + "\n";
  }
  write_text_file(out_dir / "summary.csv", summary);
}

void run_ablate(const ExperimentConfig& cfg, const fs::path& out_dir, int threads) {
  cfg.validate();
  const std::vector<TrainRegion> train_regions =
      make_regions(cfg, "train", cfg.dataset.count, threads);
  const std::vector<TrainRegion> eval_regions =
      make_regions(cfg, "eval", cfg.dataset.eval_count, threads);
  const std::vector<ProbGrid> train_coarse = oracle_grids(cfg, train_regions, threads);

  const SelectionStrategy strategies[] = {SelectionStrategy::regular_grid,
                                          SelectionStrategy::uniform, SelectionStrategy::mild,
                                          SelectionStrategy::heavy};

  std::string csv = csv_hash_line(cfg) + "scene_id,method,resolution,N,iou,boundary_f,evals\n";
  std::string summary = csv_hash_line(cfg) + "strategy,mean_iou,mean_boundary_f,final_loss\n";

  for (const SelectionStrategy strategy : strategies) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.train_strategy = strategy;
    FixedCoarseSource source{train_coarse};
    TrainResult trained =
        train_point_head(init_point_head(run_cfg.head_config(), run_cfg.seed), train_regions,
                         source, run_cfg.effective_train(), threads);
    const double final_loss = trained.log.empty() ? 0.0 : trained.log.back().point_loss;

    std::vector<EvalRow> rows(eval_regions.size());
    parallel_for(eval_regions.size(), threads, [&](std::size_t i) {
      MlpPointPredictor predictor(trained.head, 1);
      const ProbGrid coarse_grid =
          oracle_coarse(eval_regions[i].scene, cfg.dataset.classes, cfg.coarse,
                        coarse_noise_seed(cfg, static_cast<int>(i)));
      rows[i] = evaluate_scene(eval_regions[i].scene, eval_regions[i].fine_maps, coarse_grid,
                               &predictor, "subdivision", cfg.subdiv.target_resolution,
                               cfg.subdiv.points_per_step, cfg.subdiv.target_resolution,
                               cfg.bench.boundary_tolerance_px);
      rows[i].scene_id = static_cast<int>(i);
    }, 1);

    double sum_iou = 0.0, sum_bf = 0.0;
    for (const EvalRow& row : rows) {
      csv += std::to_string(row.scene_id) + "," + strategy_name(strategy) + "," +
             std::to_string(row.resolution) + "," + std::to_string(row.points_per_step) + "," +
             fmt_double(row.iou) + "," + fmt_double(row.boundary_f) + "," +
             std::to_string(row.evals) + "\n";
      sum_iou += row.iou;
      sum_bf += row.boundary_f;
    }
    const double inv = eval_regions.empty() ? 0.0 : 1.0 / static_cast<double>(eval_regions.size());
    summary += strategy_name(strategy) + "," + fmt_short(sum_iou * inv) + "," +
               fmt_short(sum_bf * inv) + "," + fmt_short(final_loss) + "\n";
  }

  ensure_dir(out_dir);
  write_text_file(out_dir / "ablate.csv", csv);
  write_text_file(out_dir / "ablate_summary.csv", summary);
}

}  // namespace subdrend
