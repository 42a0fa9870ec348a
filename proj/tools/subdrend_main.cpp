// subdrend CLI: dataset generation, point-head training, adaptive refinement,
// benchmarking and sampling-strategy ablations over synthetic scenes.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "subdrend/errors.hpp"
#include "subdrend/harness.hpp"
#include "subdrend/parallel.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string data_dir;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<int> scene;
  int threads = 0;  // 0 = auto
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_data, bool with_checkpoint) {
  cmd->add_option("--config", args.config_path, "config file (key=value lines)");
  cmd->add_option("--out", args.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--seed", args.seed, "master seed (overrides the config)");
  cmd->add_option("--threads", args.threads, "worker threads, 0 = auto")->capture_default_str();
  cmd->add_option("--set", args.overrides, "config override key=value (repeatable)");
  if (with_data) cmd->add_option("--data", args.data_dir, "dataset directory from 'gen'");
  if (with_checkpoint) cmd->add_option("--checkpoint", args.checkpoint, "checkpoint file");
}

subdrend::ExperimentConfig build_config(const CommonArgs& args) {
  subdrend::ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = subdrend::load_config_file(args.config_path);
  subdrend::apply_config_overrides(cfg, args.overrides);
  if (args.seed) cfg.seed = *args.seed;
  if (args.scene) cfg.refine.scene_index = *args.scene;
  cfg.validate();
  return cfg;
}

std::optional<std::filesystem::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subdrend: adaptive point-based segmentation refinement on synthetic scenes"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, refine_args, bench_args, ablate_args;

  CLI::App* gen = app.add_subcommand("gen", "generate scenes and feature tensors");
  add_common(gen, gen_args, false, false);

  CLI::App* train = app.add_subcommand("train", "train the point head (and coarse head)");
  add_common(train, train_args, true, false);

  CLI::App* refine = app.add_subcommand("refine", "run subdivision refinement on one scene");
  add_common(refine, refine_args, true, true);
  refine->add_option("--scene", refine_args.scene, "scene index to refine");

  CLI::App* bench = app.add_subcommand("bench", "evaluate methods over a dataset");
  add_common(bench, bench_args, true, true);

  CLI::App* ablate = app.add_subcommand("ablate", "rerun training per sampling strategy");
  add_common(ablate, ablate_args, false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      const auto cfg = build_config(gen_args);
      subdrend::run_gen(cfg, gen_args.out_dir, gen_args.threads);
    } else if (train->parsed()) {
      const auto cfg = build_config(train_args);
      subdrend::run_train(cfg, opt_path(train_args.data_dir), train_args.out_dir,
                          train_args.threads);
    } else if (refine->parsed()) {
      const auto cfg = build_config(refine_args);
      subdrend::run_refine(cfg, opt_path(refine_args.checkpoint), opt_path(refine_args.data_dir),
                           refine_args.out_dir, refine_args.threads);
    } else if (bench->parsed()) {
      const auto cfg = build_config(bench_args);
      subdrend::run_bench(cfg, opt_path(bench_args.checkpoint), opt_path(bench_args.data_dir),
                          bench_args.out_dir, bench_args.threads);
    } else if (ablate->parsed()) {
      const auto cfg = build_config(ablate_args);
      subdrend::run_ablate(cfg, ablate_args.out_dir, ablate_args.threads);
    }
  } catch (const subdrend::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const subdrend::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
