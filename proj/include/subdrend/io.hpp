#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "subdrend/coarse.hpp"
#include "subdrend/grid.hpp"
#include "subdrend/point_head.hpp"

namespace subdrend {

// "SRT1" binary tensor format: 8-byte magic "SUBDRND1", u32 little-endian
// fields {dtype, C, H, W} with dtype 1 = f32 and 2 = f64, then C*H*W values
// channel-major row-major in the stated dtype, little-endian.
inline constexpr int kSrt1F32 = 1;
inline constexpr int kSrt1F64 = 2;

struct Srt1Tensor {
  int dtype = kSrt1F64;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;
};

void write_srt1(std::ostream& os, const Srt1Tensor& tensor);
Srt1Tensor read_srt1(std::istream& is);

void save_feature_map(const FeatureMap& map, const std::filesystem::path& path,
                      int dtype = kSrt1F64);
FeatureMap load_feature_map(const std::filesystem::path& path);

// Loads a probability grid; per-pixel class sums within 1e-3 of 1 are
// renormalized, anything further off (or values outside [0,1] by more than
// 1e-3) is rejected.
void save_prob_grid(const ProbGrid& grid, const std::filesystem::path& path, int dtype = kSrt1F64);
ProbGrid load_prob_grid(const std::filesystem::path& path);

// Checkpoint file: a text manifest (head config and per-tensor shapes)
// terminated by an "end" line, followed by the listed SRT1 tensors
// back-to-back. Round-trips bit-exactly (f64 storage).
struct Checkpoint {
  PointHeadParams head;
  std::optional<AffineCoarseParams> coarse_affine;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Binary PGM (P5): foreground 255, background 0.
void write_pgm(const BinaryMask& mask, const std::filesystem::path& path);

// Binary PPM (P6) overlay: prediction vs ground truth (both=white, pred
// only=red, gt only=green, neither=black).
void write_ppm_overlay(const BinaryMask& pred, const BinaryMask& gt,
                       const std::filesystem::path& path);

}  // namespace subdrend
