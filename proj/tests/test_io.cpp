#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "subdrend/errors.hpp"
#include "subdrend/io.hpp"
#include "subdrend/rng.hpp"

using namespace subdrend;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "subdrend_io_test";
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("SRT1 header layout and round trip") {
  Srt1Tensor t;
  t.dtype = kSrt1F64;
  t.channels = 2;
  t.height = 3;
  t.width = 4;
  Xoshiro256ss rng(1);
  t.values.resize(24);
  for (double& v : t.values) v = rng.uniform(-5.0, 5.0);

  std::stringstream buf;
  write_srt1(buf, t);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 8) == "SUBDRND1");
  // dtype=2 little-endian.
  CHECK(std::uint8_t(bytes[8]) == 2);
  CHECK(std::uint8_t(bytes[9]) == 0);
  CHECK(std::uint8_t(bytes[12]) == 2);   // C
  CHECK(std::uint8_t(bytes[16]) == 3);   // H
  CHECK(std::uint8_t(bytes[20]) == 4);   // W
  CHECK(bytes.size() == 24 + 24 * 8);

  buf.seekg(0);
  const Srt1Tensor back = read_srt1(buf);
  CHECK(back.dtype == t.dtype);
  CHECK(back.channels == 2);
  CHECK(back.values == t.values);  // f64 is bit-exact
}

TEST_CASE("SRT1 f32 path and bad magic") {
  Srt1Tensor t;
  t.dtype = kSrt1F32;
  t.channels = 1;
  t.height = 2;
  t.width = 2;
  t.values = {0.5, 0.25, -1.0, 3.0};
  std::stringstream buf;
  write_srt1(buf, t);
  buf.seekg(0);
  const Srt1Tensor back = read_srt1(buf);
  CHECK(back.values == t.values);  // exactly representable in f32

  std::stringstream bad("XXXXXXXX\x01\x00\x00\x00");
  CHECK_THROWS_AS(read_srt1(bad), IoError);
}

TEST_CASE("feature map and prob grid files") {
  const fs::path dir = temp_dir();
  Xoshiro256ss rng(2);
  FeatureMap map = FeatureMap::filled(3, 5, 4, 0.0);
  for (double& v : map.values) v = rng.uniform(-2.0, 2.0);
  save_feature_map(map, dir / "map.srt1");
  const FeatureMap loaded = load_feature_map(dir / "map.srt1");
  CHECK(loaded.values == map.values);
  CHECK(loaded.channels == 3);

  ProbGrid grid = ProbGrid::filled(2, 3, 3, 0.5);
  save_prob_grid(grid, dir / "grid.srt1");
  const ProbGrid gloaded = load_prob_grid(dir / "grid.srt1");
  CHECK(gloaded.values == grid.values);
}

TEST_CASE("prob grid load renormalizes small drift and rejects large") {
  const fs::path dir = temp_dir();

  // Slightly off-simplex sums are renormalized.
  Srt1Tensor drift;
  drift.dtype = kSrt1F64;
  drift.channels = 2;
  drift.height = 1;
  drift.width = 1;
  drift.values = {0.6002, 0.4002};
  {
    std::ofstream os(dir / "drift.srt1", std::ios::binary);
    write_srt1(os, drift);
  }
  const ProbGrid fixed = load_prob_grid(dir / "drift.srt1");
  CHECK(fixed.values[0] + fixed.values[1] == doctest::Approx(1.0).epsilon(1e-12));

  // Sums beyond 1e-3 are rejected.
  Srt1Tensor bad = drift;
  bad.values = {0.7, 0.4};
  {
    std::ofstream os(dir / "bad.srt1", std::ios::binary);
    write_srt1(os, bad);
  }
  CHECK_THROWS_AS(load_prob_grid(dir / "bad.srt1"), IoError);

  // Values outside [0,1] beyond tolerance are rejected.
  Srt1Tensor neg = drift;
  neg.channels = 1;
  neg.values = {-0.01};
  neg.height = 1;
  neg.width = 1;
  {
    std::ofstream os(dir / "neg.srt1", std::ios::binary);
    write_srt1(os, neg);
  }
  CHECK_THROWS_AS(load_prob_grid(dir / "neg.srt1"), IoError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const fs::path dir = temp_dir();
  PointHeadConfig cfg;
  cfg.fine_channels = 3;
  cfg.coarse_channels = 2;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 12;
  cfg.output_classes = 2;
  Checkpoint ckpt;
  ckpt.head = init_point_head(cfg, 77);
  AffineCoarseParams affine = AffineCoarseParams::zeros(4, 2);
  Xoshiro256ss rng(3);
  for (double& v : affine.weight.data) v = rng.uniform(-1.0, 1.0);
  for (double& v : affine.bias) v = rng.uniform(-1.0, 1.0);
  ckpt.coarse_affine = affine;

  save_checkpoint(ckpt, dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.head.config.hidden_width == 12);
  for (std::size_t l = 0; l < ckpt.head.weights.size(); ++l) {
    CHECK(back.head.weights[l].data == ckpt.head.weights[l].data);
    CHECK(back.head.biases[l] == ckpt.head.biases[l]);
  }
  REQUIRE(back.coarse_affine.has_value());
  CHECK(back.coarse_affine->weight.data == affine.weight.data);
  CHECK(back.coarse_affine->bias == affine.bias);

  // Saving the loaded checkpoint reproduces the file byte for byte.
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"));
}

TEST_CASE("pgm and ppm writers") {
  const fs::path dir = temp_dir();
  BinaryMask mask = BinaryMask::filled(2, 3, 0);
  mask.at(0, 0) = 1;
  mask.at(1, 2) = 1;
  write_pgm(mask, dir / "m.pgm");
  const std::string pgm = file_bytes(dir / "m.pgm");
  const std::string header = "P5\n3 2\n255\n";
  CHECK(pgm.rfind(header, 0) == 0);
  const std::string pixels = pgm.substr(header.size());
  REQUIRE(pixels.size() == 6);
  CHECK(std::uint8_t(pixels[0]) == 255);
  CHECK(std::uint8_t(pixels[1]) == 0);
  CHECK(std::uint8_t(pixels[5]) == 255);

  write_ppm_overlay(mask, mask, dir / "o.ppm");
  const std::string ppm = file_bytes(dir / "o.ppm");
  const std::string ppm_header = "P6\n3 2\n255\n";
  CHECK(ppm.rfind(ppm_header, 0) == 0);
  CHECK(ppm.size() == ppm_header.size() + 18);
}
