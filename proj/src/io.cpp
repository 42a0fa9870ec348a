#include "subdrend/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "subdrend/errors.hpp"

namespace subdrend {

namespace {

constexpr char kMagic[8] = {'S', 'U', 'B', 'D', 'R', 'N', 'D', '1'};

void put_u32_le(std::ostream& os, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v & 0xff),
                                  static_cast<unsigned char>((v >> 8) & 0xff),
                                  static_cast<unsigned char>((v >> 16) & 0xff),
                                  static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t get_u32_le(std::istream& is) {
  unsigned char bytes[4];
  is.read(reinterpret_cast<char*>(bytes), 4);
  if (!is) throw IoError("SRT1: truncated header");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64_le(std::istream& is) {
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  if (!is) throw IoError("SRT1: truncated payload");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_srt1(std::ostream& os, const Srt1Tensor& tensor) {
  if (tensor.dtype != kSrt1F32 && tensor.dtype != kSrt1F64) throw IoError("SRT1: bad dtype");
  const std::size_t count =
      static_cast<std::size_t>(tensor.channels) * tensor.height * tensor.width;
  if (tensor.values.size() != count) throw IoError("SRT1: value count mismatch");
  os.write(kMagic, sizeof(kMagic));
  put_u32_le(os, static_cast<std::uint32_t>(tensor.dtype));
  put_u32_le(os, static_cast<std::uint32_t>(tensor.channels));
  put_u32_le(os, static_cast<std::uint32_t>(tensor.height));
  put_u32_le(os, static_cast<std::uint32_t>(tensor.width));
  if (tensor.dtype == kSrt1F32) {
    for (double v : tensor.values) {
      put_u32_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  } else {
    for (double v : tensor.values) put_u64_le(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw IoError("SRT1: write failed");
}

Srt1Tensor read_srt1(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw IoError("SRT1: bad magic");
  Srt1Tensor t;
  t.dtype = static_cast<int>(get_u32_le(is));
  if (t.dtype != kSrt1F32 && t.dtype != kSrt1F64) throw IoError("SRT1: bad dtype");
  t.channels = static_cast<int>(get_u32_le(is));
  t.height = static_cast<int>(get_u32_le(is));
  t.width = static_cast<int>(get_u32_le(is));
  if (t.channels <= 0 || t.height <= 0 || t.width <= 0) throw IoError("SRT1: bad dimensions");
  const std::size_t count = static_cast<std::size_t>(t.channels) * t.height * t.width;
  t.values.resize(count);
  if (t.dtype == kSrt1F32) {
    for (std::size_t i = 0; i < count; ++i) {
      t.values[i] = static_cast<double>(std::bit_cast<float>(get_u32_le(is)));
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) t.values[i] = std::bit_cast<double>(get_u64_le(is));
  }
  return t;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode) {
  std::ofstream os(path, mode);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode) {
  std::ifstream is(path, mode);
  if (!is) throw IoError("cannot open: " + path.string());
  return is;
}

}  // namespace

void save_feature_map(const FeatureMap& map, const std::filesystem::path& path, int dtype) {
  map.validate();
  auto os = open_out(path, std::ios::binary);
  write_srt1(os, {dtype, map.channels, map.height, map.width, map.values});
}

FeatureMap load_feature_map(const std::filesystem::path& path) {
  auto is = open_in(path, std::ios::binary);
  const Srt1Tensor t = read_srt1(is);
  FeatureMap map;
  map.channels = t.channels;
  map.height = t.height;
  map.width = t.width;
  map.values = t.values;
  map.validate();
  return map;
}

void save_prob_grid(const ProbGrid& grid, const std::filesystem::path& path, int dtype) {
  grid.validate();
  auto os = open_out(path, std::ios::binary);
  write_srt1(os, {dtype, grid.classes, grid.height, grid.width, grid.values});
}

ProbGrid load_prob_grid(const std::filesystem::path& path) {
  constexpr double kLoadTol = 1e-3;
  auto is = open_in(path, std::ios::binary);
  const Srt1Tensor t = read_srt1(is);
  ProbGrid grid;
  grid.classes = t.channels;
  grid.height = t.height;
  grid.width = t.width;
  grid.values = t.values;
  for (double& v : grid.values) {
    if (!(v >= -kLoadTol && v <= 1.0 + kLoadTol)) {
      throw IoError("ProbGrid: value outside [0,1] beyond tolerance: " + path.string());
    }
    v = std::clamp(v, 0.0, 1.0);
  }
  if (grid.classes > 1) {
    const std::size_t plane = static_cast<std::size_t>(grid.height) * grid.width;
    for (std::size_t i = 0; i < plane; ++i) {
      double sum = 0.0;
      for (int k = 0; k < grid.classes; ++k) sum += grid.values[k * plane + i];
      if (std::abs(sum - 1.0) > kLoadTol) {
        throw IoError("ProbGrid: class sums off the simplex beyond tolerance: " + path.string());
      }
      for (int k = 0; k < grid.classes; ++k) grid.values[k * plane + i] /= sum;
    }
  }
  grid.validate();
  return grid;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.head.validate();
  auto os = open_out(path, std::ios::binary);
  const PointHeadConfig& cfg = ckpt.head.config;
  std::ostringstream manifest;
  manifest << "SRTCKPT1\n";
  manifest << "fine_channels " << cfg.fine_channels << '\n';
  manifest << "coarse_channels " << cfg.coarse_channels << '\n';
  manifest << "hidden_layers " << cfg.hidden_layers << '\n';
  manifest << "hidden_width " << cfg.hidden_width << '\n';
  manifest << "output_classes " << cfg.output_classes << '\n';
  manifest << "coarse_affine " << (ckpt.coarse_affine ? 1 : 0) << '\n';
  for (int l = 0; l < cfg.layer_count(); ++l) {
    manifest << "w" << l << ' ' << ckpt.head.weights[l].rows << ' ' << ckpt.head.weights[l].cols
             << '\n';
    manifest << "b" << l << " 1 " << ckpt.head.biases[l].size() << '\n';
  }
  if (ckpt.coarse_affine) {
    manifest << "cw " << ckpt.coarse_affine->weight.rows << ' ' << ckpt.coarse_affine->weight.cols
             << '\n';
    manifest << "cb 1 " << ckpt.coarse_affine->bias.size() << '\n';
  }
  manifest << "end\n";
  os << manifest.str();

  auto write_matrix = [&os](const Matrix& m) {
    write_srt1(os, {kSrt1F64, 1, m.rows, m.cols, m.data});
  };
  auto write_vector = [&os](const std::vector<double>& v) {
    write_srt1(os, {kSrt1F64, 1, 1, static_cast<int>(v.size()), v});
  };
  for (int l = 0; l < cfg.layer_count(); ++l) {
    write_matrix(ckpt.head.weights[l]);
    write_vector(ckpt.head.biases[l]);
  }
  if (ckpt.coarse_affine) {
    write_matrix(ckpt.coarse_affine->weight);
    write_vector(ckpt.coarse_affine->bias);
  }
  if (!os) throw IoError("checkpoint: write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto is = open_in(path, std::ios::binary);
  std::string line;
  if (!std::getline(is, line) || line != "SRTCKPT1") {
    throw IoError("checkpoint: bad manifest header: " + path.string());
  }
  PointHeadConfig cfg;
  bool has_affine = false;
  while (std::getline(is, line)) {
    if (line == "end") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "fine_channels") ls >> cfg.fine_channels;
    else if (key == "coarse_channels") ls >> cfg.coarse_channels;
    else if (key == "hidden_layers") ls >> cfg.hidden_layers;
    else if (key == "hidden_width") ls >> cfg.hidden_width;
    else if (key == "output_classes") ls >> cfg.output_classes;
    else if (key == "coarse_affine") {
      int flag = 0;
      ls >> flag;
      has_affine = flag != 0;
    }
    // Tensor shape lines are informational; the SRT1 blobs are
    // self-describing and are validated against the config below.
  }
  if (line != "end") throw IoError("checkpoint: manifest missing 'end': " + path.string());

  auto read_matrix = [&is, &path]() {
    const Srt1Tensor t = read_srt1(is);
    if (t.channels != 1) throw IoError("checkpoint: tensor not 2-D: " + path.string());
    Matrix m(t.height, t.width);
    m.data = t.values;
    return m;
  };

  Checkpoint ckpt;
  ckpt.head.config = cfg;
  cfg.validate();
  for (int l = 0; l < cfg.layer_count(); ++l) {
    ckpt.head.weights.push_back(read_matrix());
    const Matrix b = read_matrix();
    ckpt.head.biases.emplace_back(b.data);
  }
  ckpt.head.validate();
  if (has_affine) {
    AffineCoarseParams affine;
    affine.weight = read_matrix();
    affine.bias = read_matrix().data;
    affine.validate();
    ckpt.coarse_affine = std::move(affine);
  }
  return ckpt;
}

void write_pgm(const BinaryMask& mask, const std::filesystem::path& path) {
  auto os = open_out(path, std::ios::binary);
  os << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  std::vector<unsigned char> row(mask.width);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) row[c] = mask.at(r, c) ? 255 : 0;
    os.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!os) throw IoError("PGM: write failed: " + path.string());
}

void write_ppm_overlay(const BinaryMask& pred, const BinaryMask& gt,
                       const std::filesystem::path& path) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ConfigError("write_ppm_overlay: mask shape mismatch");
  }
  auto os = open_out(path, std::ios::binary);
  os << "P6\n" << pred.width << ' ' << pred.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(pred.width) * 3);
  for (int r = 0; r < pred.height; ++r) {
    for (int c = 0; c < pred.width; ++c) {
      const bool p = pred.at(r, c) != 0;
      const bool g = gt.at(r, c) != 0;
      row[3 * c + 0] = p ? 255 : 0;
      row[3 * c + 1] = g ? 255 : 0;
      row[3 * c + 2] = (p && g) ? 255 : 0;
    }
    os.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!os) throw IoError("PPM: write failed: " + path.string());
}

}  // namespace subdrend
