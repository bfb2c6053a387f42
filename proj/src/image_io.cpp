#include "dlfs/image_io.hpp"

#include <cmath>
#include <fstream>

#include "dlfs/errors.hpp"

namespace dlfs {

namespace {

void write_pnm(const std::string& path, const char* magic, const std::vector<uint8_t>& bytes,
               int64_t w, int64_t h, int64_t channels) {
  if (static_cast<int64_t>(bytes.size()) != w * h * channels)
    throw ShapeMismatch("pixel buffer size");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  os << magic << "\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path);
}

uint8_t to_byte(double v) {
  if (v <= 0.0) return 0;
  if (v >= 1.0) return 255;
  return static_cast<uint8_t>(std::lround(v * 255.0));
}

}  // namespace

void write_pgm(const std::string& path, const std::vector<uint8_t>& gray, int64_t w, int64_t h) {
  write_pnm(path, "P5", gray, w, h, 1);
}

void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb, int64_t w, int64_t h) {
  write_pnm(path, "P6", rgb, w, h, 3);
}

std::vector<uint8_t> gray_from_map(const Tensor& map) {
  if (map.rank() != 2) throw ShapeMismatch("gray_from_map expects [H,W]");
  double lo = map[0], hi = map[0];
  for (int64_t i = 0; i < map.size(); ++i) {
    lo = std::min(lo, map[i]);
    hi = std::max(hi, map[i]);
  }
  std::vector<uint8_t> out(static_cast<size_t>(map.size()));
  if (hi - lo < 1e-12) {
    for (uint8_t& b : out) b = 128;
    return out;
  }
  for (int64_t i = 0; i < map.size(); ++i)
    out[static_cast<size_t>(i)] = to_byte((map[i] - lo) / (hi - lo));
  return out;
}

void render_correlation_pgm(const std::string& path, const Tensor& corr_map) {
  write_pgm(path, gray_from_map(corr_map), corr_map.shape()[1], corr_map.shape()[0]);
}

void render_keypoint_overlay_ppm(const std::string& path, const Tensor& image,
                                 const std::vector<KeypointSet>& keypoints,
                                 const ModelConfig& config) {
  if (image.rank() != 3 || image.shape()[0] != 3) throw ShapeMismatch("overlay expects [3,H,W]");
  const int64_t h = image.shape()[1], w = image.shape()[2];
  std::vector<uint8_t> rgb(static_cast<size_t>(3 * h * w));
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c)
      for (int64_t ch = 0; ch < 3; ++ch)
        rgb[static_cast<size_t>((r * w + c) * 3 + ch)] = to_byte(image[(ch * h + r) * w + c]);

  const int64_t fs = config.feature_size();
  const double stride = static_cast<double>(config.total_stride());
  for (size_t s = 0; s < keypoints.size(); ++s) {
    const uint8_t gray = static_cast<uint8_t>(255 - 85 * (s % 3));
    const KeypointSet& set = keypoints[s];
    for (size_t j = 0; j < set.x.size(); ++j) {
      const int64_t col = std::llround(pixel_from_norm_coord(set.x[j], fs) * stride);
      const int64_t row = std::llround(pixel_from_norm_coord(set.y[j], fs) * stride);
      const int64_t offsets[5][2] = {{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}};
      for (const auto& off : offsets) {
        const int64_t r = row + off[0], c = col + off[1];
        if (r < 0 || r >= h || c < 0 || c >= w) continue;
        for (int64_t ch = 0; ch < 3; ++ch)
          rgb[static_cast<size_t>((r * w + c) * 3 + ch)] = gray;
      }
    }
  }
  write_ppm(path, rgb, w, h);
}

}  // namespace dlfs
