#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlfs/keypoint_select.hpp"
#include "dlfs/model.hpp"
#include "dlfs/tensor.hpp"

namespace dlfs {

// Binary netpbm writers, bit-exact:
//   PGM: "P5\n<W> <H>\n255\n" + W*H gray bytes, row-major
//   PPM: "P6\n<W> <H>\n255\n" + W*H*3 interleaved RGB bytes
void write_pgm(const std::string& path, const std::vector<uint8_t>& gray, int64_t w, int64_t h);
void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb, int64_t w, int64_t h);

// Min-max normalization of a [H,W] map to bytes; a constant map renders as
// uniform mid gray (128).
std::vector<uint8_t> gray_from_map(const Tensor& map);

// Correlation map rendered at feature-map resolution.
void render_correlation_pgm(const std::string& path, const Tensor& corr_map);

// Input image with a 3x3 cross per keypoint, one gray level per scale
// (brightest = scale 0). Both modalities use the same geometry.
void render_keypoint_overlay_ppm(const std::string& path, const Tensor& image,
                                 const std::vector<KeypointSet>& keypoints,
                                 const ModelConfig& config);

}  // namespace dlfs
