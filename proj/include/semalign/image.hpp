#ifndef SEMALIGN_IMAGE_HPP_
#define SEMALIGN_IMAGE_HPP_

#include <filesystem>
#include <functional>

#include "semalign/geometry.hpp"
#include "semalign/tensor.hpp"

namespace semalign {

// Rasters are (C,H,W) tensors with values in [0,1]; C is 1 or 3.

// 8-bit PNG. Values are clamped and rounded.
void write_png(const std::filesystem::path& path, const Tensor& image);
// Always returns a 3-channel raster.
Tensor read_png(const std::filesystem::path& path);

// out(p) = image sampled bilinearly at source_of(p), with p and the returned
// point in normalized coordinates of the output/input raster respectively.
Tensor resample(const Tensor& image, int height, int width, const std::function<Vec2(const Vec2&)>& source_of);

// Bilinear value of one channel at a normalized point (border clamped).
double sample_channel(const Tensor& image, int channel, const Vec2& p);

}  // namespace semalign

#endif  // SEMALIGN_IMAGE_HPP_
