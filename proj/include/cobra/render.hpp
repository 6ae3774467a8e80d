#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cobra/geometry.hpp"
#include "cobra/tensor.hpp"

namespace cobra {

/// 8-bit grayscale PNG of an [H,W] image with values in [0,1].
std::string encode_png_gray(const NdArray& image);

std::string base64_encode(const std::string& bytes);

/// SVG with the image as an embedded raster, the truth in red, the final
/// prediction in blue and intermediate iterations as dashed blue lines.
std::string svg_overlay(const NdArray& image, const std::optional<Polyline>& truth, const Polyline& prediction,
                        const std::vector<Polyline>& intermediates);

}  // namespace cobra
