#pragma once

#include <string>

#include "d3sr/tensor.hpp"

namespace d3sr {

enum class ResizeMode { bicubic, bilinear, nearest };

ResizeMode resize_mode_from_string(const std::string& s);
std::string resize_mode_to_string(ResizeMode m);

// Separable resampling on (C,H,W) images. Half-pixel coordinate mapping
// (src = (dst+0.5)/scale - 0.5), replicate edges, kernels widened by the
// inverse scale when downscaling (antialiasing). Internals run in double.
Tensor<float> resize_image(const Tensor<float>& x, int out_h, int out_w, ResizeMode mode);

// Truncated (3 sigma) normalized Gaussian, separable, replicate edges.
Tensor<float> gaussian_blur_image(const Tensor<float>& x, double sigma);

Tensor<float> clamp01(Tensor<float> x);

// Bicubic x4 upscale used to bring LR inputs to target resolution.
Tensor<float> upscale_x4_bicubic(const Tensor<float>& x);

}  // namespace d3sr
