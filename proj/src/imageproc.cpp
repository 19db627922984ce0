#include "d3sr/imageproc.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "d3sr/errors.hpp"

namespace d3sr {

ResizeMode resize_mode_from_string(const std::string& s) {
    if (s == "bicubic") return ResizeMode::bicubic;
    if (s == "bilinear") return ResizeMode::bilinear;
    if (s == "nearest") return ResizeMode::nearest;
    throw config_error("resize_mode", "unknown mode '" + s + "'");
}

std::string resize_mode_to_string(ResizeMode m) {
    switch (m) {
        case ResizeMode::bicubic: return "bicubic";
        case ResizeMode::bilinear: return "bilinear";
        case ResizeMode::nearest: return "nearest";
    }
    return "bicubic";
}

namespace {

// Keys cubic, a = -0.5 (the common "bicubic" kernel).
double cubic_kernel(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
}

double linear_kernel(double t) {
    t = std::abs(t);
    return t < 1.0 ? 1.0 - t : 0.0;
}

struct TapSet {
    std::vector<int> index;      // flattened: out_size * taps
    std::vector<double> weight;  // matching weights, rows normalized
    int taps = 0;
};

// 1-D resampling plan along an axis of length `in` to length `out`.
TapSet make_taps(int in, int out, ResizeMode mode) {
    TapSet ts;
    const double scale = static_cast<double>(out) / in;
    const bool down = scale < 1.0;
    const double support_base = mode == ResizeMode::bicubic ? 2.0 : 1.0;
    const double kscale = down ? scale : 1.0;  // widen kernel when shrinking
    const double support = support_base / kscale;
    ts.taps = static_cast<int>(std::ceil(support)) * 2 + 1;
    ts.index.resize(static_cast<size_t>(out) * ts.taps);
    ts.weight.resize(static_cast<size_t>(out) * ts.taps);
    for (int o = 0; o < out; ++o) {
        const double center = (o + 0.5) / scale - 0.5;
        const int left = static_cast<int>(std::floor(center - support + 0.5));
        double wsum = 0.0;
        for (int k = 0; k < ts.taps; ++k) {
            const int src = left + k;
            const double t = (center - src) * kscale;
            const double w =
                mode == ResizeMode::bicubic ? cubic_kernel(t) : linear_kernel(t);
            ts.index[static_cast<size_t>(o) * ts.taps + k] = std::clamp(src, 0, in - 1);
            ts.weight[static_cast<size_t>(o) * ts.taps + k] = w;
            wsum += w;
        }
        if (wsum != 0.0)
            for (int k = 0; k < ts.taps; ++k)
                ts.weight[static_cast<size_t>(o) * ts.taps + k] /= wsum;
    }
    return ts;
}

}  // namespace

Tensor<float> resize_image(const Tensor<float>& x, int out_h, int out_w, ResizeMode mode) {
    if (x.rank() != 3) throw std::invalid_argument("resize_image: expects (C,H,W)");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_image: empty output");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);

    if (mode == ResizeMode::nearest) {
        Tensor<float> out({C, out_h, out_w});
        const double sy = static_cast<double>(out_h) / H;
        const double sx = static_cast<double>(out_w) / W;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < out_h; ++y) {
                const int iy = std::clamp(static_cast<int>(std::floor((y + 0.5) / sy)), 0, H - 1);
                for (int xx = 0; xx < out_w; ++xx) {
                    const int ix =
                        std::clamp(static_cast<int>(std::floor((xx + 0.5) / sx)), 0, W - 1);
                    out.at3(c, y, xx) = x.at3(c, iy, ix);
                }
            }
        return out;
    }

    const TapSet row_taps = make_taps(W, out_w, mode);
    const TapSet col_taps = make_taps(H, out_h, mode);

    // horizontal pass (C,H,out_w) in double, then vertical
    std::vector<double> tmp(static_cast<size_t>(C) * H * out_w);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y) {
            const float* src = x.ptr() + (static_cast<int64_t>(c) * H + y) * W;
            double* dst = tmp.data() + (static_cast<size_t>(c) * H + y) * out_w;
            for (int o = 0; o < out_w; ++o) {
                double acc = 0.0;
                const size_t base = static_cast<size_t>(o) * row_taps.taps;
                for (int k = 0; k < row_taps.taps; ++k)
                    acc += row_taps.weight[base + k] * src[row_taps.index[base + k]];
                dst[o] = acc;
            }
        }

    Tensor<float> out({C, out_h, out_w});
    for (int c = 0; c < C; ++c)
        for (int o = 0; o < out_h; ++o) {
            const size_t base = static_cast<size_t>(o) * col_taps.taps;
            for (int xx = 0; xx < out_w; ++xx) {
                double acc = 0.0;
                for (int k = 0; k < col_taps.taps; ++k)
                    acc += col_taps.weight[base + k] *
                           tmp[(static_cast<size_t>(c) * H + col_taps.index[base + k]) * out_w +
                               xx];
                out.at3(c, o, xx) = static_cast<float>(acc);
            }
        }
    return out;
}

Tensor<float> gaussian_blur_image(const Tensor<float>& x, double sigma) {
    if (x.rank() != 3) throw std::invalid_argument("gaussian_blur: expects (C,H,W)");
    if (sigma <= 0.0) return x;
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kern(static_cast<size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kern[static_cast<size_t>(i + radius)] = v;
        ksum += v;
    }
    for (double& v : kern) v /= ksum;

    std::vector<double> tmp(static_cast<size_t>(C) * H * W);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kern[static_cast<size_t>(k + radius)] *
                           x.at3(c, y, std::clamp(xx + k, 0, W - 1));
                tmp[(static_cast<size_t>(c) * H + y) * W + xx] = acc;
            }
    Tensor<float> out({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kern[static_cast<size_t>(k + radius)] *
                           tmp[(static_cast<size_t>(c) * H + std::clamp(y + k, 0, H - 1)) * W + xx];
                out.at3(c, y, xx) = static_cast<float>(acc);
            }
    return out;
}

Tensor<float> clamp01(Tensor<float> x) {
    for (float& v : x.data) v = std::clamp(v, 0.0f, 1.0f);
    return x;
}

Tensor<float> upscale_x4_bicubic(const Tensor<float>& x) {
    if (x.rank() != 3) throw std::invalid_argument("upscale_x4_bicubic: expects (C,H,W)");
    return resize_image(x, 4 * x.dim(1), 4 * x.dim(2), ResizeMode::bicubic);
}

}  // namespace d3sr
