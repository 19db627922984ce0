#pragma once

// Shared helpers for the test binaries: independent oracles (finite
// differences, double-loop filters, reference resamplers, count statistics)
// and scratch-directory plumbing. Oracles here must stay independent of the
// library implementation paths they check.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "d3sr/tensor.hpp"

namespace testutil {

inline std::string fresh_dir(const std::string& tag) {
    static int counter = 0;
    const std::string path =
        (std::filesystem::temp_directory_path() / ("d3sr_test_" + tag + "_" +
                                                    std::to_string(::getpid()) + "_" +
                                                    std::to_string(counter++)))
            .string();
    std::filesystem::create_directories(path);
    return path;
}

// Central finite differences of a scalar functional of one tensor.
inline d3sr::Tensor<double> numeric_grad(
    const std::function<double(const d3sr::Tensor<double>&)>& f, d3sr::Tensor<double> x,
    double h = 1e-5) {
    d3sr::Tensor<double> g(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double max_rel_err(const d3sr::Tensor<double>& a, const d3sr::Tensor<double>& b,
                          double floor = 1e-8) {
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

// Direct 3x3 cross-correlation magnitude with replicate padding; the
// double-loop reference for the Sobel operator.
template <typename T>
d3sr::Tensor<T> sobel_reference(const d3sr::Tensor<T>& x) {
    const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    const double ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    d3sr::Tensor<T> out({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                double gx = 0, gy = 0;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        const int sy = std::clamp(y + i - 1, 0, H - 1);
                        const int sx = std::clamp(xx + j - 1, 0, W - 1);
                        gx += kx[i][j] * x.at3(c, sy, sx);
                        gy += ky[i][j] * x.at3(c, sy, sx);
                    }
                out.at3(c, y, xx) = static_cast<T>(std::sqrt(gx * gx + gy * gy));
            }
    return out;
}

// Direct (non-separable) bicubic resampler: half-pixel mapping, Keys a=-0.5
// kernel, widened when downscaling, per-axis weight normalization, edge
// clamping. Reference for the resize path.
inline d3sr::Tensor<float> bicubic_reference(const d3sr::Tensor<float>& x, int out_h, int out_w) {
    auto kernel = [](double t) {
        constexpr double a = -0.5;
        t = std::abs(t);
        if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
        if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
        return 0.0;
    };
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const double sy = static_cast<double>(out_h) / H;
    const double sx = static_cast<double>(out_w) / W;
    const double ky = sy < 1.0 ? sy : 1.0;
    const double kx = sx < 1.0 ? sx : 1.0;
    const int ry = static_cast<int>(std::ceil(2.0 / ky)) + 1;
    const int rx = static_cast<int>(std::ceil(2.0 / kx)) + 1;
    d3sr::Tensor<float> out({C, out_h, out_w});
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                const double cy = (oy + 0.5) / sy - 0.5;
                const double cx = (ox + 0.5) / sx - 0.5;
                double acc = 0.0, wsum = 0.0;
                for (int i = -ry; i <= ry; ++i)
                    for (int j = -rx; j <= rx; ++j) {
                        const int iy = static_cast<int>(std::floor(cy)) + i;
                        const int ix = static_cast<int>(std::floor(cx)) + j;
                        const double w = kernel((cy - iy) * ky) * kernel((cx - ix) * kx);
                        if (w == 0.0) continue;
                        acc += w * x.at3(c, std::clamp(iy, 0, H - 1), std::clamp(ix, 0, W - 1));
                        wsum += w;
                    }
                out.at3(c, oy, ox) = static_cast<float>(acc / wsum);
            }
    return out;
}

// Pearson chi-square statistic for observed counts against a uniform model.
inline double chi_square_uniform(const std::vector<int64_t>& counts, int64_t total) {
    const double expected = static_cast<double>(total) / counts.size();
    double stat = 0.0;
    for (int64_t c : counts) {
        const double d = c - expected;
        stat += d * d / expected;
    }
    return stat;
}

// Two-sided Kolmogorov-Smirnov statistic against U(lo,hi).
inline double ks_uniform(std::vector<double> samples, double lo, double hi) {
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const double cdf = (samples[i] - lo) / (hi - lo);
        d = std::max(d, std::abs((i + 1) / n - cdf));
        d = std::max(d, std::abs(cdf - i / n));
    }
    return d;
}

// Frozen critical values:
//   chi2(0.999, df=9)  = 27.877164871256568
//   chi2(0.999, df=63) = 103.44237731987324
//   KS c(0.001) = 1.9494746035204051 (asymptotic, D_crit = c/sqrt(n))
inline constexpr double kChi2Crit999Df9 = 27.877164871256568;
inline constexpr double kChi2Crit999Df63 = 103.44237731987324;
inline constexpr double kKsC001 = 1.9494746035204051;

}  // namespace testutil
