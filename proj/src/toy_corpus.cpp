#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "d3sr/dataio.hpp"
#include "d3sr/errors.hpp"
#include "d3sr/image_io.hpp"
#include "d3sr/rng.hpp"

namespace d3sr {

namespace {

struct Color {
    float r, g, b;
};

Color random_color(Rng& rng) {
    return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
            static_cast<float>(rng.uniform())};
}

// Two colors with enough contrast to leave visible structure.
std::pair<Color, Color> contrasting_pair(Rng& rng) {
    Color a = random_color(rng), b = random_color(rng);
    while (std::abs(a.r - b.r) + std::abs(a.g - b.g) + std::abs(a.b - b.b) < 0.6f)
        b = random_color(rng);
    return {a, b};
}

void put(Tensor<float>& img, int y, int x, const Color& c) {
    img.at3(0, y, x) = c.r;
    img.at3(1, y, x) = c.g;
    img.at3(2, y, x) = c.b;
}

Color lerp(const Color& a, const Color& b, float t) {
    return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

void draw_checkerboard(Tensor<float>& img, Rng& rng) {
    const int size = img.dim(1);
    const int cells[] = {4, 6, 8, 12, 16};
    const int cell = cells[rng.uniform_int(5)];
    const int phase_x = rng.uniform_int(cell), phase_y = rng.uniform_int(cell);
    auto [c0, c1] = contrasting_pair(rng);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const bool on = (((y + phase_y) / cell) + ((x + phase_x) / cell)) % 2 == 0;
            put(img, y, x, on ? c0 : c1);
        }
}

void draw_ramp(Tensor<float>& img, Rng& rng) {
    const int size = img.dim(1);
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    const double dx = std::cos(ang), dy = std::sin(ang);
    auto [c0, c1] = contrasting_pair(rng);
    double lo = 1e30, hi = -1e30;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double p = dx * x + dy * y;
            lo = std::min(lo, p);
            hi = std::max(hi, p);
        }
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const float t = static_cast<float>((dx * x + dy * y - lo) / (hi - lo + 1e-9));
            put(img, y, x, lerp(c0, c1, t));
        }
}

void draw_gabor(Tensor<float>& img, Rng& rng) {
    const int size = img.dim(1);
    std::vector<double> field(static_cast<size_t>(size) * size, 0.0);
    const int splats = 24;
    for (int s = 0; s < splats; ++s) {
        const double cx = rng.uniform(0.0, size);
        const double cy = rng.uniform(0.0, size);
        const double theta = rng.uniform(0.0, M_PI);
        const double freq = rng.uniform(0.06, 0.25);
        const double sig = rng.uniform(4.0, 10.0);
        const double amp = rng.uniform(0.5, 1.0);
        const int rad = static_cast<int>(std::ceil(3.0 * sig));
        const int x0 = std::max(0, static_cast<int>(cx) - rad);
        const int x1 = std::min(size - 1, static_cast<int>(cx) + rad);
        const int y0 = std::max(0, static_cast<int>(cy) - rad);
        const int y1 = std::min(size - 1, static_cast<int>(cy) + rad);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double ux = x - cx, uy = y - cy;
                const double r2 = ux * ux + uy * uy;
                const double carrier =
                    std::cos(2.0 * M_PI * freq * (ux * std::cos(theta) + uy * std::sin(theta)));
                field[static_cast<size_t>(y) * size + x] +=
                    amp * std::exp(-0.5 * r2 / (sig * sig)) * carrier;
            }
    }
    double lo = 1e30, hi = -1e30;
    for (double v : field) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    auto [c0, c1] = contrasting_pair(rng);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const float t = static_cast<float>((field[static_cast<size_t>(y) * size + x] - lo) /
                                               (hi - lo + 1e-9));
            put(img, y, x, lerp(c0, c1, t));
        }
}

// 5x7 bitmap glyphs, row-major, 5 bits per row (MSB left).
constexpr std::array<std::array<uint8_t, 7>, 16> kGlyphs = {{
    {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e},  // 0
    {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e},  // 1
    {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f},  // 2
    {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e},  // 3
    {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02},  // 4
    {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e},  // 5
    {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e},  // 6
    {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e},  // 8
    {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c},  // 9
    {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11},  // A
    {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e},  // B
    {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e},  // C
    {0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c},  // D
    {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f},  // E
    {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10},  // F
}};

void draw_glyphs(Tensor<float>& img, Rng& rng) {
    const int size = img.dim(1);
    auto [bg, fg] = contrasting_pair(rng);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) put(img, y, x, bg);
    const int scale = 2 + rng.uniform_int(3);  // 2..4
    const int gw = 6 * scale, gh = 8 * scale;  // glyph cell incl. spacing
    for (int gy = 1; gy + gh < size; gy += gh)
        for (int gx = 1; gx + gw < size; gx += gw) {
            const auto& glyph = kGlyphs[static_cast<size_t>(rng.uniform_int(16))];
            for (int ry = 0; ry < 7; ++ry)
                for (int rx = 0; rx < 5; ++rx) {
                    if (!((glyph[static_cast<size_t>(ry)] >> (4 - rx)) & 1)) continue;
                    for (int sy = 0; sy < scale; ++sy)
                        for (int sx = 0; sx < scale; ++sx) {
                            const int py = gy + ry * scale + sy;
                            const int px = gx + rx * scale + sx;
                            if (py < size && px < size) put(img, py, px, fg);
                        }
                }
        }
}

}  // namespace

Tensor<float> make_toy_image(uint64_t seed, int size) {
    if (size < 32) throw std::invalid_argument("make_toy_image: size must be >= 32");
    Rng rng(seed);
    Tensor<float> img({3, size, size});
    switch (rng.uniform_int(4)) {
        case 0: draw_checkerboard(img, rng); break;
        case 1: draw_ramp(img, rng); break;
        case 2: draw_gabor(img, rng); break;
        default: draw_glyphs(img, rng); break;
    }
    return img;
}

void generate_toy_corpus(const std::string& out_dir, int count, int size, uint64_t seed) {
    if (count < 1) throw std::invalid_argument("generate_toy_corpus: count must be >= 1");
    std::filesystem::create_directories(out_dir);
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%04d.png", i);
        write_png(out_dir + "/" + name,
                  make_toy_image(derive_seed(seed, 0x7031, static_cast<uint64_t>(i)), size));
    }
}

}  // namespace d3sr
