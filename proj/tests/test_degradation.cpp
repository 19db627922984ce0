#include "doctest.h"

#include <cmath>

#include "d3sr/degradation.hpp"
#include "d3sr/rng.hpp"
#include "test_util.hpp"

using namespace d3sr;

namespace {

Tensor<float> rand_image(Rng& rng, int h, int w) {
    Tensor<float> t({3, h, w});
    for (auto& v : t.data) v = static_cast<float>(rng.uniform());
    return t;
}

DegradationConfig all_disabled() {
    DegradationConfig c;
    c.blur_enabled = c.resize_enabled = c.noise_enabled = c.jpeg_enabled = false;
    return c;
}

}  // namespace

TEST_CASE("recipes are deterministic in (seed, config)") {
    DegradationConfig cfg;
    const auto a = make_recipe(99, cfg);
    const auto b = make_recipe(99, cfg);
    CHECK(a.serialize() == b.serialize());
    const auto c = make_recipe(100, cfg);
    CHECK(a.serialize() != c.serialize());
}

TEST_CASE("degenerate config yields the identity-plus-downscale recipe") {
    const auto recipe = make_recipe(7, all_disabled());
    CHECK(recipe.ops.empty());
    CHECK(recipe.final_factor == 4);
}

TEST_CASE("identity recipe equals the independent bicubic reference") {
    Rng rng(17);
    const auto x = rand_image(rng, 64, 64);
    const auto got = apply_degradation(x, make_recipe(7, all_disabled()));
    CHECK(got.shape == std::vector<int>{3, 16, 16});
    const auto want = testutil::bicubic_reference(x, 16, 16);
    CHECK(max_abs_diff(got, want) < 1e-6f);
}

TEST_CASE("recipe parameters match their configured uniform ranges (KS at 0.001)") {
    DegradationConfig cfg;
    const int n = 10000;
    std::vector<double> sigmas, scales, noises;
    std::vector<int64_t> quality_counts(static_cast<size_t>(cfg.jpeg_quality_max -
                                                            cfg.jpeg_quality_min + 1),
                                        0);
    for (int i = 0; i < n; ++i) {
        const auto r = make_recipe(derive_seed(5, 0xAB, static_cast<uint64_t>(i)), cfg);
        for (const auto& op : r.ops) {
            switch (op.kind) {
                case DegOp::Kind::gaussian_blur: sigmas.push_back(op.sigma); break;
                case DegOp::Kind::resize: scales.push_back(op.scale); break;
                case DegOp::Kind::gaussian_noise: noises.push_back(op.noise_sigma); break;
                case DegOp::Kind::jpeg:
                    quality_counts[static_cast<size_t>(op.quality - cfg.jpeg_quality_min)]++;
                    break;
            }
        }
    }
    const double crit = testutil::kKsC001 / std::sqrt(static_cast<double>(n));
    CHECK(testutil::ks_uniform(sigmas, cfg.blur_sigma_min, cfg.blur_sigma_max) < crit);
    CHECK(testutil::ks_uniform(scales, cfg.resize_scale_min, cfg.resize_scale_max) < crit);
    CHECK(testutil::ks_uniform(noises, cfg.noise_sigma_min, cfg.noise_sigma_max) < crit);
    // integer quality: every level hit, mean near the midpoint
    double qmean = 0.0;
    int64_t qn = 0;
    for (size_t i = 0; i < quality_counts.size(); ++i) {
        CHECK(quality_counts[i] > 0);
        qmean += static_cast<double>(quality_counts[i]) * (cfg.jpeg_quality_min + static_cast<int>(i));
        qn += quality_counts[i];
    }
    qmean /= static_cast<double>(qn);
    CHECK(std::abs(qmean - 0.5 * (cfg.jpeg_quality_min + cfg.jpeg_quality_max)) < 1.0);
}

TEST_CASE("application is replay-deterministic, in range, and shaped (3,H/4,W/4)") {
    Rng rng(18);
    const auto x = rand_image(rng, 64, 96);
    DegradationConfig cfg;
    cfg.second_order = true;
    const auto recipe = make_recipe(23, cfg);
    const auto a = apply_degradation(x, recipe);
    const auto b = apply_degradation(x, recipe);
    CHECK(a.shape == std::vector<int>{3, 16, 24});
    CHECK(max_abs_diff(a, b) == 0.0f);  // bit-identical replay
    for (const float v : a.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    // serialization round trip replays identically
    const auto replayed = apply_degradation(x, DegradationRecipe::deserialize(recipe.serialize()));
    CHECK(max_abs_diff(a, replayed) == 0.0f);
}

TEST_CASE("noise-only recipe reproduces the configured noise level") {
    // factor 1, noise sigma pinned at 0.05, constant 0.5 input: the sample
    // std of the output stays within 10% (clamping is negligible at 5 sigma)
    DegradationConfig cfg = all_disabled();
    cfg.noise_enabled = true;
    cfg.noise_sigma_min = cfg.noise_sigma_max = 0.05;
    cfg.final_factor = 1;
    const auto recipe = make_recipe(3, cfg);
    Tensor<float> x({3, 64, 64}, 0.5f);
    const auto y = apply_degradation(x, recipe);
    double mean = 0.0, m2 = 0.0;
    for (const float v : y.data) {
        mean += v;
        m2 += static_cast<double>(v) * v;
    }
    mean /= static_cast<double>(y.numel());
    const double stddev = std::sqrt(m2 / static_cast<double>(y.numel()) - mean * mean);
    CHECK(stddev > 0.045);
    CHECK(stddev < 0.055);
}

TEST_CASE("second-order chains sample the pipeline twice") {
    DegradationConfig cfg;
    const auto once = make_recipe(4, cfg);
    cfg.second_order = true;
    const auto twice = make_recipe(4, cfg);
    CHECK(twice.ops.size() == 2 * once.ops.size());
}

TEST_CASE("jpeg stage round-trips through a real codec") {
    Rng rng(19);
    const auto x = rand_image(rng, 32, 32);
    DegradationConfig cfg = all_disabled();
    cfg.jpeg_enabled = true;
    cfg.jpeg_quality_min = cfg.jpeg_quality_max = 50;
    cfg.final_factor = 1;
    const auto y = apply_degradation(x, make_recipe(5, cfg));
    CHECK(y.shape == x.shape);
    CHECK(max_abs_diff(y, x) > 0.0f);  // lossy
    for (const float v : y.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("invalid inputs are rejected") {
    DegradationConfig cfg;
    Tensor<float> bad({3, 63, 64}, 0.5f);
    CHECK_THROWS_AS(apply_degradation(bad, make_recipe(1, cfg)), std::invalid_argument);

    DegradationConfig out_of_range;
    out_of_range.blur_sigma_max = 99.0;
    CHECK_THROWS_AS(make_recipe(1, out_of_range), config_error);
}
