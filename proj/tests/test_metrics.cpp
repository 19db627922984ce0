#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "d3sr/dataio.hpp"
#include "d3sr/image_io.hpp"
#include "d3sr/imageproc.hpp"
#include "d3sr/metrics.hpp"
#include "d3sr/rng.hpp"
#include "test_util.hpp"

using namespace d3sr;

namespace {

Tensor<float> rand_image(Rng& rng, int h, int w) {
    Tensor<float> t({3, h, w});
    for (auto& v : t.data) v = static_cast<float>(rng.uniform());
    return t;
}

// lr/hr pair directory built from toy images (bicubic x4 downscale inputs)
std::string make_pair_dir(int count, uint64_t seed) {
    const std::string dir = testutil::fresh_dir("pairdir");
    std::filesystem::create_directories(dir + "/hr");
    std::filesystem::create_directories(dir + "/lr");
    for (int i = 0; i < count; ++i) {
        const auto hr = make_toy_image(derive_seed(seed, 0xEE, static_cast<uint64_t>(i)), 64);
        char name[16];
        std::snprintf(name, sizeof(name), "%02d.png", i);
        write_png(dir + "/hr/" + name, hr);
        write_png(dir + "/lr/" + name, resize_image(hr, 16, 16, ResizeMode::bicubic));
    }
    return dir;
}

}  // namespace

TEST_CASE("psnr_y: sentinel, analytic offset, grayscale equivalence") {
    Rng rng(1);
    const auto x = rand_image(rng, 16, 16);
    CHECK(std::isinf(psnr_y(x, x)));

    // uniform +1/255 offset on all channels shifts Y by exactly 1/255
    Tensor<float> a({3, 16, 16}, 0.25f);
    Tensor<float> b({3, 16, 16}, 0.25f + 1.0f / 255.0f);
    CHECK(psnr_y(a, b) == doctest::Approx(48.1308036086791).epsilon(1e-6));

    // gray replicated to 3 channels: Y equals the gray value (weights sum to 1)
    Tensor<float> g1({3, 8, 8}), g2({3, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x2 = 0; x2 < 8; ++x2) {
            const float v1 = static_cast<float>(rng.uniform());
            const float v2 = static_cast<float>(rng.uniform());
            for (int c = 0; c < 3; ++c) {
                g1.at3(c, y, x2) = v1;
                g2.at3(c, y, x2) = v2;
            }
        }
    double mse = 0.0;
    for (int y = 0; y < 8; ++y)
        for (int x2 = 0; x2 < 8; ++x2) {
            const double yv1 = 0.299 * g1.at3(0, y, x2) + 0.587 * g1.at3(1, y, x2) +
                               0.114 * g1.at3(2, y, x2);
            const double yv2 = 0.299 * g2.at3(0, y, x2) + 0.587 * g2.at3(1, y, x2) +
                               0.114 * g2.at3(2, y, x2);
            mse += (yv1 - yv2) * (yv1 - yv2);
        }
    mse /= 64.0;
    CHECK(psnr_y(g1, g2) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-9));

    Tensor<float> wrong({3, 8, 9}, 0.0f);
    CHECK_THROWS_AS(psnr_y(g1, wrong), std::invalid_argument);
}

TEST_CASE("ssim_y: identity, constants, symmetry, window guard") {
    Rng rng(2);
    const auto x = rand_image(rng, 20, 20);
    CHECK(ssim_y(x, x) == doctest::Approx(1.0).epsilon(1e-9));

    // constants differing by 0.5: contrast/structure terms are 1, luminance
    // term is analytic
    Tensor<float> a({3, 16, 16}, 0.2f), b({3, 16, 16}, 0.7f);
    const double mu_x = 0.2, mu_y = 0.7, c1 = 0.01 * 0.01;
    const double want = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1);
    CHECK(ssim_y(a, b) == doctest::Approx(want).epsilon(1e-6));

    const auto y = rand_image(rng, 20, 20);
    CHECK(ssim_y(x, y) == doctest::Approx(ssim_y(y, x)).epsilon(1e-9));
    CHECK(ssim_y(x, y) >= -1.0);
    CHECK(ssim_y(x, y) <= 1.0);

    Tensor<float> small({3, 8, 8}, 0.5f);
    CHECK_THROWS_AS(ssim_y(small, small), std::invalid_argument);
}

TEST_CASE("psnr_y strictly decreases as MSE grows") {
    Tensor<float> x({3, 12, 12}, 0.5f);
    double prev = std::numeric_limits<double>::infinity();
    for (float off : {0.01f, 0.02f, 0.05f, 0.1f}) {
        Tensor<float> y({3, 12, 12}, 0.5f + off);
        const double p = psnr_y(x, y);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("evaluate_dataset: stubs, report shape, mean consistency") {
    const std::string dir = make_pair_dir(6, 99);
    const auto ex = FeatureExtractor<float>::seeded_default();

    SUBCASE("identity stub: PSNR sentinel, SSIM 1, DISTS 0") {
        const MetricReport r = evaluate_dataset(identity_stub(), dir, ex, "stub:identity");
        CHECK(r.rows.size() == 6);
        for (const auto& row : r.rows) {
            CHECK(std::isinf(row.psnr));
            CHECK(row.ssim == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(std::abs(row.dists) < 1e-6);
        }
    }

    SUBCASE("bicubic beats nearest on PSNR; report means are consistent") {
        const MetricReport rb = evaluate_dataset(bicubic_stub(), dir, ex, "stub:bicubic");
        const MetricReport rn = evaluate_dataset(nearest_stub(), dir, ex, "stub:nearest");
        CHECK(rb.mean_psnr > rn.mean_psnr);
        double acc = 0.0;
        for (const auto& row : rb.rows) acc += row.psnr;
        CHECK(rb.mean_psnr == doctest::Approx(acc / rb.rows.size()).epsilon(1e-9));

        // csv has one row per image plus header and mean line
        std::istringstream csv(rb.to_csv());
        std::string line;
        int lines = 0;
        while (std::getline(csv, line)) ++lines;
        CHECK(lines == 1 + 6 + 1);
    }

    SUBCASE("missing ground truth folder is a data error") {
        CHECK_THROWS_AS(
            evaluate_dataset(identity_stub(), testutil::fresh_dir("nodata"), ex, "x"),
            data_error);
    }

    SUBCASE("resolution mismatches are reported") {
        SrFn bad = [](const Tensor<float>& lr, const Tensor<float>&) { return lr; };
        CHECK_THROWS_WITH_AS(evaluate_dataset(bad, dir, ex, "bad"),
                             doctest::Contains("resolution mismatch"), data_error);
    }
}
