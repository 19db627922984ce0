#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "d3sr/imageproc.hpp"
#include "d3sr/tensor.hpp"

namespace d3sr {

// One step of the synthesis chain. Parameters not used by a kind are zero.
struct DegOp {
    enum class Kind { gaussian_blur, resize, gaussian_noise, jpeg };
    Kind kind = Kind::gaussian_blur;
    double sigma = 0.0;       // gaussian_blur
    double scale = 1.0;       // resize
    ResizeMode mode = ResizeMode::bicubic;
    double noise_sigma = 0.0;  // gaussian_noise
    uint64_t noise_seed = 0;
    int quality = 95;  // jpeg
};

std::string deg_kind_to_string(DegOp::Kind k);
DegOp::Kind deg_kind_from_string(const std::string& s);

// Sampling ranges for recipe synthesis. An op is drawn only when enabled;
// degenerate ranges are allowed.
struct DegradationConfig {
    bool blur_enabled = true;
    double blur_sigma_min = 0.2, blur_sigma_max = 3.0;
    bool resize_enabled = true;
    double resize_scale_min = 0.5, resize_scale_max = 1.5;
    bool noise_enabled = true;
    double noise_sigma_min = 0.0, noise_sigma_max = 25.0 / 255.0;
    bool jpeg_enabled = true;
    int jpeg_quality_min = 30, jpeg_quality_max = 95;
    bool second_order = false;  // apply the sampled chain twice
    int final_factor = 4;

    void validate() const;
    nlohmann::json to_json() const;
    static DegradationConfig from_json(const nlohmann::json& j);
};

// Seeded, serializable, replayable op sequence. Applying the same recipe to
// the same image is bit-identical.
struct DegradationRecipe {
    uint64_t seed = 0;
    int final_factor = 4;
    std::vector<DegOp> ops;

    nlohmann::json to_json() const;
    static DegradationRecipe from_json(const nlohmann::json& j);
    std::string serialize() const { return to_json().dump(2); }
    static DegradationRecipe deserialize(const std::string& s) {
        return from_json(nlohmann::json::parse(s));
    }
};

// Draw order per chain: blur sigma, resize (scale then mode), noise sigma,
// noise seed, jpeg quality; the chain repeats once more when second_order.
DegradationRecipe make_recipe(uint64_t seed, const DegradationConfig& cfg);

// x_H (3,H,W) in [0,1], H and W divisible by final_factor
// -> x_L (3,H/f,W/f) in [0,1].
Tensor<float> apply_degradation(const Tensor<float>& x_h, const DegradationRecipe& recipe);

}  // namespace d3sr
