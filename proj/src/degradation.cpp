#include "d3sr/degradation.hpp"

#include <algorithm>
#include <cmath>

#include "d3sr/errors.hpp"
#include "d3sr/image_io.hpp"
#include "d3sr/rng.hpp"

namespace d3sr {

std::string deg_kind_to_string(DegOp::Kind k) {
    switch (k) {
        case DegOp::Kind::gaussian_blur: return "gaussian_blur";
        case DegOp::Kind::resize: return "resize";
        case DegOp::Kind::gaussian_noise: return "gaussian_noise";
        case DegOp::Kind::jpeg: return "jpeg";
    }
    return "gaussian_blur";
}

DegOp::Kind deg_kind_from_string(const std::string& s) {
    if (s == "gaussian_blur") return DegOp::Kind::gaussian_blur;
    if (s == "resize") return DegOp::Kind::resize;
    if (s == "gaussian_noise") return DegOp::Kind::gaussian_noise;
    if (s == "jpeg") return DegOp::Kind::jpeg;
    throw config_error("degradation.op", "unknown op kind '" + s + "'");
}

void DegradationConfig::validate() const {
    auto check_range = [](const char* field, double lo, double hi, double min_ok, double max_ok) {
        if (!(lo <= hi)) throw config_error(field, "min exceeds max");
        if (lo < min_ok || hi > max_ok) throw config_error(field, "outside documented range");
    };
    if (blur_enabled) check_range("degradation.blur_sigma", blur_sigma_min, blur_sigma_max, 0.2, 3.0);
    if (resize_enabled)
        check_range("degradation.resize_scale", resize_scale_min, resize_scale_max, 0.25, 2.0);
    if (noise_enabled)
        check_range("degradation.noise_sigma", noise_sigma_min, noise_sigma_max, 0.0, 25.0 / 255.0);
    if (jpeg_enabled) {
        if (jpeg_quality_min > jpeg_quality_max)
            throw config_error("degradation.jpeg_quality", "min exceeds max");
        if (jpeg_quality_min < 30 || jpeg_quality_max > 95)
            throw config_error("degradation.jpeg_quality", "outside documented range [30,95]");
    }
    if (final_factor < 1) throw config_error("degradation.final_factor", "must be >= 1");
}

nlohmann::json DegradationConfig::to_json() const {
    return {{"blur_enabled", blur_enabled},
            {"blur_sigma_min", blur_sigma_min},
            {"blur_sigma_max", blur_sigma_max},
            {"resize_enabled", resize_enabled},
            {"resize_scale_min", resize_scale_min},
            {"resize_scale_max", resize_scale_max},
            {"noise_enabled", noise_enabled},
            {"noise_sigma_min", noise_sigma_min},
            {"noise_sigma_max", noise_sigma_max},
            {"jpeg_enabled", jpeg_enabled},
            {"jpeg_quality_min", jpeg_quality_min},
            {"jpeg_quality_max", jpeg_quality_max},
            {"second_order", second_order},
            {"final_factor", final_factor}};
}

DegradationConfig DegradationConfig::from_json(const nlohmann::json& j) {
    DegradationConfig c;
    c.blur_enabled = j.value("blur_enabled", c.blur_enabled);
    c.blur_sigma_min = j.value("blur_sigma_min", c.blur_sigma_min);
    c.blur_sigma_max = j.value("blur_sigma_max", c.blur_sigma_max);
    c.resize_enabled = j.value("resize_enabled", c.resize_enabled);
    c.resize_scale_min = j.value("resize_scale_min", c.resize_scale_min);
    c.resize_scale_max = j.value("resize_scale_max", c.resize_scale_max);
    c.noise_enabled = j.value("noise_enabled", c.noise_enabled);
    c.noise_sigma_min = j.value("noise_sigma_min", c.noise_sigma_min);
    c.noise_sigma_max = j.value("noise_sigma_max", c.noise_sigma_max);
    c.jpeg_enabled = j.value("jpeg_enabled", c.jpeg_enabled);
    c.jpeg_quality_min = j.value("jpeg_quality_min", c.jpeg_quality_min);
    c.jpeg_quality_max = j.value("jpeg_quality_max", c.jpeg_quality_max);
    c.second_order = j.value("second_order", c.second_order);
    c.final_factor = j.value("final_factor", c.final_factor);
    c.validate();
    return c;
}

nlohmann::json DegradationRecipe::to_json() const {
    nlohmann::json ops_j = nlohmann::json::array();
    for (const auto& op : ops) {
        nlohmann::json o{{"kind", deg_kind_to_string(op.kind)}};
        switch (op.kind) {
            case DegOp::Kind::gaussian_blur: o["sigma"] = op.sigma; break;
            case DegOp::Kind::resize:
                o["scale"] = op.scale;
                o["mode"] = resize_mode_to_string(op.mode);
                break;
            case DegOp::Kind::gaussian_noise:
                o["noise_sigma"] = op.noise_sigma;
                o["noise_seed"] = op.noise_seed;
                break;
            case DegOp::Kind::jpeg: o["quality"] = op.quality; break;
        }
        ops_j.push_back(std::move(o));
    }
    return {{"seed", seed}, {"final_factor", final_factor}, {"ops", ops_j}};
}

DegradationRecipe DegradationRecipe::from_json(const nlohmann::json& j) {
    DegradationRecipe r;
    r.seed = j.at("seed").get<uint64_t>();
    r.final_factor = j.at("final_factor").get<int>();
    for (const auto& o : j.at("ops")) {
        DegOp op;
        op.kind = deg_kind_from_string(o.at("kind").get<std::string>());
        switch (op.kind) {
            case DegOp::Kind::gaussian_blur: op.sigma = o.at("sigma").get<double>(); break;
            case DegOp::Kind::resize:
                op.scale = o.at("scale").get<double>();
                op.mode = resize_mode_from_string(o.at("mode").get<std::string>());
                break;
            case DegOp::Kind::gaussian_noise:
                op.noise_sigma = o.at("noise_sigma").get<double>();
                op.noise_seed = o.at("noise_seed").get<uint64_t>();
                break;
            case DegOp::Kind::jpeg: op.quality = o.at("quality").get<int>(); break;
        }
        r.ops.push_back(op);
    }
    return r;
}

DegradationRecipe make_recipe(uint64_t seed, const DegradationConfig& cfg) {
    cfg.validate();
    DegradationRecipe r;
    r.seed = seed;
    r.final_factor = cfg.final_factor;
    Rng rng(derive_seed(seed, streams::kRecipe));
    const int chains = cfg.second_order ? 2 : 1;
    for (int chain = 0; chain < chains; ++chain) {
        if (cfg.blur_enabled) {
            DegOp op;
            op.kind = DegOp::Kind::gaussian_blur;
            op.sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
            r.ops.push_back(op);
        }
        if (cfg.resize_enabled) {
            DegOp op;
            op.kind = DegOp::Kind::resize;
            op.scale = rng.uniform(cfg.resize_scale_min, cfg.resize_scale_max);
            const ResizeMode modes[3] = {ResizeMode::bicubic, ResizeMode::bilinear,
                                         ResizeMode::nearest};
            op.mode = modes[rng.uniform_int(3)];
            r.ops.push_back(op);
        }
        if (cfg.noise_enabled) {
            DegOp op;
            op.kind = DegOp::Kind::gaussian_noise;
            op.noise_sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max);
            op.noise_seed = rng.next_u64();
            r.ops.push_back(op);
        }
        if (cfg.jpeg_enabled) {
            DegOp op;
            op.kind = DegOp::Kind::jpeg;
            op.quality =
                cfg.jpeg_quality_min + rng.uniform_int(cfg.jpeg_quality_max - cfg.jpeg_quality_min + 1);
            r.ops.push_back(op);
        }
    }
    return r;
}

Tensor<float> apply_degradation(const Tensor<float>& x_h, const DegradationRecipe& recipe) {
    if (x_h.rank() != 3 || x_h.dim(0) != 3)
        throw std::invalid_argument("apply_degradation: expects (3,H,W)");
    const int H = x_h.dim(1), W = x_h.dim(2);
    const int f = recipe.final_factor;
    if (H % f != 0 || W % f != 0)
        throw std::invalid_argument("apply_degradation: dimensions must be divisible by " +
                                    std::to_string(f));

    Tensor<float> img = x_h;
    for (const auto& op : recipe.ops) {
        switch (op.kind) {
            case DegOp::Kind::gaussian_blur:
                img = gaussian_blur_image(img, op.sigma);
                break;
            case DegOp::Kind::resize: {
                const int nh = std::max(f, static_cast<int>(std::lround(img.dim(1) * op.scale)));
                const int nw = std::max(f, static_cast<int>(std::lround(img.dim(2) * op.scale)));
                img = clamp01(resize_image(img, nh, nw, op.mode));
                break;
            }
            case DegOp::Kind::gaussian_noise: {
                if (op.noise_sigma > 0.0) {
                    Rng rng(op.noise_seed);
                    for (float& v : img.data)
                        v = static_cast<float>(v + op.noise_sigma * rng.normal());
                    img = clamp01(std::move(img));
                }
                break;
            }
            case DegOp::Kind::jpeg:
                img = jpeg_decode(jpeg_encode(img, op.quality));
                break;
        }
    }
    return clamp01(resize_image(img, H / f, W / f, ResizeMode::bicubic));
}

}  // namespace d3sr
