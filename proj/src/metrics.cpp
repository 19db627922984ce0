#include "d3sr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <sstream>

#include "d3sr/container.hpp"
#include "d3sr/dataio.hpp"
#include "d3sr/errors.hpp"
#include "d3sr/image_io.hpp"
#include "d3sr/imageproc.hpp"
#include "d3sr/thread_pool.hpp"

namespace fs = std::filesystem;

namespace d3sr {

Tensor<float> rgb_to_y(const Tensor<float>& x) {
    if (x.rank() != 3 || x.dim(0) != 3) throw std::invalid_argument("rgb_to_y: expects (3,H,W)");
    const int H = x.dim(1), W = x.dim(2);
    Tensor<float> y({1, H, W});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            y.at3(0, i, j) = static_cast<float>(0.299 * x.at3(0, i, j) + 0.587 * x.at3(1, i, j) +
                                                0.114 * x.at3(2, i, j));
    return y;
}

double psnr_y(const Tensor<float>& x, const Tensor<float>& y) {
    require_same_shape(x, y, "psnr_y");
    const Tensor<float> xy = rgb_to_y(x), yy = rgb_to_y(y);
    double mse = 0.0;
    for (int64_t i = 0; i < xy.numel(); ++i) {
        const double d = static_cast<double>(xy[i]) - yy[i];
        mse += d * d;
    }
    mse /= static_cast<double>(xy.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim_y(const Tensor<float>& x, const Tensor<float>& y) {
    require_same_shape(x, y, "ssim_y");
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    const Tensor<float> xt = rgb_to_y(x), yt = rgb_to_y(y);
    const int H = xt.dim(1), W = xt.dim(2);
    if (H < kWin || W < kWin)
        throw std::invalid_argument("ssim_y: image smaller than the 11x11 window");

    double kernel[kWin];
    double ksum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - (kWin - 1) / 2.0;
        kernel[i] = std::exp(-0.5 * d * d / (kSigma * kSigma));
        ksum += kernel[i];
    }
    for (double& k : kernel) k /= ksum;

    double total = 0.0;
    int64_t count = 0;
    for (int oy = 0; oy + kWin <= H; ++oy) {
        for (int ox = 0; ox + kWin <= W; ++ox) {
            double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
            for (int i = 0; i < kWin; ++i)
                for (int j = 0; j < kWin; ++j) {
                    const double w = kernel[i] * kernel[j];
                    const double a = xt.at3(0, oy + i, ox + j);
                    const double b = yt.at3(0, oy + i, ox + j);
                    mx += w * a;
                    my += w * b;
                    mxx += w * a * a;
                    myy += w * b * b;
                    mxy += w * a * b;
                }
            const double vx = mxx - mx * mx;
            const double vy = myy - my * my;
            const double cxy = mxy - mx * my;
            total += ((2 * mx * my + kC1) * (2 * cxy + kC2)) /
                     ((mx * mx + my * my + kC1) * (vx + vy + kC2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

void MetricReport::compute_means() {
    mean_psnr = mean_ssim = mean_dists = 0.0;
    if (rows.empty()) return;
    for (const auto& r : rows) {
        mean_psnr += r.psnr;
        mean_ssim += r.ssim;
        mean_dists += r.dists;
    }
    mean_psnr /= static_cast<double>(rows.size());
    mean_ssim /= static_cast<double>(rows.size());
    mean_dists /= static_cast<double>(rows.size());
}

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "image,psnr_y,ssim_y,dists\n";
    for (const auto& r : rows)
        os << r.image << "," << r.psnr << "," << r.ssim << "," << r.dists << "\n";
    os << "mean," << mean_psnr << "," << mean_ssim << "," << mean_dists << "\n";
    return os.str();
}

std::string MetricReport::summary() const {
    std::ostringstream os;
    os.precision(6);
    os << "dataset: " << dataset_id << "\n"
       << "checkpoint: " << checkpoint_id << "\n"
       << "images: " << rows.size() << "\n"
       << "mean PSNR-Y: " << mean_psnr << " dB\n"
       << "mean SSIM-Y: " << mean_ssim << "\n"
       << "mean DISTS: " << mean_dists << "\n";
    return os.str();
}

SrFn identity_stub() {
    return [](const Tensor<float>&, const Tensor<float>& hr) { return hr; };
}

SrFn bicubic_stub() {
    return [](const Tensor<float>& lr, const Tensor<float>& hr) {
        return clamp01(resize_image(lr, hr.dim(1), hr.dim(2), ResizeMode::bicubic));
    };
}

SrFn nearest_stub() {
    return [](const Tensor<float>& lr, const Tensor<float>& hr) {
        return resize_image(lr, hr.dim(1), hr.dim(2), ResizeMode::nearest);
    };
}

int env_worker_cap() {
    const char* env = std::getenv("D3SR_NUM_WORKERS");
    if (!env) return ThreadPool::default_threads();
    const int v = std::atoi(env);
    return v >= 1 ? v : 1;
}

MetricReport evaluate_dataset(const SrFn& sr, const std::string& pair_dir,
                              const FeatureExtractor<float>& ex,
                              const std::string& checkpoint_id) {
    const std::string lr_dir = pair_dir + "/lr";
    const std::string hr_dir = pair_dir + "/hr";
    if (!fs::is_directory(hr_dir)) throw data_error("missing ground-truth folder: " + hr_dir);
    if (!fs::is_directory(lr_dir)) throw data_error("missing input folder: " + lr_dir);
    const Manifest hr_manifest = build_manifest(hr_dir);

    MetricReport report;
    report.dataset_id = pair_dir + "#" + std::to_string(hr_manifest.digest());
    report.checkpoint_id = checkpoint_id;
    report.rows.resize(hr_manifest.entries.size());

    std::vector<std::string> errors(hr_manifest.entries.size());
    const int n = static_cast<int>(hr_manifest.entries.size());
    // Rows are indexed and filled in a plain loop; the heavy inner work
    // (convolutions) already runs on the global pool.
    for (int i = 0; i < n; ++i) {
        const auto& entry = hr_manifest.entries[static_cast<size_t>(i)];
        try {
            const Tensor<float> hr = read_png(hr_dir + "/" + entry.name);
            const std::string lr_path = lr_dir + "/" + entry.name;
            if (!fs::exists(lr_path)) throw data_error("missing LR input: " + lr_path);
            const Tensor<float> lr = read_png(lr_path);
            const Tensor<float> out = sr(lr, hr);
            if (!out.same_shape(hr))
                throw data_error("resolution mismatch for " + entry.name + ": got " +
                                 shape_str(out.shape) + ", want " + shape_str(hr.shape));
            MetricRow row;
            row.image = entry.name;
            row.psnr = psnr_y(out, hr);
            row.ssim = ssim_y(out, hr);
            row.dists = dists(out, hr, ex);
            report.rows[static_cast<size_t>(i)] = std::move(row);
        } catch (const std::exception& e) {
            errors[static_cast<size_t>(i)] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw data_error(e);
    report.compute_means();
    return report;
}

FeatureExtractor<float> extractor_from_container(const Container& c) {
    FeatureExtractor<float> ex;
    const int stages = c.meta.at("stages").get<int>();
    ex.c1 = c.meta.value("c1", ex.c1);
    ex.c2 = c.meta.value("c2", ex.c2);
    ex.alpha = c.meta.at("alpha").get<std::vector<double>>();
    ex.beta = c.meta.at("beta").get<std::vector<double>>();
    for (int i = 0; i < stages; ++i) {
        FeatureStage<float> st;
        const std::string key = "stage" + std::to_string(i);
        if (c.has(key + ".weight")) {
            st.conv_w = c.get_f32(key + ".weight");
            st.conv_b = c.get_f32(key + ".bias");
            st.pool = c.meta.at("pool").at(static_cast<size_t>(i)).get<bool>();
        }
        ex.stages.push_back(std::move(st));
    }
    ex.validate();
    return ex;
}

Container extractor_to_container(const FeatureExtractor<float>& ex) {
    Container c;
    c.meta["kind"] = "feature_extractor";
    c.meta["stages"] = static_cast<int>(ex.stages.size());
    c.meta["alpha"] = ex.alpha;
    c.meta["beta"] = ex.beta;
    c.meta["c1"] = ex.c1;
    c.meta["c2"] = ex.c2;
    nlohmann::json pool = nlohmann::json::array();
    for (size_t i = 0; i < ex.stages.size(); ++i) {
        pool.push_back(ex.stages[i].pool);
        if (!ex.stages[i].conv_w.empty()) {
            const std::string key = "stage" + std::to_string(i);
            c.put_f32(key + ".weight", ex.stages[i].conv_w);
            c.put_f32(key + ".bias", ex.stages[i].conv_b);
        }
    }
    c.meta["pool"] = pool;
    return c;
}

}  // namespace d3sr
