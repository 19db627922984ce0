#pragma once

#include <functional>
#include <string>
#include <vector>

#include "d3sr/perceptual.hpp"
#include "d3sr/tensor.hpp"

namespace d3sr {

// BT.601 full-range luma from (3,H,W) RGB in [0,1].
Tensor<float> rgb_to_y(const Tensor<float>& x);

// 10*log10(1/MSE_Y); +inf for identical images.
double psnr_y(const Tensor<float>& x, const Tensor<float>& y);

// Mean local SSIM on the Y channel: 11x11 Gaussian window (sigma 1.5),
// C1=(0.01)^2 and C2=(0.03)^2 for unit dynamic range, valid positions only.
double ssim_y(const Tensor<float>& x, const Tensor<float>& y);

struct MetricRow {
    std::string image;
    double psnr = 0.0;
    double ssim = 0.0;
    double dists = 0.0;
};

struct MetricReport {
    std::string dataset_id;     // manifest digest or path
    std::string checkpoint_id;  // checkpoint path or stub name
    std::vector<MetricRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_dists = 0.0;

    void compute_means();
    std::string to_csv() const;
    std::string summary() const;
};

// SR callback: (x_L, x_H ground truth) -> restored image. The ground truth is
// passed so reference stubs (identity) can be expressed; real generators must
// ignore it.
using SrFn = std::function<Tensor<float>(const Tensor<float>& x_l, const Tensor<float>& x_h)>;

SrFn identity_stub();
SrFn bicubic_stub();
SrFn nearest_stub();

// Runs the callback over paired lr/ and hr/ subdirectories (paired by file
// name) and fills a report. Per-image work may run in parallel
// (D3SR_NUM_WORKERS caps it); rows are indexed, so the report is
// deterministic.
MetricReport evaluate_dataset(const SrFn& sr, const std::string& pair_dir,
                              const FeatureExtractor<float>& ex,
                              const std::string& checkpoint_id);

// Extractor <-> container (optional externally converted weights).
struct Container;
FeatureExtractor<float> extractor_from_container(const Container& c);
Container extractor_to_container(const FeatureExtractor<float>& ex);

int env_worker_cap();

}  // namespace d3sr
