#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "d3sr/nn_ops.hpp"
#include "d3sr/rng.hpp"

namespace d3sr {

// Largest possible Sobel gradient magnitude on [0,1] inputs; used to map edge
// maps back into [0,1] before they are scored.
inline constexpr double kSobelMagnitudeMax = 5.656854249492381;  // 4*sqrt(2)

namespace detail {

// Block-diagonal (C,C,3,3) weight holding one 3x3 kernel per channel, so a
// dense convolution applies the kernel channelwise.
template <typename T>
Tensor<T> channelwise_kernel(int channels, const double k[3][3]) {
    Tensor<T> w({channels, channels, 3, 3});
    for (int c = 0; c < channels; ++c)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                w.data[((static_cast<size_t>(c) * channels + c) * 3 + i) * 3 + j] =
                    static_cast<T>(k[i][j]);
    return w;
}

inline constexpr double kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
inline constexpr double kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

}  // namespace detail

// Per-channel Sobel gradient magnitude, cross-correlation with replicate
// padding (same output size). Constant regions map to exactly zero.
template <typename T>
Var sobel_magnitude_op(Graph<T>& g, Var x) {
    const auto& xs = g.val(x).shape;
    if (xs.size() != 4) throw std::invalid_argument("sobel: expects (N,C,H,W)");
    const int C = xs[1];
    Var xp = replicate_pad(g, x, 1);
    Var wx = g.constant(detail::channelwise_kernel<T>(C, detail::kSobelX));
    Var wy = g.constant(detail::channelwise_kernel<T>(C, detail::kSobelY));
    Var gx = conv2d(g, xp, wx, Var{}, 1, 0);
    Var gy = conv2d(g, xp, wy, Var{}, 1, 0);
    return sqrt_guarded(g, add(g, mul(g, gx, gx), mul(g, gy, gy)));
}

template <typename T>
Tensor<T> sobel_magnitude(const Tensor<T>& x) {
    if (x.rank() != 3 || x.numel() == 0) throw std::invalid_argument("sobel: empty image");
    if (!x.all_finite()) throw std::invalid_argument("sobel: non-finite input");
    Graph<T> g;
    Var xv = g.constant(Tensor<T>{{1, x.dim(0), x.dim(1), x.dim(2)}, 0});
    g.mutable_val(xv).data = x.data;
    Var m = sobel_magnitude_op(g, xv);
    Tensor<T> out = g.val(m);
    out.shape = {out.dim(1), out.dim(2), out.dim(3)};
    return out;
}

// ---------------------------------------------------------------------------
// Structure/texture similarity over a fixed feature pyramid.
//
// Stage 0 is the identity (raw pixels); later stages are frozen 3x3
// convolutions with ReLU followed by 2x average pooling. Per-stage weights
// (alpha_i, beta_i) scale the structure and texture terms and are normalized
// to sum to one over all stages and both terms.
// ---------------------------------------------------------------------------

template <typename T>
struct FeatureStage {
    Tensor<T> conv_w;  // empty => identity stage
    Tensor<T> conv_b;
    bool pool = false;
};

template <typename T>
struct FeatureExtractor {
    std::vector<FeatureStage<T>> stages;
    std::vector<double> alpha;
    std::vector<double> beta;
    double c1 = 1e-6;
    double c2 = 1e-6;

    size_t stage_count() const { return stages.size(); }

    void normalize_weights() {
        double s = 0.0;
        for (double a : alpha) s += a;
        for (double b : beta) s += b;
        if (s <= 0.0) throw std::invalid_argument("extractor: weights must have positive sum");
        for (double& a : alpha) a /= s;
        for (double& b : beta) b /= s;
    }

    void validate() const {
        if (stages.empty() || alpha.size() != stages.size() || beta.size() != stages.size())
            throw std::invalid_argument("extractor: stage/weight count mismatch");
        for (double a : alpha)
            if (a < 0) throw std::invalid_argument("extractor: negative stage weight");
        for (double b : beta)
            if (b < 0) throw std::invalid_argument("extractor: negative stage weight");
    }

    // Raw pixels only; one structure and one texture term, equally weighted.
    static FeatureExtractor identity_only() {
        FeatureExtractor ex;
        ex.stages.push_back({});
        ex.alpha = {0.5};
        ex.beta = {0.5};
        return ex;
    }

    // Identity plus three seeded conv stages (3->16->32->64), uniform weights.
    static FeatureExtractor seeded_default(uint64_t seed = 7) {
        FeatureExtractor ex;
        Rng rng(derive_seed(seed, /*stream=*/0xfeadULL));
        ex.stages.push_back({});
        int cin = 3;
        for (int cout : {16, 32, 64}) {
            FeatureStage<T> st;
            const double std = std::sqrt(2.0 / (static_cast<double>(cin) * 9.0));
            st.conv_w = rng.normal_tensor<T>({cout, cin, 3, 3}, 0.0, std);
            st.conv_b = Tensor<T>({cout});
            st.pool = true;
            ex.stages.push_back(std::move(st));
            cin = cout;
        }
        const double w = 1.0 / (2.0 * ex.stages.size());
        ex.alpha.assign(ex.stages.size(), w);
        ex.beta.assign(ex.stages.size(), w);
        return ex;
    }
};

namespace detail {

// Feature maps for every stage, coarsest last.
template <typename T>
std::vector<Var> extractor_features(Graph<T>& g, const FeatureExtractor<T>& ex, Var x) {
    std::vector<Var> feats;
    Var h = x;
    for (size_t i = 0; i < ex.stages.size(); ++i) {
        const auto& st = ex.stages[i];
        if (!st.conv_w.empty()) {
            if (g.val(h).dim(1) != st.conv_w.dim(1))
                throw std::invalid_argument("extractor: stage input channel mismatch");
            Var w = g.constant(st.conv_w);
            Var b = g.constant(st.conv_b);
            h = relu(g, conv2d(g, h, w, b, 1, 1));
            if (st.pool) h = avg_pool2(g, h);
        }
        feats.push_back(h);
    }
    return feats;
}

}  // namespace detail

// Per-sample similarity scores (N). score = 1 - sum_i [a_i*l_i + b_i*s_i]
// with l the mean-statistics term and s the (co)variance term, both averaged
// over channels within a stage. Spatial statistics are population statistics
// over each full feature map.
template <typename T>
Var dists_items_op(Graph<T>& g, Var x, Var y, const FeatureExtractor<T>& ex) {
    require_same_shape(g.val(x), g.val(y), "dists");
    ex.validate();
    const int N = g.val(x).dim(0);
    auto fx = detail::extractor_features(g, ex, x);
    auto fy = detail::extractor_features(g, ex, y);

    Var acc;
    for (size_t i = 0; i < ex.stages.size(); ++i) {
        Var mx = mean_hw(g, fx[i]);
        Var my = mean_hw(g, fy[i]);
        Var mxx = mean_hw(g, mul(g, fx[i], fx[i]));
        Var myy = mean_hw(g, mul(g, fy[i], fy[i]));
        Var mxy = mean_hw(g, mul(g, fx[i], fy[i]));
        Var vx = sub(g, mxx, mul(g, mx, mx));
        Var vy = sub(g, myy, mul(g, my, my));
        Var cxy = sub(g, mxy, mul(g, mx, my));

        Var l = div(g, add_scalar(g, scale(g, mul(g, mx, my), 2.0), ex.c1),
                    add_scalar(g, add(g, mul(g, mx, mx), mul(g, my, my)), ex.c1));
        Var s = div(g, add_scalar(g, scale(g, cxy, 2.0), ex.c2),
                    add_scalar(g, add(g, vx, vy), ex.c2));

        Var term = add(g, scale(g, mean_cols(g, l), ex.alpha[i]),
                       scale(g, mean_cols(g, s), ex.beta[i]));
        acc = acc.valid() ? add(g, acc, term) : term;
    }
    Var one = g.constant(Tensor<T>({N}, T(1)));
    return sub(g, one, acc);
}

template <typename T>
Var dists_op(Graph<T>& g, Var x, Var y, const FeatureExtractor<T>& ex) {
    return mean_all(g, dists_items_op(g, x, y, ex));
}

// dists(x,y) + dists(S(x)/max, S(y)/max), per sample.
template <typename T>
Var ea_dists_items_op(Graph<T>& g, Var x, Var y, const FeatureExtractor<T>& ex) {
    Var base = dists_items_op(g, x, y, ex);
    Var exm = scale(g, sobel_magnitude_op(g, x), 1.0 / kSobelMagnitudeMax);
    Var eym = scale(g, sobel_magnitude_op(g, y), 1.0 / kSobelMagnitudeMax);
    return add(g, base, dists_items_op(g, exm, eym, ex));
}

template <typename T>
Var ea_dists_op(Graph<T>& g, Var x, Var y, const FeatureExtractor<T>& ex) {
    return mean_all(g, ea_dists_items_op(g, x, y, ex));
}

// Per-sample spatial loss: MSE + lambda2 * EA-DISTS.
template <typename T>
Var spatial_loss_items_op(Graph<T>& g, Var x_hat, Var x_h, double lambda2,
                          const FeatureExtractor<T>& ex) {
    if (lambda2 < 0) throw std::invalid_argument("spatial_loss: lambda2 must be >= 0");
    Var d = sub(g, x_hat, x_h);
    Var per_item_mse = mean_cols(g, mean_hw(g, mul(g, d, d)));
    if (lambda2 == 0.0) return per_item_mse;
    return add(g, per_item_mse, scale(g, ea_dists_items_op(g, x_hat, x_h, ex), lambda2));
}

template <typename T>
Var spatial_loss_op(Graph<T>& g, Var x_hat, Var x_h, double lambda2,
                    const FeatureExtractor<T>& ex) {
    return mean_all(g, spatial_loss_items_op(g, x_hat, x_h, lambda2, ex));
}

// ---------------------------------------------------------------------------
// Plain single-image wrappers
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Var image_const(Graph<T>& g, const Tensor<T>& x) {
    if (x.rank() != 3) throw std::invalid_argument("expects (C,H,W) image");
    Var v = g.constant(Tensor<T>{{1, x.dim(0), x.dim(1), x.dim(2)}, 0});
    g.mutable_val(v).data = x.data;
    return v;
}

}  // namespace detail

template <typename T>
double dists(const Tensor<T>& x, const Tensor<T>& y, const FeatureExtractor<T>& ex) {
    require_same_shape(x, y, "dists");
    Graph<T> g;
    Var s = dists_op(g, detail::image_const(g, x), detail::image_const(g, y), ex);
    return static_cast<double>(g.val(s)[0]);
}

template <typename T>
double ea_dists(const Tensor<T>& x, const Tensor<T>& y, const FeatureExtractor<T>& ex) {
    require_same_shape(x, y, "ea_dists");
    for (const Tensor<T>* im : {&x, &y})
        for (const T& v : im->data)
            if (!(v >= T(0) && v <= T(1)))
                throw std::invalid_argument("ea_dists: pixel values must lie in [0,1]");
    Graph<T> g;
    Var s = ea_dists_op(g, detail::image_const(g, x), detail::image_const(g, y), ex);
    return static_cast<double>(g.val(s)[0]);
}

template <typename T>
double spatial_loss(const Tensor<T>& x_hat, const Tensor<T>& x_h, double lambda2,
                    const FeatureExtractor<T>& ex) {
    require_same_shape(x_hat, x_h, "spatial_loss");
    Graph<T> g;
    Var s = spatial_loss_op(g, detail::image_const(g, x_hat), detail::image_const(g, x_h), lambda2,
                            ex);
    return static_cast<double>(g.val(s)[0]);
}

}  // namespace d3sr
