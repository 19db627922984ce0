#pragma once

#include <vector>

#include "d3sr/autodiff.hpp"
#include "d3sr/tensor.hpp"

namespace d3sr {

// Per-timestep variance parameters of the forward process. Immutable once
// built; alpha_bar[t] is the exact running product of alpha[0..t].
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    bool valid_t(int t) const { return t >= 0 && t < T; }

    void require_t(int t) const {
        if (!valid_t(t))
            throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0," +
                                        std::to_string(T) + ")");
    }
};

inline NoiseSchedule build_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02) {
    if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
        throw std::invalid_argument("build_schedule: betas must lie in (0,1)");
    if (beta_start > beta_end)
        throw std::invalid_argument("build_schedule: beta_start must not exceed beta_end");

    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double running = 1.0;
    for (int t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        running *= s.alpha[t];
        s.alpha_bar[t] = running;
    }
    return s;
}

// z_t = sqrt(abar_t) * z + sqrt(1 - abar_t) * eps
template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& z, int t, const Tensor<T>& eps,
                          const NoiseSchedule& s) {
    s.require_t(t);
    require_same_shape(z, eps, "forward_diffuse");
    const double ab = s.alpha_bar[t];
    const T cs = static_cast<T>(std::sqrt(ab));
    const T cn = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out(z.shape);
    for (int64_t i = 0; i < z.numel(); ++i) out[i] = cs * z[i] + cn * eps[i];
    return out;
}

// z0 = (z_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)
template <typename T>
Tensor<T> predict_clean(const Tensor<T>& z_t, const Tensor<T>& eps_hat, int t,
                        const NoiseSchedule& s) {
    s.require_t(t);
    require_same_shape(z_t, eps_hat, "predict_clean");
    if (!z_t.all_finite() || !eps_hat.all_finite())
        throw std::invalid_argument("predict_clean: non-finite input");
    const double ab = s.alpha_bar[t];
    const T inv = static_cast<T>(1.0 / std::sqrt(ab));
    const T cn = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out(z_t.shape);
    for (int64_t i = 0; i < z_t.numel(); ++i) out[i] = (z_t[i] - cn * eps_hat[i]) * inv;
    return out;
}

// Graph builders for the same maps, used inside training objectives.
// Coefficients are baked from the (double-precision) schedule at build time;
// the graph path and the plain path agree to rounding error.
template <typename T>
Var forward_diffuse_op(Graph<T>& g, Var z, int t, Var eps, const NoiseSchedule& s) {
    s.require_t(t);
    const double ab = s.alpha_bar[t];
    return add(g, scale(g, z, std::sqrt(ab)), scale(g, eps, std::sqrt(1.0 - ab)));
}

template <typename T>
Var predict_clean_op(Graph<T>& g, Var z_t, Var eps_hat, int t, const NoiseSchedule& s) {
    s.require_t(t);
    const double ab = s.alpha_bar[t];
    return scale(g, sub(g, z_t, scale(g, eps_hat, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
}

// Batched forward diffusion with one timestep per item: coefficients expand to
// full-shape constants so the per-item scaling stays a plain elementwise op.
template <typename T>
Var forward_diffuse_batch_op(Graph<T>& g, Var z, const std::vector<int>& ts, Var eps,
                             const NoiseSchedule& s) {
    const auto& zs = g.val(z).shape;
    if (zs.size() != 4 || static_cast<size_t>(zs[0]) != ts.size())
        throw std::invalid_argument("forward_diffuse_batch_op: one timestep per item required");
    const int64_t stride = numel_of(zs) / zs[0];
    Tensor<T> cs(zs), cn(zs);
    for (size_t n = 0; n < ts.size(); ++n) {
        s.require_t(ts[n]);
        const double ab = s.alpha_bar[ts[n]];
        std::fill(cs.data.begin() + static_cast<int64_t>(n) * stride,
                  cs.data.begin() + static_cast<int64_t>(n + 1) * stride,
                  static_cast<T>(std::sqrt(ab)));
        std::fill(cn.data.begin() + static_cast<int64_t>(n) * stride,
                  cn.data.begin() + static_cast<int64_t>(n + 1) * stride,
                  static_cast<T>(std::sqrt(1.0 - ab)));
    }
    return add(g, mul(g, z, g.constant(std::move(cs))), mul(g, eps, g.constant(std::move(cn))));
}

}  // namespace d3sr
