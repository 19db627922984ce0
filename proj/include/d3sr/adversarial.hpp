#pragma once

#include "d3sr/autodiff.hpp"
#include "d3sr/rng.hpp"

namespace d3sr {

// Scores are clamped to [eps, 1-eps] before logs.
inline constexpr double kScoreClampEps = 1e-7;

// Uniform over {0,...,T-1}.
inline int sample_timestep(Rng& rng, int T) {
    if (T < 1) throw std::invalid_argument("sample_timestep: T must be >= 1");
    return rng.uniform_int(T);
}

// -mean(log s) over every score in the batch of maps.
template <typename T>
Var generator_adv_loss_op(Graph<T>& g, Var fake_scores) {
    if (g.val(fake_scores).numel() == 0)
        throw std::invalid_argument("generator_adv_loss: empty batch");
    Var c = clamp(g, fake_scores, kScoreClampEps, 1.0 - kScoreClampEps);
    return neg(g, mean_all(g, log_op(g, c)));
}

// -mean(log(1 - fake)) - mean(log real).
template <typename T>
Var discriminator_loss_op(Graph<T>& g, Var fake_scores, Var real_scores) {
    if (g.val(fake_scores).numel() == 0 || g.val(real_scores).numel() == 0)
        throw std::invalid_argument("discriminator_loss: empty batch");
    Var cf = clamp(g, fake_scores, kScoreClampEps, 1.0 - kScoreClampEps);
    Var cr = clamp(g, real_scores, kScoreClampEps, 1.0 - kScoreClampEps);
    Var one_minus_fake = add_scalar(g, neg(g, cf), 1.0);
    Var lf = neg(g, mean_all(g, log_op(g, one_minus_fake)));
    Var lr = neg(g, mean_all(g, log_op(g, cr)));
    return add(g, lf, lr);
}

template <typename T>
double generator_adv_loss(const Tensor<T>& fake_scores) {
    Graph<T> g;
    Var v = generator_adv_loss_op(g, g.constant(fake_scores));
    return static_cast<double>(g.val(v)[0]);
}

template <typename T>
double discriminator_loss(const Tensor<T>& fake_scores, const Tensor<T>& real_scores) {
    Graph<T> g;
    Var v = discriminator_loss_op(g, g.constant(fake_scores), g.constant(real_scores));
    return static_cast<double>(g.val(v)[0]);
}

inline double generator_total_loss(double spatial, double adv, double lambda1) {
    if (lambda1 < 0) throw std::invalid_argument("generator_total_loss: lambda1 must be >= 0");
    return spatial + lambda1 * adv;
}

}  // namespace d3sr
