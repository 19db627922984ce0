#pragma once

#include <string>
#include <vector>

#include "d3sr/params.hpp"
#include "d3sr/schedule.hpp"

namespace d3sr {

// ---------------------------------------------------------------------------
// Latent codec: 3-level convolutional autoencoder, spatial factor 4.
// Encoder output is multiplied by latent_scale (calibrated after pretraining
// so corpus latents are roughly unit variance); decode divides it back out.
// ---------------------------------------------------------------------------

struct CodecConfig {
    int base_ch = 16;
    int latent_ch = 4;
    int factor = 4;  // fixed by the two stride-2 stages
};

template <typename T>
struct CodecNet {
    CodecConfig cfg;
    std::string prefix = "codec.";
    double latent_scale = 1.0;

    void init_params(ParamStore<T>& store, Rng& rng) const {
        const int w = cfg.base_ch, c = cfg.latent_ch;
        add_conv(store, rng, prefix + "enc.conv_in", w, 3, 3);
        add_conv(store, rng, prefix + "enc.down1", 2 * w, w, 3);
        add_conv(store, rng, prefix + "enc.conv1", 2 * w, 2 * w, 3);
        add_conv(store, rng, prefix + "enc.down2", 4 * w, 2 * w, 3);
        add_conv(store, rng, prefix + "enc.conv2", 4 * w, 4 * w, 3);
        add_conv(store, rng, prefix + "enc.conv_out", c, 4 * w, 3);
        add_conv(store, rng, prefix + "dec.conv_in", 4 * w, c, 3);
        add_conv(store, rng, prefix + "dec.conv0", 4 * w, 4 * w, 3);
        add_conv(store, rng, prefix + "dec.up1", 2 * w, 4 * w, 3);
        add_conv(store, rng, prefix + "dec.conv1", 2 * w, 2 * w, 3);
        add_conv(store, rng, prefix + "dec.up2", w, 2 * w, 3);
        add_conv(store, rng, prefix + "dec.conv2", w, w, 3);
        add_conv(store, rng, prefix + "dec.conv_out", 3, w, 3);
    }

    // (N,3,H,W) -> (N,c,H/4,W/4)
    Var encode_op(Binding<T>& b, Var x) const {
        Graph<T>& g = b.graph();
        const auto& xs = g.val(x).shape;
        if (xs.size() != 4 || xs[1] != 3)
            throw std::invalid_argument("encode: expects (N,3,H,W)");
        if (xs[2] % cfg.factor != 0 || xs[3] % cfg.factor != 0)
            throw std::invalid_argument("encode: dimensions must be divisible by " +
                                        std::to_string(cfg.factor));
        Var h = silu(g, conv(b, prefix + "enc.conv_in", x, 1));
        h = silu(g, conv(b, prefix + "enc.down1", h, 2));
        h = silu(g, conv(b, prefix + "enc.conv1", h, 1));
        h = silu(g, conv(b, prefix + "enc.down2", h, 2));
        h = silu(g, conv(b, prefix + "enc.conv2", h, 1));
        h = conv(b, prefix + "enc.conv_out", h, 1);
        return scale(g, h, latent_scale);
    }

    // (N,c,h,w) -> (N,3,4h,4w), pixels in (0,1) via sigmoid
    Var decode_op(Binding<T>& b, Var z) const {
        Graph<T>& g = b.graph();
        const auto& zs = g.val(z).shape;
        if (zs.size() != 4 || zs[1] != cfg.latent_ch)
            throw std::invalid_argument("decode: expects (N," + std::to_string(cfg.latent_ch) +
                                        ",h,w)");
        Var h = scale(g, z, 1.0 / latent_scale);
        h = silu(g, conv(b, prefix + "dec.conv_in", h, 1));
        h = silu(g, conv(b, prefix + "dec.conv0", h, 1));
        h = upsample_nearest2(g, h);
        h = silu(g, conv(b, prefix + "dec.up1", h, 1));
        h = silu(g, conv(b, prefix + "dec.conv1", h, 1));
        h = upsample_nearest2(g, h);
        h = silu(g, conv(b, prefix + "dec.up2", h, 1));
        h = silu(g, conv(b, prefix + "dec.conv2", h, 1));
        h = conv(b, prefix + "dec.conv_out", h, 1);
        return sigmoid(g, h);
    }

    static void add_conv(ParamStore<T>& store, Rng& rng, const std::string& name, int cout,
                         int cin, int k) {
        const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
        store.add(name + ".weight", rng.normal_tensor<T>({cout, cin, k, k}, 0.0, std));
        store.add(name + ".bias", Tensor<T>({cout}));
    }

private:
    static Var conv(Binding<T>& b, const std::string& name, Var x, int stride) {
        return conv2d(b.graph(), x, b.weight(name + ".weight"), b(name + ".bias"), stride, 1);
    }
};

// Plain single-image wrappers.
template <typename T>
Tensor<T> codec_encode(const CodecNet<T>& codec, ParamStore<T>& store, const Tensor<T>& x) {
    if (x.rank() != 3) throw std::invalid_argument("encode: expects (3,H,W)");
    for (const T& v : x.data)
        if (!(v >= T(0) && v <= T(1)))
            throw std::invalid_argument("encode: pixel values must lie in [0,1]");
    Graph<T> g;
    Binding<T> b(g, store);
    Var xv = g.constant(Tensor<T>{{1, x.dim(0), x.dim(1), x.dim(2)}, 0});
    g.mutable_val(xv).data = x.data;
    Var z = codec.encode_op(b, xv);
    Tensor<T> out = g.val(z);
    out.shape = {out.dim(1), out.dim(2), out.dim(3)};
    return out;
}

template <typename T>
Tensor<T> codec_decode(const CodecNet<T>& codec, ParamStore<T>& store, const Tensor<T>& z) {
    if (z.rank() != 3) throw std::invalid_argument("decode: expects (c,h,w)");
    Graph<T> g;
    Binding<T> b(g, store);
    Var zv = g.constant(Tensor<T>{{1, z.dim(0), z.dim(1), z.dim(2)}, 0});
    g.mutable_val(zv).data = z.data;
    Var x = codec.decode_op(b, zv);
    Tensor<T> out = g.val(x);
    out.shape = {out.dim(1), out.dim(2), out.dim(3)};
    return out;
}

// ---------------------------------------------------------------------------
// Denoiser UNet. Two stride-2 stages, two middle residual blocks; the middle
// activation is exposed as a tap of shape (ch2, h/4, w/4) for a (latent) input
// of (latent_ch, h, w).
// ---------------------------------------------------------------------------

struct UNetConfig {
    int ch0 = 64, ch1 = 128, ch2 = 256;
    int latent_ch = 4;
    int t_embed_dim = 128;
    int t_hidden = 256;
    int gn_groups = 32;

    static UNetConfig preset(const std::string& name) {
        UNetConfig c;
        if (name == "base") {
            c.ch0 = 64;
            c.ch1 = 128;
            c.ch2 = 256;
        } else if (name == "large") {
            c.ch0 = 96;
            c.ch1 = 192;
            c.ch2 = 384;
        } else {
            throw config_error("disc_preset", "unknown preset '" + name + "'");
        }
        return c;
    }
};

template <typename T>
struct UNet {
    UNetConfig cfg;
    std::string prefix = "denoiser.";
    mutable int64_t eval_count = 0;  // full forward passes (one-step audit)

    struct Out {
        Var out;     // invalid for trunk-only passes
        Var middle;  // middle-block activation tap
    };

    void init_params(ParamStore<T>& store, Rng& rng, bool trunk_only = false) const {
        const int c0 = cfg.ch0, c1 = cfg.ch1, c2 = cfg.ch2;
        const double tstd = std::sqrt(2.0 / cfg.t_embed_dim);
        store.add(prefix + "time.fc1.weight",
                  rng.normal_tensor<T>({cfg.t_hidden, cfg.t_embed_dim}, 0.0, tstd));
        store.add(prefix + "time.fc1.bias", Tensor<T>({cfg.t_hidden}));
        store.add(prefix + "time.fc2.weight",
                  rng.normal_tensor<T>({cfg.t_hidden, cfg.t_hidden}, 0.0,
                                       std::sqrt(2.0 / cfg.t_hidden)));
        store.add(prefix + "time.fc2.bias", Tensor<T>({cfg.t_hidden}));

        CodecNet<T>::add_conv(store, rng, prefix + "conv_in", c0, cfg.latent_ch, 3);
        add_resblock(store, rng, prefix + "down1.res", c0, c0);
        CodecNet<T>::add_conv(store, rng, prefix + "down1.down", c1, c0, 3);
        add_resblock(store, rng, prefix + "down2.res", c1, c1);
        CodecNet<T>::add_conv(store, rng, prefix + "down2.down", c2, c1, 3);
        add_resblock(store, rng, prefix + "mid.res1", c2, c2);
        add_resblock(store, rng, prefix + "mid.res2", c2, c2);
        if (trunk_only) return;
        CodecNet<T>::add_conv(store, rng, prefix + "up1.conv", c1, c2, 3);
        add_resblock(store, rng, prefix + "up1.res", 2 * c1, c1);
        CodecNet<T>::add_conv(store, rng, prefix + "up2.conv", c0, c1, 3);
        add_resblock(store, rng, prefix + "up2.res", 2 * c0, c0);
        store.add(prefix + "out.gn.gamma", Tensor<T>({c0}, T(1)));
        store.add(prefix + "out.gn.beta", Tensor<T>({c0}));
        store.add(prefix + "out.conv.weight", Tensor<T>({cfg.latent_ch, c0, 3, 3}));
        store.add(prefix + "out.conv.bias", Tensor<T>({cfg.latent_ch}));
    }

    Out forward_op(Binding<T>& b, Var z, const std::vector<int>& ts, bool trunk_only = false) const {
        Graph<T>& g = b.graph();
        const auto& zs = g.val(z).shape;
        if (zs.size() != 4 || zs[1] != cfg.latent_ch)
            throw std::invalid_argument("unet: expects (N," + std::to_string(cfg.latent_ch) +
                                        ",h,w) input, got " + shape_str(zs));
        if (static_cast<int>(ts.size()) != zs[0])
            throw std::invalid_argument("unet: one timestep per batch item required");
        if (zs[2] % 4 != 0 || zs[3] % 4 != 0)
            throw std::invalid_argument("unet: latent dims must be divisible by 4");

        Var temb = time_embed_op(b, ts);
        Var h0 = conv(b, prefix + "conv_in", z, 1);
        Var s1 = resblock(b, prefix + "down1.res", h0, temb, cfg.ch0, cfg.ch0);
        Var h1 = conv(b, prefix + "down1.down", s1, 2);
        Var s2 = resblock(b, prefix + "down2.res", h1, temb, cfg.ch1, cfg.ch1);
        Var h2 = conv(b, prefix + "down2.down", s2, 2);
        Var m = resblock(b, prefix + "mid.res1", h2, temb, cfg.ch2, cfg.ch2);
        m = resblock(b, prefix + "mid.res2", m, temb, cfg.ch2, cfg.ch2);
        if (trunk_only) return {Var{}, m};
        ++eval_count;

        Var u1 = conv(b, prefix + "up1.conv", upsample_nearest2(g, m), 1);
        u1 = resblock(b, prefix + "up1.res", concat_ch(g, u1, s2), temb, 2 * cfg.ch1, cfg.ch1);
        Var u2 = conv(b, prefix + "up2.conv", upsample_nearest2(g, u1), 1);
        u2 = resblock(b, prefix + "up2.res", concat_ch(g, u2, s1), temb, 2 * cfg.ch0, cfg.ch0);
        Var o = group_norm(g, u2, b(prefix + "out.gn.gamma"), b(prefix + "out.gn.beta"),
                           cfg.gn_groups);
        o = conv(b, prefix + "out.conv", silu(g, o), 1);
        return {o, m};
    }

    // (N, t_hidden) from per-item integer timesteps.
    Var time_embed_op(Binding<T>& b, const std::vector<int>& ts) const {
        Graph<T>& g = b.graph();
        Var e = g.constant(timestep_embedding_batch<T>(ts, cfg.t_embed_dim));
        Var h = linear(g, e, b(prefix + "time.fc1.weight"), b(prefix + "time.fc1.bias"));
        return linear(g, silu(g, h), b(prefix + "time.fc2.weight"), b(prefix + "time.fc2.bias"));
    }

    void add_resblock(ParamStore<T>& store, Rng& rng, const std::string& name, int cin,
                      int cout) const {
        store.add(name + ".gn1.gamma", Tensor<T>({cin}, T(1)));
        store.add(name + ".gn1.beta", Tensor<T>({cin}));
        CodecNet<T>::add_conv(store, rng, name + ".conv1", cout, cin, 3);
        store.add(name + ".tproj.weight",
                  rng.normal_tensor<T>({cout, cfg.t_hidden}, 0.0, std::sqrt(2.0 / cfg.t_hidden)));
        store.add(name + ".tproj.bias", Tensor<T>({cout}));
        store.add(name + ".gn2.gamma", Tensor<T>({cout}, T(1)));
        store.add(name + ".gn2.beta", Tensor<T>({cout}));
        // second conv zero-initialized: a fresh block is the identity path
        store.add(name + ".conv2.weight", Tensor<T>({cout, cout, 3, 3}));
        store.add(name + ".conv2.bias", Tensor<T>({cout}));
        if (cin != cout) CodecNet<T>::add_conv(store, rng, name + ".shortcut", cout, cin, 1);
    }

    Var resblock(Binding<T>& b, const std::string& name, Var x, Var temb, int cin, int cout) const {
        Graph<T>& g = b.graph();
        Var h = group_norm(g, x, b(name + ".gn1.gamma"), b(name + ".gn1.beta"), cfg.gn_groups);
        h = conv(b, name + ".conv1", silu(g, h), 1);
        Var tp = linear(g, silu(g, temb), b(name + ".tproj.weight"), b(name + ".tproj.bias"));
        h = add_channel_bias(g, h, tp);
        h = group_norm(g, h, b(name + ".gn2.gamma"), b(name + ".gn2.beta"), cfg.gn_groups);
        h = conv(b, name + ".conv2", silu(g, h), 1);
        Var sc = x;
        if (cin != cout)
            sc = conv2d(g, x, b.weight(name + ".shortcut.weight"), b(name + ".shortcut.bias"), 1,
                        0);
        return add(g, h, sc);
    }

private:
    static Var conv(Binding<T>& b, const std::string& name, Var x, int stride) {
        return conv2d(b.graph(), x, b.weight(name + ".weight"), b(name + ".bias"), stride, 1);
    }
};

// ---------------------------------------------------------------------------
// Diffusion discriminator: UNet trunk (down + middle blocks) plus a per-patch
// two-layer perceptron head producing one realism probability per middle-block
// spatial location.
// ---------------------------------------------------------------------------

template <typename T>
struct DiscriminatorNet {
    UNet<T> trunk;  // prefix e.g. "disc."
    int head_hidden = 256;

    void init_params(ParamStore<T>& store, Rng& rng) const {
        trunk.init_params(store, rng, /*trunk_only=*/true);
        const int c2 = trunk.cfg.ch2;
        const double std = std::sqrt(2.0 / c2);
        store.add(head_prefix() + "fc1.weight",
                  rng.normal_tensor<T>({head_hidden, c2, 1, 1}, 0.0, std));
        store.add(head_prefix() + "fc1.bias", Tensor<T>({head_hidden}));
        // zero-initialized final layer: a fresh head scores everything 0.5
        store.add(head_prefix() + "fc2.weight", Tensor<T>({1, head_hidden, 1, 1}));
        store.add(head_prefix() + "fc2.bias", Tensor<T>({1}));
    }

    std::string head_prefix() const { return trunk.prefix + "head."; }

    // (N, latent_ch, h, w) -> (N, 1, h/4, w/4) scores in (0,1).
    Var score_map_op(Binding<T>& b, Var z_noisy, const std::vector<int>& ts) const {
        Graph<T>& g = b.graph();
        Var m = trunk.forward_op(b, z_noisy, ts, /*trunk_only=*/true).middle;
        Var h = conv2d(g, m, b(head_prefix() + "fc1.weight"), b(head_prefix() + "fc1.bias"), 1, 0);
        h = conv2d(g, silu(g, h), b(head_prefix() + "fc2.weight"), b(head_prefix() + "fc2.bias"),
                   1, 0);
        return sigmoid(g, h);
    }
};

// Plain per-image discriminate: (c,h,w) latent at timestep t -> (h',w') map.
template <typename T>
Tensor<T> discriminate(const DiscriminatorNet<T>& disc, ParamStore<T>& store,
                       const LoraSet<T>* lora, const Tensor<T>& z_noisy, int t, int T_total) {
    if (z_noisy.rank() != 3) throw std::invalid_argument("discriminate: expects (c,h,w)");
    if (t < 0 || t >= T_total) throw std::invalid_argument("discriminate: timestep out of range");
    Graph<T> g;
    Binding<T> b(g, store);
    b.set_lora(lora);
    Var zv = g.constant(Tensor<T>{{1, z_noisy.dim(0), z_noisy.dim(1), z_noisy.dim(2)}, 0});
    g.mutable_val(zv).data = z_noisy.data;
    Var s = disc.score_map_op(b, zv, {t});
    Tensor<T> out = g.val(s);
    out.shape = {out.dim(2), out.dim(3)};
    return out;
}

// ---------------------------------------------------------------------------
// One-step generator: encode, one denoiser evaluation, clean-latent
// prediction, decode.
// ---------------------------------------------------------------------------

template <typename T>
struct GeneratorOut {
    Var z_l;
    Var eps_hat;
    Var z_hat;
    Var x_hat;
};

// x must already be at target resolution (N,3,H,W).
template <typename T>
GeneratorOut<T> generator_forward_op(Binding<T>& b, const CodecNet<T>& codec, const UNet<T>& unet,
                                     Var x, int t_l, const NoiseSchedule& sched) {
    sched.require_t(t_l);
    Graph<T>& g = b.graph();
    GeneratorOut<T> out;
    out.z_l = codec.encode_op(b, x);
    const int n = g.val(x).dim(0);
    out.eps_hat = unet.forward_op(b, out.z_l, std::vector<int>(static_cast<size_t>(n), t_l)).out;
    out.z_hat = predict_clean_op(g, out.z_l, out.eps_hat, t_l, sched);
    out.x_hat = codec.decode_op(b, out.z_hat);
    return out;
}

// Plain single-image generate; exactly one denoiser evaluation.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> generate(const CodecNet<T>& codec, const UNet<T>& unet,
                                         ParamStore<T>& store, const LoraSet<T>* lora,
                                         const Tensor<T>& x_l_up, int t_l,
                                         const NoiseSchedule& sched) {
    if (x_l_up.rank() != 3) throw std::invalid_argument("generate: expects (3,H,W)");
    Graph<T> g;
    Binding<T> b(g, store);
    b.set_lora(lora);
    Var xv = g.constant(Tensor<T>{{1, x_l_up.dim(0), x_l_up.dim(1), x_l_up.dim(2)}, 0});
    g.mutable_val(xv).data = x_l_up.data;
    GeneratorOut<T> go = generator_forward_op(b, codec, unet, xv, t_l, sched);
    Tensor<T> x_hat = g.val(go.x_hat);
    x_hat.shape = {x_hat.dim(1), x_hat.dim(2), x_hat.dim(3)};
    Tensor<T> z_hat = g.val(go.z_hat);
    z_hat.shape = {z_hat.dim(1), z_hat.dim(2), z_hat.dim(3)};
    return {std::move(x_hat), std::move(z_hat)};
}

// All rank-4 ".weight" parameters under a prefix: the convolution weights a
// low-rank adapter set attaches to. The head namespace is excluded for
// discriminators (its perceptron is trained directly).
template <typename T>
std::vector<std::string> conv_weight_names(const ParamStore<T>& store, const std::string& prefix,
                                           const std::string& exclude_prefix = "") {
    std::vector<std::string> out;
    for (const auto& name : store.names_with_prefix(prefix)) {
        if (!exclude_prefix.empty() && name.rfind(exclude_prefix, 0) == 0) continue;
        if (name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0 &&
            store.get(name).rank() == 4)
            out.push_back(name);
    }
    return out;
}

}  // namespace d3sr
