#include "doctest.h"

#include "d3sr/networks.hpp"
#include "d3sr/trainer.hpp"
#include "d3sr/dataio.hpp"
#include "test_util.hpp"

using namespace d3sr;

namespace {

struct SmallNets {
    ParamStore<float> store;
    CodecNet<float> codec;
    UNet<float> unet;
    DiscriminatorNet<float> disc;

    SmallNets() {
        Rng rng(1234);
        codec.cfg.base_ch = 8;
        codec.init_params(store, rng);
        unet.cfg = UNetConfig{.ch0 = 16, .ch1 = 32, .ch2 = 48, .latent_ch = 4,
                              .t_embed_dim = 16, .t_hidden = 32, .gn_groups = 4};
        unet.prefix = "denoiser.";
        unet.init_params(store, rng);
        disc.trunk.cfg = unet.cfg;
        disc.trunk.prefix = "disc.";
        disc.head_hidden = 32;
        disc.init_params(store, rng);
    }
};

Tensor<float> rand_image(Rng& rng, int c, int h, int w) {
    Tensor<float> t({c, h, w});
    for (auto& v : t.data) v = static_cast<float>(rng.uniform());
    return t;
}

}  // namespace

TEST_CASE("encode/decode shape contracts") {
    SmallNets nets;
    Rng rng(5);
    const auto x = rand_image(rng, 3, 64, 64);
    const auto z = codec_encode(nets.codec, nets.store, x);
    CHECK(z.shape == std::vector<int>{4, 16, 16});
    const auto xr = codec_decode(nets.codec, nets.store, z);
    CHECK(xr.shape == std::vector<int>{3, 64, 64});
    for (const float v : xr.data) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("encode is deterministic and validates input") {
    SmallNets nets;
    Rng rng(6);
    const auto x = rand_image(rng, 3, 32, 32);
    const auto z1 = codec_encode(nets.codec, nets.store, x);
    const auto z2 = codec_encode(nets.codec, nets.store, x);
    CHECK(max_abs_diff(z1, z2) == 0.0f);

    CHECK_THROWS_AS(codec_encode(nets.codec, nets.store, rand_image(rng, 3, 30, 30)),
                    std::invalid_argument);
    Tensor<float> bad({3, 32, 32}, 1.5f);
    CHECK_THROWS_AS(codec_encode(nets.codec, nets.store, bad), std::invalid_argument);
}

TEST_CASE("unet preserves latent shape and exposes the middle tap") {
    SmallNets nets;
    Rng rng(7);
    Graph<float> g;
    Binding<float> b(g, nets.store);
    Tensor<float> z({2, 4, 16, 16});
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    auto out = nets.unet.forward_op(b, g.constant(z), {3, 9});
    CHECK(g.val(out.out).shape == std::vector<int>{2, 4, 16, 16});
    CHECK(g.val(out.middle).shape == std::vector<int>{2, 48, 4, 4});
}

TEST_CASE("generate: shape, one denoiser evaluation, finiteness") {
    SmallNets nets;
    Rng rng(8);
    const auto x = rand_image(rng, 3, 64, 64);
    const NoiseSchedule sched = build_schedule(1000);
    const int64_t before = nets.unet.eval_count;
    auto [x_hat, z_hat] = generate(nets.codec, nets.unet, nets.store, nullptr, x, 500, sched);
    CHECK(nets.unet.eval_count - before == 1);
    CHECK(x_hat.shape == std::vector<int>{3, 64, 64});
    CHECK(z_hat.shape == std::vector<int>{4, 16, 16});
    CHECK(x_hat.all_finite());
    CHECK_THROWS_AS(generate(nets.codec, nets.unet, nets.store, nullptr, x, 1000, sched),
                    std::invalid_argument);
}

TEST_CASE("a zero denoiser reduces generate to scaled encode-decode") {
    // fresh UNet has a zero-initialized output conv, so eps_hat == 0 and
    // z_hat = encode(x) / sqrt(alpha_bar)
    SmallNets nets;
    Rng rng(9);
    const auto x = rand_image(rng, 3, 32, 32);
    const NoiseSchedule sched = build_schedule(1000);
    const int t_l = 500;
    auto [x_hat, z_hat] = generate(nets.codec, nets.unet, nets.store, nullptr, x, t_l, sched);

    auto z = codec_encode(nets.codec, nets.store, x);
    for (auto& v : z.data) v = static_cast<float>(v / std::sqrt(sched.alpha_bar[t_l]));
    const auto want = codec_decode(nets.codec, nets.store, z);
    CHECK(max_abs_diff(z_hat, z) < 1e-5f);
    CHECK(max_abs_diff(x_hat, want) < 1e-5f);
}

TEST_CASE("fresh discriminator head scores exactly 0.5 everywhere") {
    SmallNets nets;
    Rng rng(10);
    Tensor<float> z({4, 16, 16});
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    const auto scores = discriminate(nets.disc, nets.store, nullptr, z, 123, 1000);
    CHECK(scores.shape == std::vector<int>{4, 4});
    for (const float s : scores.data) CHECK(s == 0.5f);
}

TEST_CASE("discriminator scores stay inside (0,1) and t-conditioning is live") {
    SmallNets nets;
    Rng rng(11);
    // one small gradient step on the head so the zero final layer moves
    Tensor<float> z_batch({2, 4, 16, 16});
    for (auto& v : z_batch.data) v = static_cast<float>(rng.normal());
    {
        Graph<float> g;
        Binding<float> b(g, nets.store);
        b.set_trainable([](const std::string& n) { return n.rfind("disc.head.", 0) == 0; });
        Var s = nets.disc.score_map_op(b, g.constant(z_batch), {100, 800});
        Var loss = generator_adv_loss_op(g, s);
        g.backward(loss);
        for (const auto& name : nets.store.names_with_prefix("disc.head.")) {
            Var v = b.var_for(name);
            REQUIRE(v.valid());
            const auto grad = g.grad_of(v);
            auto& p = nets.store.get(name);
            for (int64_t i = 0; i < p.numel(); ++i) p[i] -= 0.05f * grad[i];
        }
    }
    Tensor<float> z({4, 16, 16});
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    const auto s_lo = discriminate(nets.disc, nets.store, nullptr, z, 100, 1000);
    const auto s_hi = discriminate(nets.disc, nets.store, nullptr, z, 900, 1000);
    for (const float s : s_lo.data) {
        CHECK(s > 0.0f);
        CHECK(s < 1.0f);
    }
    CHECK(max_abs_diff(s_lo, s_hi) > 0.0f);
}

TEST_CASE("adapter attachment is the identity at initialization") {
    SmallNets nets;
    Rng rng(12);
    const auto x = rand_image(rng, 3, 32, 32);
    const auto base = codec_encode(nets.codec, nets.store, x);

    LoraSet<float> lora;
    lora.rank = 4;
    lora.alpha = 4.0;
    lora.prefix = "lora.t.";
    lora.attach(nets.store, conv_weight_names(nets.store, "codec.enc."), rng);

    // adapted forward equals the base forward bit for bit (B factors are zero)
    Graph<float> g;
    Binding<float> b(g, nets.store);
    b.set_lora(&lora);
    Var xv = g.constant(Tensor<float>{{1, 3, 32, 32}, 0});
    g.mutable_val(xv).data = x.data;
    Var z = nets.codec.encode_op(b, xv);
    Tensor<float> adapted = g.val(z);
    adapted.shape = base.shape;
    CHECK(max_abs_diff(adapted, base) == 0.0f);
}

TEST_CASE("adapter bookkeeping: parameter count, rank errors, capping") {
    SmallNets nets;
    Rng rng(13);
    SUBCASE("trainable parameter count is sum of r*(d_in + d_out)") {
        LoraSet<float> lora;
        lora.rank = 2;
        lora.prefix = "lora.c.";
        const std::vector<std::string> names = {"denoiser.down1.res.conv1.weight",
                                                "denoiser.down1.down.weight"};
        lora.attach(nets.store, names, rng);
        int64_t want = 0;
        for (const auto& n : names) {
            const auto& w = nets.store.get(n);
            const int d_out = w.dim(0);
            const int d_in = static_cast<int>(w.numel() / d_out);
            want += static_cast<int64_t>(lora.rank) * (d_in + d_out);
        }
        CHECK(lora.trainable_numel(nets.store) == want);
    }
    SUBCASE("rank exceeding a weight dimension is an error") {
        LoraSet<float> lora;
        lora.rank = 16;
        lora.prefix = "lora.e.";
        CHECK_THROWS_AS(lora.attach(nets.store, {"denoiser.out.conv.weight"}, rng),
                        std::invalid_argument);
    }
    SUBCASE("unknown attachment name is an error") {
        LoraSet<float> lora;
        lora.prefix = "lora.u.";
        CHECK_THROWS_AS(lora.attach(nets.store, {"denoiser.nope.weight"}, rng),
                        std::invalid_argument);
    }
    SUBCASE("capped attachment clamps to the weight dimension") {
        LoraSet<float> lora;
        lora.rank = 16;
        lora.prefix = "lora.k.";
        lora.attach(nets.store, {"denoiser.out.conv.weight"}, rng, /*cap_to_dims=*/true);
        CHECK(lora.rank_of("denoiser.out.conv.weight") == 4);
    }
}

TEST_CASE("conv weight name selection picks rank-4 weights only") {
    SmallNets nets;
    const auto names = conv_weight_names(nets.store, "disc.", "disc.head.");
    CHECK(!names.empty());
    for (const auto& n : names) {
        CHECK(nets.store.get(n).rank() == 4);
        CHECK(n.rfind("disc.head.", 0) != 0);
        CHECK(n.substr(n.size() - 7) == ".weight");
    }
    // gn affine and biases excluded
    for (const auto& n : names) CHECK(n.find(".gn") == std::string::npos);
}

TEST_CASE("codec pretraining reconstructs the toy corpus") {
    const std::string root = testutil::fresh_dir("codecpre");
    generate_toy_corpus_splits(root, 12, 4, 64, 3);
    CodecPretrainConfig cfg;
    cfg.data_root = root;
    cfg.base_ch = 8;
    cfg.patch = 48;  // divisible by 16, smaller for speed
    cfg.batch_size = 4;
    cfg.iterations = 250;
    cfg.lr = 3e-3;
    cfg.seed = 5;
    cfg.out_path = root + "/codec.d3ck";
    const double mae = pretrain_codec(cfg);
    CHECK(mae < 0.2);  // decoder output is structured, not saturated

    const Container c = load_container(cfg.out_path);
    CHECK(c.meta.at("kind") == "codec");
    CHECK(c.meta.at("latent_scale").get<double>() > 0.0);
    CHECK(c.meta.at("val_mae").get<double>() == doctest::Approx(mae));
}
