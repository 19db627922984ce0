#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "d3sr/container.hpp"
#include "d3sr/trainer.hpp"
#include "test_util.hpp"

using namespace d3sr;

namespace {

// One corpus + quickly pretrained codec per test process.
struct Fixture {
    std::string root;
    std::string codec_path;

    Fixture() {
        root = testutil::fresh_dir("trainer_fixture");
        generate_toy_corpus_splits(root, 12, 4, 96, 21);
        CodecPretrainConfig pc;
        pc.data_root = root;
        pc.base_ch = 8;
        pc.iterations = 120;  // mechanics only; quality is not under test here
        pc.batch_size = 4;
        pc.seed = 5;
        pc.out_path = root + "/codec.d3ck";
        pretrain_codec(pc);
    }

    static Fixture& get() {
        static Fixture f;
        return f;
    }

    TrainConfig config(const std::string& out_tag) const {
        TrainConfig cfg;
        cfg.batch_size = 2;
        cfg.iterations = 5;
        cfg.eval_items = 2;
        cfg.eval_interval = 1000;
        cfg.checkpoint_interval = 1000;
        cfg.seed = 777;
        cfg.codec_checkpoint = codec_path.empty() ? root + "/codec.d3ck" : codec_path;
        cfg.data.root = root;
        cfg.data.seed = 3;
        cfg.out_dir = out_tag.empty() ? "" : testutil::fresh_dir(out_tag);
        return cfg;
    }
};

std::map<std::string, std::vector<float>> snapshot(ParamStore<float>& store,
                                                   const std::string& prefix) {
    std::map<std::string, std::vector<float>> out;
    for (const auto& name : store.names_with_prefix(prefix)) out[name] = store.get(name).data;
    return out;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("config validation names offending fields") {
    TrainConfig cfg = Fixture::get().config("");
    cfg.lambda1 = -0.5;
    try {
        cfg.validate();
        FAIL("expected config_error");
    } catch (const config_error& e) {
        CHECK(e.field() == "lambda1");
    }
    cfg = Fixture::get().config("");
    cfg.t_l = cfg.T;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = Fixture::get().config("");
    cfg.disc_preset = "none";  // lambda1 must be zero without a discriminator
    CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("train config JSON round trip") {
    TrainConfig cfg = Fixture::get().config("");
    cfg.lambda2 = 0.25;
    cfg.disc_preset = "large";
    const TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
}

TEST_CASE("with lambda1=0 the generator ignores the discriminator entirely") {
    TrainConfig with_d = Fixture::get().config("");
    with_d.lambda1 = 0.0;
    with_d.disc_preset = "base";
    TrainConfig without_d = with_d;
    without_d.disc_preset = "none";

    Trainer a(with_d), b(without_d);
    for (int i = 0; i < 4; ++i) {
        const StepLog la = a.train_step();
        const StepLog lb = b.train_step();
        CHECK(la.loss_spatial == doctest::Approx(lb.loss_spatial).epsilon(1e-9));
        CHECK(la.loss_g_total == doctest::Approx(lb.loss_g_total).epsilon(1e-9));
        CHECK(lb.loss_d == 0.0);
        CHECK(la.loss_d > 0.0);  // the discriminator still trains on its own
    }
}

TEST_CASE("frozen-weight audit: only adapters and the head move") {
    Trainer t(Fixture::get().config(""));
    auto codec_before = snapshot(t.store(), "codec.");
    auto denoiser_before = snapshot(t.store(), "denoiser.");
    auto disc_before = snapshot(t.store(), "disc.");
    auto lora_g_before = snapshot(t.store(), "lora.g.");
    auto head_before = snapshot(t.store(), "disc.head.");

    for (int i = 0; i < 10; ++i) t.train_step();

    for (auto& [name, data] : snapshot(t.store(), "codec."))
        CHECK(bitwise_equal(data, codec_before[name]));
    for (auto& [name, data] : snapshot(t.store(), "denoiser."))
        CHECK(bitwise_equal(data, denoiser_before[name]));
    for (auto& [name, data] : snapshot(t.store(), "disc.")) {
        if (name.rfind("disc.head.", 0) == 0) continue;
        CHECK(bitwise_equal(data, disc_before[name]));
    }
    // trainable sets did move
    bool lora_moved = false;
    for (auto& [name, data] : snapshot(t.store(), "lora.g."))
        if (!bitwise_equal(data, lora_g_before[name])) lora_moved = true;
    CHECK(lora_moved);
    bool head_moved = false;
    for (auto& [name, data] : snapshot(t.store(), "disc.head."))
        if (!bitwise_equal(data, head_before[name])) head_moved = true;
    CHECK(head_moved);
}

TEST_CASE("gradient flows into generator adapters through the discriminator path") {
    TrainConfig cfg = Fixture::get().config("");
    Trainer t(cfg);
    t.train_step();  // one step so the zero-initialized head becomes non-flat

    // adversarial-only objective: lambda1 * (-mean log D(F(z_hat, t)))
    const auto& [x_l_up, x_h] = t.val_pairs()[0];
    Graph<float> g;
    Binding<float> b(g, t.store());
    b.add_lora(&t.lora_g());
    b.add_lora(&t.lora_d());
    b.set_trainable([&t](const std::string& n) { return t.g_trainable(n); });
    Var x = g.constant(Tensor<float>{{1, 3, x_l_up.dim(1), x_l_up.dim(2)}, 0});
    g.mutable_val(x).data = x_l_up.data;
    GeneratorOut<float> gen =
        generator_forward_op(b, t.codec(), t.denoiser(), x, t.config().t_l, t.schedule());
    Rng rng(55);
    Tensor<float> eps(g.val(gen.z_hat).shape);
    rng.fill_normal(eps);
    Var z_noisy = forward_diffuse_batch_op(g, gen.z_hat, {250}, g.constant(eps), t.schedule());
    Var adv = generator_adv_loss_op(g, t.discriminator()->score_map_op(b, z_noisy, {250}));
    g.backward(adv);

    float max_grad = 0.0f;
    for (const auto& name : t.g_trainable_names()) {
        Var v = b.var_for(name);
        if (!v.valid()) continue;
        max_grad = std::max(max_grad, g.grad_of(v).max_abs());
    }
    CHECK(max_grad > 0.0f);
}

TEST_CASE("seeded runs are reproducible") {
    TrainConfig cfg = Fixture::get().config("");
    Trainer a(cfg), b(cfg);
    for (int i = 0; i < 5; ++i) {
        const StepLog la = a.train_step();
        const StepLog lb = b.train_step();
        CHECK(la.loss_d == doctest::Approx(lb.loss_d).epsilon(1e-9));
        CHECK(la.loss_g_total == doctest::Approx(lb.loss_g_total).epsilon(1e-9));
    }
}

TEST_CASE("checkpoint save/load/save is byte-identical") {
    Trainer t(Fixture::get().config(""));
    for (int i = 0; i < 3; ++i) t.train_step();
    const std::string dir = testutil::fresh_dir("ckpt_roundtrip");
    t.save_checkpoint(dir + "/a.d3ck");
    auto resumed = Trainer::resume(dir + "/a.d3ck");
    resumed->save_checkpoint(dir + "/b.d3ck");
    std::ifstream fa(dir + "/a.d3ck", std::ios::binary), fb(dir + "/b.d3ck", std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(!ba.empty());
    CHECK(ba == bb);
}

TEST_CASE("resume equivalence: 6+4 steps equals 10 straight") {
    TrainConfig cfg = Fixture::get().config("");
    Trainer full(cfg);
    std::vector<StepLog> want;
    for (int i = 0; i < 10; ++i) want.push_back(full.train_step());

    Trainer head(cfg);
    for (int i = 0; i < 6; ++i) head.train_step();
    const std::string dir = testutil::fresh_dir("resume");
    head.save_checkpoint(dir + "/mid.d3ck");
    auto tail = Trainer::resume(dir + "/mid.d3ck");
    CHECK(tail->iteration() == 6);
    for (int i = 6; i < 10; ++i) {
        const StepLog log = tail->train_step();
        CHECK(log.loss_d == doctest::Approx(want[static_cast<size_t>(i)].loss_d).epsilon(1e-6));
        CHECK(log.loss_g_total ==
              doctest::Approx(want[static_cast<size_t>(i)].loss_g_total).epsilon(1e-6));
    }
    // final parameters agree bit-for-bit with the uninterrupted run
    for (const auto& name : full.store().names())
        CHECK(bitwise_equal(full.store().get(name).data, tail->store().get(name).data));
}

TEST_CASE("non-finite losses abort with the offending batch index") {
    Trainer t(Fixture::get().config(""));
    auto& w = t.store().get("codec.dec.conv_out.bias");
    w[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(t.train_step(), doctest::Contains("batch index"), std::runtime_error);
}

TEST_CASE("discriminator preset changes leave the generator untouched") {
    TrainConfig base_cfg = Fixture::get().config("");
    TrainConfig large_cfg = base_cfg;
    large_cfg.disc_preset = "large";
    Trainer a(base_cfg), b(large_cfg);
    const auto na = a.store().names_with_prefix("denoiser.");
    const auto nb = b.store().names_with_prefix("denoiser.");
    REQUIRE(na == nb);
    for (const auto& name : na)
        CHECK(a.store().get(name).shape == b.store().get(name).shape);
    // the large trunk really is wider
    CHECK(b.store().get("disc.mid.res1.conv1.weight").dim(0) >
          a.store().get("disc.mid.res1.conv1.weight").dim(0));
    b.train_step();  // one step completes with the large preset
}

TEST_CASE("run() writes log, checkpoints, and a report") {
    TrainConfig cfg = Fixture::get().config("run_outputs");
    cfg.iterations = 3;
    cfg.eval_interval = 3;
    cfg.checkpoint_interval = 3;
    Trainer t(cfg);
    std::ofstream log(cfg.out_dir + "/log.jsonl");
    t.run(&log);
    log.close();
    CHECK(std::filesystem::exists(cfg.out_dir + "/checkpoint_final.d3ck"));
    CHECK(std::filesystem::exists(cfg.out_dir + "/report.json"));
    std::ifstream rep(cfg.out_dir + "/report.json");
    const nlohmann::json j = nlohmann::json::parse(rep);
    CHECK(j.count("initial_val_dists") == 1);
    CHECK(j.count("final_val_dists") == 1);
    CHECK(j.count("mean_real_score") == 1);
    CHECK(j.at("iterations_done").get<int>() == 3);

    std::ifstream lf(cfg.out_dir + "/log.jsonl");
    int steps = 0, evals = 0;
    std::string line;
    while (std::getline(lf, line)) {
        const auto rec = nlohmann::json::parse(line);
        if (rec.at("event") == "step") ++steps;
        if (rec.at("event") == "eval") ++evals;
    }
    CHECK(steps == 3);
    CHECK(evals >= 2);  // initial and final
}

TEST_CASE("load_model reconstructs an inference-ready model") {
    TrainConfig cfg = Fixture::get().config("");
    Trainer t(cfg);
    t.train_step();
    const std::string dir = testutil::fresh_dir("loadmodel");
    t.save_checkpoint(dir + "/m.d3ck");

    LoadedModel m = load_model(dir + "/m.d3ck");
    Rng rng(31);
    Tensor<float> lr({3, 16, 16});
    for (auto& v : lr.data) v = static_cast<float>(rng.uniform());
    const auto out = m.super_resolve(lr);
    CHECK(out.shape == std::vector<int>{3, 64, 64});
    CHECK(m.denoiser.eval_count == 1);

    // generated output matches the trainer's generator exactly
    auto [want, z] = generate(t.codec(), t.denoiser(), t.store(), &t.lora_g(),
                              upscale_x4_bicubic(lr), cfg.t_l, t.schedule());
    CHECK(max_abs_diff(out, want) == 0.0f);
}
