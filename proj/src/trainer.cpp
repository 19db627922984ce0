#include "d3sr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "d3sr/container.hpp"
#include "d3sr/errors.hpp"
#include "d3sr/imageproc.hpp"
#include "d3sr/thread_pool.hpp"

namespace fs = std::filesystem;

namespace d3sr {

namespace {

constexpr uint64_t kValPairTag = 0xE0A1;
constexpr uint64_t kScoreEvalTag = 0x5C0;

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

void TrainConfig::validate() const {
    if (lambda1 < 0) throw config_error("lambda1", "must be >= 0");
    if (lambda2 < 0) throw config_error("lambda2", "must be >= 0");
    if (T < 1) throw config_error("T", "must be >= 1");
    if (t_l < 0 || t_l >= T) throw config_error("t_l", "must lie in [0, T)");
    if (!(beta_start > 0 && beta_start < 1)) throw config_error("beta_start", "must lie in (0,1)");
    if (!(beta_end > 0 && beta_end < 1)) throw config_error("beta_end", "must lie in (0,1)");
    if (beta_start > beta_end) throw config_error("beta_start", "must not exceed beta_end");
    if (lr_g <= 0) throw config_error("lr_g", "must be positive");
    if (lr_d <= 0) throw config_error("lr_d", "must be positive");
    if (batch_size < 1) throw config_error("batch_size", "must be positive");
    if (iterations < 1) throw config_error("iterations", "must be positive");
    if (rank < 1) throw config_error("rank", "must be >= 1");
    if (lora_alpha <= 0) throw config_error("lora_alpha", "must be positive");
    if (gen_preset != "base" && gen_preset != "large")
        throw config_error("gen_preset", "must be base or large");
    if (disc_preset != "none" && disc_preset != "base" && disc_preset != "large")
        throw config_error("disc_preset", "must be none, base or large");
    if (disc_preset == "none" && lambda1 != 0.0)
        throw config_error("lambda1", "must be 0 when disc_preset is none");
    if (eval_interval < 1) throw config_error("eval_interval", "must be positive");
    if (checkpoint_interval < 1) throw config_error("checkpoint_interval", "must be positive");
    if (eval_items < 1) throw config_error("eval_items", "must be positive");
    if (codec_checkpoint.empty()) throw config_error("codec_checkpoint", "must be set");
    data.validate();
    degradation.validate();
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lambda1", lambda1},
            {"lambda2", lambda2},
            {"T", T},
            {"t_l", t_l},
            {"beta_start", beta_start},
            {"beta_end", beta_end},
            {"lr_g", lr_g},
            {"lr_d", lr_d},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"iterations", iterations},
            {"rank", rank},
            {"lora_alpha", lora_alpha},
            {"gen_preset", gen_preset},
            {"disc_preset", disc_preset},
            {"seed", seed},
            {"eval_interval", eval_interval},
            {"checkpoint_interval", checkpoint_interval},
            {"eval_items", eval_items},
            {"threads", threads},
            {"out_dir", out_dir},
            {"codec_checkpoint", codec_checkpoint},
            {"data", data.to_json()},
            {"degradation", degradation.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    c.T = j.value("T", c.T);
    c.t_l = j.value("t_l", c.T / 2);
    c.beta_start = j.value("beta_start", c.beta_start);
    c.beta_end = j.value("beta_end", c.beta_end);
    c.lr_g = j.value("lr_g", c.lr_g);
    c.lr_d = j.value("lr_d", c.lr_d);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.iterations = j.value("iterations", c.iterations);
    c.rank = j.value("rank", c.rank);
    c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
    c.gen_preset = j.value("gen_preset", c.gen_preset);
    c.disc_preset = j.value("disc_preset", c.disc_preset);
    c.seed = j.value("seed", c.seed);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    c.eval_items = j.value("eval_items", c.eval_items);
    c.threads = j.value("threads", c.threads);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.codec_checkpoint = j.value("codec_checkpoint", c.codec_checkpoint);
    if (j.count("data")) c.data = DatasetSpec::from_json(j.at("data"));
    if (j.count("degradation")) c.degradation = DegradationConfig::from_json(j.at("degradation"));
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Network assembly shared by Trainer and LoadedModel.
// ---------------------------------------------------------------------------

namespace {

struct NetBundle {
    CodecNet<float> codec;
    UNet<float> denoiser;
    std::optional<DiscriminatorNet<float>> disc;
    LoraSet<float> lora_g;
    LoraSet<float> lora_d;
};

NetBundle build_nets(const TrainConfig& cfg, ParamStore<float>& store, int codec_base_ch,
                     int codec_latent_ch) {
    NetBundle nb;
    nb.codec.cfg.base_ch = codec_base_ch;
    nb.codec.cfg.latent_ch = codec_latent_ch;
    Rng rng_codec(derive_seed(cfg.seed, streams::kInitGenerator, 1));
    nb.codec.init_params(store, rng_codec);

    nb.denoiser.cfg = UNetConfig::preset(cfg.gen_preset);
    nb.denoiser.cfg.latent_ch = codec_latent_ch;
    nb.denoiser.prefix = "denoiser.";
    Rng rng_g(derive_seed(cfg.seed, streams::kInitGenerator, 2));
    nb.denoiser.init_params(store, rng_g);

    nb.lora_g.rank = cfg.rank;
    nb.lora_g.alpha = cfg.lora_alpha;
    nb.lora_g.prefix = "lora.g.";
    nb.lora_g.attach(store, conv_weight_names(store, "denoiser."), rng_g, /*cap_to_dims=*/true);

    if (cfg.disc_preset != "none") {
        nb.disc.emplace();
        nb.disc->trunk.cfg = UNetConfig::preset(cfg.disc_preset);
        nb.disc->trunk.cfg.latent_ch = codec_latent_ch;
        nb.disc->trunk.prefix = "disc.";
        Rng rng_d(derive_seed(cfg.seed, streams::kInitDiscriminator));
        nb.disc->init_params(store, rng_d);
        nb.lora_d.rank = cfg.rank;
        nb.lora_d.alpha = cfg.lora_alpha;
        nb.lora_d.prefix = "lora.d.";
        nb.lora_d.attach(store, conv_weight_names(store, "disc.", "disc.head."), rng_d, /*cap_to_dims=*/true);
    }
    return nb;
}

}  // namespace

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg) : Trainer(std::move(cfg), /*defer_state=*/false) {}

Trainer::Trainer(TrainConfig cfg, bool defer_state)
    : cfg_(std::move(cfg)),
      rng_g_(derive_seed(cfg_.seed, streams::kGeneratorStep)),
      rng_d_(derive_seed(cfg_.seed, streams::kDiscriminatorStep)) {
    cfg_.validate();
    if (cfg_.threads > 0) ThreadPool::set_global_threads(cfg_.threads);
    sched_ = build_schedule(cfg_.T, cfg_.beta_start, cfg_.beta_end);
    extractor_ = FeatureExtractor<float>::seeded_default();
    build_networks(/*load_codec_file=*/!defer_state);
    load_data();
}

void Trainer::build_networks(bool load_codec_file) {
    int base_ch = 16, latent_ch = 4;
    double latent_scale = 1.0;
    Container codec_ckpt;
    if (load_codec_file) {
        try {
            codec_ckpt = load_container(cfg_.codec_checkpoint);
        } catch (const std::exception& e) {
            throw io_error("cannot load codec checkpoint '" + cfg_.codec_checkpoint +
                           "': " + e.what());
        }
        if (codec_ckpt.meta.value("kind", "") != "codec")
            throw io_error("not a codec checkpoint: " + cfg_.codec_checkpoint);
        base_ch = codec_ckpt.meta.at("base_ch").get<int>();
        latent_ch = codec_ckpt.meta.at("latent_ch").get<int>();
        latent_scale = codec_ckpt.meta.at("latent_scale").get<double>();
    }

    NetBundle nb = build_nets(cfg_, store_, base_ch, latent_ch);
    codec_ = std::move(nb.codec);
    denoiser_ = std::move(nb.denoiser);
    disc_ = std::move(nb.disc);
    lora_g_ = std::move(nb.lora_g);
    lora_d_ = std::move(nb.lora_d);
    codec_.latent_scale = latent_scale;

    if (load_codec_file) {
        for (const auto& name : store_.names_with_prefix("codec.")) {
            Tensor<float> t = codec_ckpt.get_f32(name);
            if (!t.same_shape(store_.get(name)))
                throw io_error("codec checkpoint shape mismatch for " + name);
            store_.get(name) = std::move(t);
        }
    }

    opt_g_ = {};
    opt_g_.lr = cfg_.lr_g;
    opt_g_.beta1 = cfg_.adam_beta1;
    opt_g_.beta2 = cfg_.adam_beta2;
    opt_g_.eps = cfg_.adam_eps;
    opt_g_.weight_decay = cfg_.weight_decay;
    {
        auto names = g_trainable_names();
        std::vector<bool> wd(names.size(), true);  // all adapters
        opt_g_.init(store_, names, wd);
    }
    if (disc_) {
        opt_d_ = {};
        opt_d_.lr = cfg_.lr_d;
        opt_d_.beta1 = cfg_.adam_beta1;
        opt_d_.beta2 = cfg_.adam_beta2;
        opt_d_.eps = cfg_.adam_eps;
        opt_d_.weight_decay = cfg_.weight_decay;
        auto names = d_trainable_names();
        std::vector<bool> wd;
        for (const auto& n : names) wd.push_back(n.rfind("lora.d.", 0) == 0);  // head: no decay
        opt_d_.init(store_, names, wd);
    }
}

bool Trainer::g_trainable(const std::string& name) const { return name.rfind("lora.g.", 0) == 0; }

bool Trainer::d_trainable(const std::string& name) const {
    return name.rfind("lora.d.", 0) == 0 || name.rfind("disc.head.", 0) == 0;
}

std::vector<std::string> Trainer::g_trainable_names() const {
    return store_.names_with_prefix("lora.g.");
}

std::vector<std::string> Trainer::d_trainable_names() const {
    std::vector<std::string> names = store_.names_with_prefix("lora.d.");
    for (const auto& n : store_.names_with_prefix("disc.head.")) names.push_back(n);
    return names;
}

void Trainer::load_data() {
    DatasetSpec train_spec = cfg_.data;
    train_spec.split = "train";
    train_ds_ = load_dataset(train_spec);

    DatasetSpec val_spec = cfg_.data;
    val_spec.split = "val";
    val_spec.seed = derive_seed(cfg_.seed, streams::kEval);
    LoadedDataset val_ds = load_dataset(val_spec);

    val_pairs_.clear();
    for (int i = 0; i < cfg_.eval_items; ++i) {
        auto [x_l, x_h] =
            sample_training_pair(val_ds, val_spec, cfg_.degradation, kValPairTag, i);
        val_pairs_.emplace_back(upscale_x4_bicubic(x_l), std::move(x_h));
    }
}

Tensor<float> Trainer::encode_batch(const Tensor<float>& images) {
    Graph<float> g;
    Binding<float> b(g, store_);
    Var x = g.constant(images);
    return g.val(codec_.encode_op(b, x));
}

StepLog Trainer::train_step() {
    const double t0 = now_ms();
    const int B = cfg_.batch_size;
    DatasetSpec train_spec = cfg_.data;
    train_spec.split = "train";

    // -- batch assembly (pure function of seed/iteration/item) --
    std::vector<Tensor<float>> lr_up(static_cast<size_t>(B)), hr(static_cast<size_t>(B));
    auto assemble = [&](int j) {
        auto [x_l, x_h] = sample_training_pair(train_ds_, train_spec, cfg_.degradation,
                                               static_cast<uint64_t>(iteration_), j);
        lr_up[static_cast<size_t>(j)] = upscale_x4_bicubic(x_l);
        hr[static_cast<size_t>(j)] = std::move(x_h);
    };
    if (env_worker_cap() > 1)
        ThreadPool::global().parallel_for(B, assemble);
    else
        for (int j = 0; j < B; ++j) assemble(j);
    const Tensor<float> x_l_batch = stack_batch(lr_up);
    const Tensor<float> x_h_batch = stack_batch(hr);

    // -- (1) generator forward --
    Graph<float> ga;
    Binding<float> ba(ga, store_);
    ba.add_lora(&lora_g_);
    ba.add_lora(&lora_d_);
    ba.set_trainable([this](const std::string& n) { return g_trainable(n); });
    Var x_l_var = ga.constant(x_l_batch);
    GeneratorOut<float> gen = generator_forward_op(ba, codec_, denoiser_, x_l_var, cfg_.t_l,
                                                   sched_);

    StepLog log;
    log.iteration = iteration_;

    // -- (2) discriminator step on detached fakes vs reals --
    if (disc_) {
        std::vector<int> ts_fake(static_cast<size_t>(B)), ts_real(static_cast<size_t>(B));
        for (int j = 0; j < B; ++j) ts_fake[static_cast<size_t>(j)] = sample_timestep(rng_d_, cfg_.T);
        for (int j = 0; j < B; ++j) ts_real[static_cast<size_t>(j)] = sample_timestep(rng_d_, cfg_.T);

        const Tensor<float> z_fake = ga.val(gen.z_hat);  // detached copy
        const Tensor<float> z_real = encode_batch(x_h_batch);
        Tensor<float> z_fake_noisy(z_fake.shape), z_real_noisy(z_real.shape);
        for (int j = 0; j < B; ++j) {
            Tensor<float> eps_f(batch_item(z_fake, j).shape);
            rng_d_.fill_normal(eps_f);
            Tensor<float> zin = forward_diffuse(batch_item(z_fake, j), ts_fake[static_cast<size_t>(j)],
                                                eps_f, sched_);
            std::copy(zin.data.begin(), zin.data.end(),
                      z_fake_noisy.data.begin() + static_cast<int64_t>(j) * zin.numel());
            Tensor<float> eps_r(zin.shape);
            rng_d_.fill_normal(eps_r);
            Tensor<float> zrn = forward_diffuse(batch_item(z_real, j), ts_real[static_cast<size_t>(j)],
                                                eps_r, sched_);
            std::copy(zrn.data.begin(), zrn.data.end(),
                      z_real_noisy.data.begin() + static_cast<int64_t>(j) * zrn.numel());
        }

        Graph<float> gd;
        Binding<float> bd(gd, store_);
        bd.add_lora(&lora_g_);
        bd.add_lora(&lora_d_);
        bd.set_trainable([this](const std::string& n) { return d_trainable(n); });
        Var s_fake = disc_->score_map_op(bd, gd.constant(z_fake_noisy), ts_fake);
        Var s_real = disc_->score_map_op(bd, gd.constant(z_real_noisy), ts_real);
        Var loss_d = discriminator_loss_op(gd, s_fake, s_real);
        log.loss_d = static_cast<double>(gd.val(loss_d)[0]);
        gd.backward(loss_d);
        opt_d_.update(store_, collect_grads(gd, bd, opt_d_.param_names));
    }

    // -- (3) generator step: spatial + lambda1 * adversarial --
    Var x_h_var = ga.constant(x_h_batch);
    Var spatial_items = spatial_loss_items_op(ga, gen.x_hat, x_h_var, cfg_.lambda2, extractor_);
    Var spatial = mean_all(ga, spatial_items);
    Var total = spatial;
    if (disc_ && cfg_.lambda1 > 0.0) {
        std::vector<int> ts_g(static_cast<size_t>(B));
        for (int j = 0; j < B; ++j) ts_g[static_cast<size_t>(j)] = sample_timestep(rng_g_, cfg_.T);
        Tensor<float> eps_g(ga.val(gen.z_hat).shape);
        rng_g_.fill_normal(eps_g);
        Var z_noisy = forward_diffuse_batch_op(ga, gen.z_hat, ts_g, ga.constant(std::move(eps_g)),
                                               sched_);
        Var s_g = disc_->score_map_op(ba, z_noisy, ts_g);
        Var adv = generator_adv_loss_op(ga, s_g);
        log.loss_g_adv = static_cast<double>(ga.val(adv)[0]);
        total = add(ga, spatial, scale(ga, adv, cfg_.lambda1));
    }
    log.loss_spatial = static_cast<double>(ga.val(spatial)[0]);
    log.loss_g_total = static_cast<double>(ga.val(total)[0]);

    if (!std::isfinite(log.loss_g_total) || !std::isfinite(log.loss_d)) {
        std::ostringstream os;
        os << "non-finite loss at iteration " << iteration_ << ":";
        const auto& items = ga.val(spatial_items);
        for (int j = 0; j < B; ++j)
            if (!std::isfinite(static_cast<double>(items[j])))
                os << " batch index " << j << " (spatial=" << items[j] << ")";
        if (!std::isfinite(log.loss_g_adv)) os << " adversarial=" << log.loss_g_adv;
        if (!std::isfinite(log.loss_d)) os << " discriminator=" << log.loss_d;
        throw std::runtime_error(os.str());
    }

    ga.backward(total);
    opt_g_.update(store_, collect_grads(ga, ba, opt_g_.param_names));

    ++iteration_;
    log.ms = now_ms() - t0;
    history_.push_back(log);
    return log;
}

double Trainer::eval_val_dists() {
    double acc = 0.0;
    for (const auto& [x_l_up, x_h] : val_pairs_) {
        auto [x_hat, z_hat] = generate(codec_, denoiser_, store_, &lora_g_, x_l_up, cfg_.t_l,
                                       sched_);
        acc += dists(x_hat, x_h, extractor_);
    }
    return acc / static_cast<double>(val_pairs_.size());
}

double Trainer::eval_val_psnr() {
    double acc = 0.0;
    int finite = 0;
    for (const auto& [x_l_up, x_h] : val_pairs_) {
        auto [x_hat, z_hat] = generate(codec_, denoiser_, store_, &lora_g_, x_l_up, cfg_.t_l,
                                       sched_);
        const double p = psnr_y(x_hat, x_h);
        if (std::isfinite(p)) {
            acc += p;
            ++finite;
        }
    }
    return finite > 0 ? acc / finite : std::numeric_limits<double>::infinity();
}

std::pair<double, double> Trainer::eval_val_scores(int draws) {
    if (!disc_) throw std::logic_error("eval_val_scores: no discriminator configured");
    double real_acc = 0.0, fake_acc = 0.0;
    int64_t count = 0;
    for (size_t i = 0; i < val_pairs_.size(); ++i) {
        const auto& [x_l_up, x_h] = val_pairs_[i];
        auto [x_hat, z_fake] = generate(codec_, denoiser_, store_, &lora_g_, x_l_up, cfg_.t_l,
                                        sched_);
        const Tensor<float> z_real = codec_encode(codec_, store_, x_h);
        for (int k = 0; k < draws; ++k) {
            Rng rng(derive_seed(cfg_.seed, streams::kEval,
                                kScoreEvalTag + i * 1024 + static_cast<uint64_t>(k)));
            const int t = rng.uniform_int(cfg_.T);
            Tensor<float> eps_f(z_fake.shape);
            rng.fill_normal(eps_f);
            Tensor<float> eps_r(z_real.shape);
            rng.fill_normal(eps_r);
            const Tensor<float> sf = discriminate(*disc_, store_, &lora_d_,
                                                  forward_diffuse(z_fake, t, eps_f, sched_), t,
                                                  cfg_.T);
            const Tensor<float> sr = discriminate(*disc_, store_, &lora_d_,
                                                  forward_diffuse(z_real, t, eps_r, sched_), t,
                                                  cfg_.T);
            double sfm = 0.0, srm = 0.0;
            for (const float v : sf.data) sfm += v;
            for (const float v : sr.data) srm += v;
            fake_acc += sfm / static_cast<double>(sf.numel());
            real_acc += srm / static_cast<double>(sr.numel());
            ++count;
        }
    }
    return {real_acc / static_cast<double>(count), fake_acc / static_cast<double>(count)};
}

void Trainer::run(std::ostream* jsonl_log) {
    auto emit = [&](const nlohmann::json& j) {
        if (jsonl_log) (*jsonl_log) << j.dump() << "\n" << std::flush;
    };
    auto do_eval = [&]() {
        EvalRecord rec;
        rec.iteration = iteration_;
        rec.val_dists = eval_val_dists();
        rec.val_psnr = eval_val_psnr();
        evals_.push_back(rec);
        emit({{"event", "eval"},
              {"iteration", rec.iteration},
              {"val_dists", rec.val_dists},
              {"val_psnr", rec.val_psnr}});
    };

    if (!cfg_.out_dir.empty()) fs::create_directories(cfg_.out_dir);
    if (iteration_ == 0) do_eval();  // initial point of the validation curve

    while (iteration_ < cfg_.iterations) {
        StepLog log = train_step();
        emit({{"event", "step"},
              {"iteration", log.iteration},
              {"loss_d", log.loss_d},
              {"loss_g_adv", log.loss_g_adv},
              {"loss_spatial", log.loss_spatial},
              {"loss_g_total", log.loss_g_total},
              {"ms", log.ms}});
        const bool last = iteration_ >= cfg_.iterations;
        if (iteration_ % cfg_.eval_interval == 0 || last) do_eval();
        if (!cfg_.out_dir.empty() &&
            (iteration_ % cfg_.checkpoint_interval == 0 || last)) {
            save_checkpoint(cfg_.out_dir + "/ckpt_" + std::to_string(iteration_) + ".d3ck");
        }
    }
    if (!cfg_.out_dir.empty()) {
        save_checkpoint(cfg_.out_dir + "/checkpoint_final.d3ck");
        std::ofstream rep(cfg_.out_dir + "/report.json");
        rep << final_report().dump(2) << "\n";
    }
}

nlohmann::json Trainer::final_report() const {
    nlohmann::json evals = nlohmann::json::array();
    for (const auto& e : evals_)
        evals.push_back(
            {{"iteration", e.iteration}, {"val_dists", e.val_dists}, {"val_psnr", e.val_psnr}});
    nlohmann::json j{{"config", cfg_.to_json()},
                     {"iterations_done", iteration_},
                     {"evals", evals}};
    if (!evals_.empty()) {
        j["initial_val_dists"] = evals_.front().val_dists;
        j["final_val_dists"] = evals_.back().val_dists;
    }
    if (disc_) {
        auto [real_mean, fake_mean] = const_cast<Trainer*>(this)->eval_val_scores();
        j["mean_real_score"] = real_mean;
        j["mean_fake_score"] = fake_mean;
    }
    return j;
}

void Trainer::save_checkpoint(const std::string& path) const {
    Container c;
    c.meta["kind"] = "train_state";
    c.meta["config"] = cfg_.to_json();
    c.meta["iteration"] = iteration_;
    c.meta["latent_scale"] = codec_.latent_scale;
    c.meta["codec_base_ch"] = codec_.cfg.base_ch;
    c.meta["codec_latent_ch"] = codec_.cfg.latent_ch;
    c.meta["rng_g"] = rng_g_.save_state();
    c.meta["rng_d"] = rng_d_.save_state();
    c.meta["opt_g_steps"] = opt_g_.step_count;
    c.meta["opt_d_steps"] = opt_d_.step_count;
    nlohmann::json evals = nlohmann::json::array();
    for (const auto& e : evals_)
        evals.push_back(
            {{"iteration", e.iteration}, {"val_dists", e.val_dists}, {"val_psnr", e.val_psnr}});
    c.meta["evals"] = evals;

    for (const auto& name : store_.names()) c.put_f32("param." + name, store_.get(name));
    for (const auto& [name, t] : opt_g_.m) c.put_f32("opt_g.m." + name, t);
    for (const auto& [name, t] : opt_g_.v) c.put_f32("opt_g.v." + name, t);
    for (const auto& [name, t] : opt_d_.m) c.put_f32("opt_d.m." + name, t);
    for (const auto& [name, t] : opt_d_.v) c.put_f32("opt_d.v." + name, t);

    const size_t n = history_.size();
    Tensor<double> h_d({static_cast<int>(n)}), h_adv({static_cast<int>(n)}),
        h_sp({static_cast<int>(n)}), h_tot({static_cast<int>(n)}), h_ms({static_cast<int>(n)});
    std::vector<int64_t> h_it(n);
    for (size_t i = 0; i < n; ++i) {
        h_it[i] = history_[i].iteration;
        h_d[static_cast<int64_t>(i)] = history_[i].loss_d;
        h_adv[static_cast<int64_t>(i)] = history_[i].loss_g_adv;
        h_sp[static_cast<int64_t>(i)] = history_[i].loss_spatial;
        h_tot[static_cast<int64_t>(i)] = history_[i].loss_g_total;
        h_ms[static_cast<int64_t>(i)] = history_[i].ms;
    }
    c.put_i64("history.iteration", h_it);
    c.put_f64("history.loss_d", h_d);
    c.put_f64("history.loss_g_adv", h_adv);
    c.put_f64("history.loss_spatial", h_sp);
    c.put_f64("history.loss_g_total", h_tot);
    c.put_f64("history.ms", h_ms);

    save_container(c, path);
}

void Trainer::restore_from(const Container& c) {
    codec_.latent_scale = c.meta.at("latent_scale").get<double>();
    iteration_ = c.meta.at("iteration").get<int64_t>();
    rng_g_.load_state(c.meta.at("rng_g").get<std::string>());
    rng_d_.load_state(c.meta.at("rng_d").get<std::string>());
    opt_g_.step_count = c.meta.at("opt_g_steps").get<int64_t>();
    opt_d_.step_count = c.meta.at("opt_d_steps").get<int64_t>();

    for (const auto& name : store_.names()) {
        Tensor<float> t = c.get_f32("param." + name);
        if (!t.same_shape(store_.get(name)))
            throw io_error("checkpoint shape mismatch for " + name);
        store_.get(name) = std::move(t);
    }
    for (auto& [name, t] : opt_g_.m) t = c.get_f32("opt_g.m." + name);
    for (auto& [name, t] : opt_g_.v) t = c.get_f32("opt_g.v." + name);
    for (auto& [name, t] : opt_d_.m) t = c.get_f32("opt_d.m." + name);
    for (auto& [name, t] : opt_d_.v) t = c.get_f32("opt_d.v." + name);

    history_.clear();
    const auto h_it = c.get_i64("history.iteration");
    const auto h_d = c.get_f64("history.loss_d");
    const auto h_adv = c.get_f64("history.loss_g_adv");
    const auto h_sp = c.get_f64("history.loss_spatial");
    const auto h_tot = c.get_f64("history.loss_g_total");
    const auto h_ms = c.get_f64("history.ms");
    for (size_t i = 0; i < h_it.size(); ++i) {
        StepLog log;
        log.iteration = h_it[i];
        log.loss_d = h_d[static_cast<int64_t>(i)];
        log.loss_g_adv = h_adv[static_cast<int64_t>(i)];
        log.loss_spatial = h_sp[static_cast<int64_t>(i)];
        log.loss_g_total = h_tot[static_cast<int64_t>(i)];
        log.ms = h_ms[static_cast<int64_t>(i)];
        history_.push_back(log);
    }
    evals_.clear();
    for (const auto& e : c.meta.at("evals")) {
        EvalRecord rec;
        rec.iteration = e.at("iteration").get<int64_t>();
        rec.val_dists = e.at("val_dists").get<double>();
        rec.val_psnr = e.at("val_psnr").get<double>();
        evals_.push_back(rec);
    }
}

std::unique_ptr<Trainer> Trainer::resume(const std::string& checkpoint_path) {
    Container c = load_container(checkpoint_path);
    if (c.meta.value("kind", "") != "train_state")
        throw io_error("not a training checkpoint: " + checkpoint_path);
    TrainConfig cfg = TrainConfig::from_json(c.meta.at("config"));
    std::unique_ptr<Trainer> t(new Trainer(std::move(cfg), /*defer_state=*/true));
    t->restore_from(c);
    return t;
}

// ---------------------------------------------------------------------------
// LoadedModel
// ---------------------------------------------------------------------------

LoadedModel load_model(const std::string& checkpoint_path) {
    Container c = load_container(checkpoint_path);
    if (c.meta.value("kind", "") != "train_state")
        throw io_error("not a training checkpoint: " + checkpoint_path);
    LoadedModel m;
    {
        nlohmann::json cj = c.meta.at("config");
        // model reconstruction must not depend on dataset paths
        cj["data"] = DatasetSpec{.root = "/", .split = "train", .patch = 64, .seed = 0}.to_json();
        cj["codec_checkpoint"] = "(embedded)";
        m.cfg = TrainConfig::from_json(cj);
    }
    m.sched = build_schedule(m.cfg.T, m.cfg.beta_start, m.cfg.beta_end);
    NetBundle nb = build_nets(m.cfg, m.store, c.meta.at("codec_base_ch").get<int>(),
                              c.meta.at("codec_latent_ch").get<int>());
    m.codec = std::move(nb.codec);
    m.denoiser = std::move(nb.denoiser);
    m.disc = std::move(nb.disc);
    m.lora_g = std::move(nb.lora_g);
    m.lora_d = std::move(nb.lora_d);
    m.codec.latent_scale = c.meta.at("latent_scale").get<double>();
    for (const auto& name : m.store.names()) {
        Tensor<float> t = c.get_f32("param." + name);
        if (!t.same_shape(m.store.get(name)))
            throw io_error("checkpoint shape mismatch for " + name);
        m.store.get(name) = std::move(t);
    }
    return m;
}

Tensor<float> LoadedModel::super_resolve(const Tensor<float>& x_l) {
    const Tensor<float> up = upscale_x4_bicubic(x_l);
    if (up.dim(1) % 16 != 0 || up.dim(2) % 16 != 0)
        throw data_error("input resolution unsupported: upscaled size " + shape_str(up.shape) +
                         " must be divisible by 16");
    auto [x_hat, z_hat] = generate(codec, denoiser, store, &lora_g, up, cfg.t_l, sched);
    return x_hat;
}

// ---------------------------------------------------------------------------
// Codec pretraining
// ---------------------------------------------------------------------------

double pretrain_codec(const CodecPretrainConfig& cfg, std::ostream* progress) {
    if (cfg.out_path.empty()) throw config_error("out_path", "must be set");
    DatasetSpec train_spec{.root = cfg.data_root, .split = "train", .patch = cfg.patch,
                           .seed = cfg.seed};
    DatasetSpec val_spec = train_spec;
    val_spec.split = "val";
    LoadedDataset train_ds = load_dataset(train_spec);
    LoadedDataset val_ds = load_dataset(val_spec);

    ParamStore<float> store;
    CodecNet<float> codec;
    codec.cfg.base_ch = cfg.base_ch;
    codec.cfg.latent_ch = cfg.latent_ch;
    Rng init_rng(derive_seed(cfg.seed, streams::kInitGenerator, 1));
    codec.init_params(store, init_rng);

    AdamW<float> opt;
    opt.lr = cfg.lr;
    opt.weight_decay = 0.0;
    {
        auto names = store.names_with_prefix("codec.");
        opt.init(store, names, std::vector<bool>(names.size(), false));
    }

    auto sample_crop = [&](const LoadedDataset& ds, Rng& rng) {
        const Tensor<float>& src = ds.images[static_cast<size_t>(
            rng.uniform_int(static_cast<int>(ds.images.size())))];
        const int oy = rng.uniform_int(src.dim(1) - cfg.patch + 1);
        const int ox = rng.uniform_int(src.dim(2) - cfg.patch + 1);
        Tensor<float> out({3, cfg.patch, cfg.patch});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < cfg.patch; ++y)
                for (int x = 0; x < cfg.patch; ++x)
                    out.at3(c, y, x) = src.at3(c, oy + y, ox + x);
        return out;
    };

    for (int it = 0; it < cfg.iterations; ++it) {
        Rng rng(derive_seed(cfg.seed, streams::kData, static_cast<uint64_t>(it)));
        std::vector<Tensor<float>> crops;
        for (int j = 0; j < cfg.batch_size; ++j) crops.push_back(sample_crop(train_ds, rng));
        Graph<float> g;
        Binding<float> b(g, store);
        b.set_trainable([](const std::string& n) { return n.rfind("codec.", 0) == 0; });
        Var x = g.constant(stack_batch(crops));
        Var xr = codec.decode_op(b, codec.encode_op(b, x));
        Var loss = mse(g, xr, x);
        g.backward(loss);
        opt.update(store, collect_grads(g, b, opt.param_names));
        if (progress && (it + 1) % 200 == 0)
            (*progress) << "codec pretrain " << (it + 1) << "/" << cfg.iterations
                        << " mse=" << g.val(loss)[0] << "\n";
    }

    // validation MAE and latent-scale calibration on deterministic val crops
    Rng vrng(derive_seed(cfg.seed, streams::kEval));
    double mae = 0.0;
    double z_sq = 0.0, z_mean = 0.0;
    int64_t z_count = 0, px_count = 0;
    const int val_batches = std::max<int>(1, static_cast<int>(val_ds.images.size()) / 4);
    for (int vb = 0; vb < val_batches; ++vb) {
        std::vector<Tensor<float>> crops;
        for (int j = 0; j < 4; ++j) crops.push_back(sample_crop(val_ds, vrng));
        Graph<float> g;
        Binding<float> b(g, store);
        Var x = g.constant(stack_batch(crops));
        Var z = codec.encode_op(b, x);
        Var xr = codec.decode_op(b, z);
        const auto& xv = g.val(x);
        const auto& rv = g.val(xr);
        for (int64_t i = 0; i < xv.numel(); ++i)
            mae += std::abs(static_cast<double>(xv[i]) - rv[i]);
        px_count += xv.numel();
        const auto& zv = g.val(z);
        for (int64_t i = 0; i < zv.numel(); ++i) {
            z_mean += zv[i];
            z_sq += static_cast<double>(zv[i]) * zv[i];
        }
        z_count += zv.numel();
    }
    mae /= static_cast<double>(px_count);
    z_mean /= static_cast<double>(z_count);
    const double z_std = std::sqrt(std::max(1e-12, z_sq / z_count - z_mean * z_mean));
    codec.latent_scale = 1.0 / z_std;

    Container c;
    c.meta["kind"] = "codec";
    c.meta["base_ch"] = cfg.base_ch;
    c.meta["latent_ch"] = cfg.latent_ch;
    c.meta["latent_scale"] = codec.latent_scale;
    c.meta["val_mae"] = mae;
    c.meta["patch"] = cfg.patch;
    c.meta["iterations"] = cfg.iterations;
    for (const auto& name : store.names_with_prefix("codec."))
        c.put_f32(name, store.get(name));
    save_container(c, cfg.out_path);
    if (progress) (*progress) << "codec pretrain done: val MAE " << mae << "\n";
    return mae;
}

}  // namespace d3sr
