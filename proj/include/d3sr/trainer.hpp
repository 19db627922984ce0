#pragma once

#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "d3sr/adversarial.hpp"
#include "d3sr/dataio.hpp"
#include "d3sr/metrics.hpp"
#include "d3sr/networks.hpp"
#include "d3sr/perceptual.hpp"
#include "d3sr/schedule.hpp"

namespace d3sr {

// Decoupled AdamW over a fixed, ordered parameter subset.
template <typename T>
struct AdamW {
    double lr = 5e-5;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int64_t step_count = 0;

    std::vector<std::string> param_names;  // fixed update order
    std::vector<bool> decay;               // per-param weight decay switch
    std::map<std::string, Tensor<T>> m, v;

    void init(const ParamStore<T>& store, std::vector<std::string> names,
              std::vector<bool> decay_flags) {
        param_names = std::move(names);
        decay = std::move(decay_flags);
        for (const auto& n : param_names) {
            m[n] = Tensor<T>::zeros(store.get(n).shape);
            v[n] = Tensor<T>::zeros(store.get(n).shape);
        }
    }

    void update(ParamStore<T>& store, const std::map<std::string, Tensor<T>>& grads) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (size_t i = 0; i < param_names.size(); ++i) {
            const auto& name = param_names[i];
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            const Tensor<T>& g = git->second;
            Tensor<T>& p = store.get(name);
            Tensor<T>& mi = m[name];
            Tensor<T>& vi = v[name];
            const bool wd = decay[i] && weight_decay > 0.0;
            for (int64_t k = 0; k < p.numel(); ++k) {
                const double gk = static_cast<double>(g[k]);
                const double mk = beta1 * mi[k] + (1.0 - beta1) * gk;
                const double vk = beta2 * vi[k] + (1.0 - beta2) * gk * gk;
                mi[k] = static_cast<T>(mk);
                vi[k] = static_cast<T>(vk);
                double pk = static_cast<double>(p[k]);
                if (wd) pk -= lr * weight_decay * pk;
                pk -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + eps);
                p[k] = static_cast<T>(pk);
            }
        }
    }
};

struct TrainConfig {
    // objective
    double lambda1 = 0.1;
    double lambda2 = 1.0;
    int T = 1000;
    int t_l = 500;  // the intermediate generation timestep; most consequential knob
    double beta_start = 1e-4;
    double beta_end = 0.02;
    // optimization
    double lr_g = 5e-5;
    double lr_d = 5e-5;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    double weight_decay = 1e-2;  // adapters only
    int batch_size = 4;
    int iterations = 3000;
    // adapters / architecture
    int rank = 16;
    double lora_alpha = 16.0;
    std::string gen_preset = "base";
    std::string disc_preset = "base";  // none | base | large
    // run control
    uint64_t seed = 1234;
    int eval_interval = 500;
    int checkpoint_interval = 1000;
    int eval_items = 16;
    int threads = 0;  // 0 = auto
    std::string out_dir;
    std::string codec_checkpoint;
    // data
    DatasetSpec data;
    DegradationConfig degradation;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct StepLog {
    int64_t iteration = 0;
    double loss_d = 0.0;
    double loss_g_adv = 0.0;
    double loss_spatial = 0.0;
    double loss_g_total = 0.0;
    double ms = 0.0;
};

struct EvalRecord {
    int64_t iteration = 0;
    double val_dists = 0.0;
    double val_psnr = 0.0;
};

// Alternating adversarial loop: per iteration, one generator forward, one
// discriminator update on freshly-noised detached fakes vs reals, then one
// generator update on spatial + weighted adversarial loss. Only adapter
// factors (and the realism head) move; everything else stays frozen.
class Trainer {
public:
    explicit Trainer(TrainConfig cfg);
    static std::unique_ptr<Trainer> resume(const std::string& checkpoint_path);

    StepLog train_step();
    void run(std::ostream* jsonl_log = nullptr);

    void save_checkpoint(const std::string& path) const;
    nlohmann::json final_report() const;

    // Held-out metrics on the cached validation pairs.
    double eval_val_dists();
    double eval_val_psnr();
    // Mean discriminator scores on held-out reals/fakes, averaged over
    // `draws` seeded timesteps per item. Requires a discriminator.
    std::pair<double, double> eval_val_scores(int draws = 8);

    // Introspection for tests and tools.
    ParamStore<float>& store() { return store_; }
    const TrainConfig& config() const { return cfg_; }
    int64_t iteration() const { return iteration_; }
    const std::vector<StepLog>& history() const { return history_; }
    const std::vector<EvalRecord>& evals() const { return evals_; }
    CodecNet<float>& codec() { return codec_; }
    UNet<float>& denoiser() { return denoiser_; }
    DiscriminatorNet<float>* discriminator() { return disc_ ? &*disc_ : nullptr; }
    LoraSet<float>& lora_g() { return lora_g_; }
    LoraSet<float>& lora_d() { return lora_d_; }
    const NoiseSchedule& schedule() const { return sched_; }
    const FeatureExtractor<float>& extractor() const { return extractor_; }
    std::vector<std::string> g_trainable_names() const;
    std::vector<std::string> d_trainable_names() const;
    bool g_trainable(const std::string& name) const;
    bool d_trainable(const std::string& name) const;

    // (x_L upscaled, x_H) validation pairs, deterministic per config seed.
    const std::vector<std::pair<Tensor<float>, Tensor<float>>>& val_pairs() const {
        return val_pairs_;
    }

private:
    Trainer(TrainConfig cfg, bool defer_state);
    void build_networks(bool load_codec_file);
    void load_data();
    void restore_from(const Container& c);
    Tensor<float> encode_batch(const Tensor<float>& images);

    TrainConfig cfg_;
    NoiseSchedule sched_;
    FeatureExtractor<float> extractor_;
    ParamStore<float> store_;
    CodecNet<float> codec_;
    UNet<float> denoiser_;
    std::optional<DiscriminatorNet<float>> disc_;
    LoraSet<float> lora_g_;
    LoraSet<float> lora_d_;
    AdamW<float> opt_g_;
    AdamW<float> opt_d_;
    Rng rng_g_;
    Rng rng_d_;
    int64_t iteration_ = 0;
    std::vector<StepLog> history_;
    std::vector<EvalRecord> evals_;
    LoadedDataset train_ds_;
    std::vector<std::pair<Tensor<float>, Tensor<float>>> val_pairs_;  // (x_L up, x_H)

    friend std::unique_ptr<Trainer> load_trainer_state(const std::string&);
};

// Checkpoint-backed model without datasets, for inference and evaluation.
struct LoadedModel {
    TrainConfig cfg;
    NoiseSchedule sched;
    ParamStore<float> store;
    CodecNet<float> codec;
    UNet<float> denoiser;
    std::optional<DiscriminatorNet<float>> disc;
    LoraSet<float> lora_g;
    LoraSet<float> lora_d;

    // x4 upscale of an arbitrary (3,H,W) image in [0,1].
    Tensor<float> super_resolve(const Tensor<float>& x_l);
};

LoadedModel load_model(const std::string& checkpoint_path);

// Codec pretraining: reconstruction loss on corpus crops, then latent-scale
// calibration. Returns validation mean absolute reconstruction error.
struct CodecPretrainConfig {
    std::string data_root;
    int base_ch = 16;
    int latent_ch = 4;
    int patch = 64;
    int batch_size = 8;
    int iterations = 1500;
    double lr = 2e-3;
    uint64_t seed = 7;
    std::string out_path;
};

double pretrain_codec(const CodecPretrainConfig& cfg, std::ostream* progress = nullptr);

}  // namespace d3sr
