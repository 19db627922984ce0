#include "d3sr/cli_commands.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "d3sr/container.hpp"
#include "d3sr/errors.hpp"
#include "d3sr/image_io.hpp"
#include "d3sr/imageproc.hpp"
#include "d3sr/trainer.hpp"

namespace fs = std::filesystem;

namespace d3sr {

namespace {

template <typename Fn>
int run_guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const config_error& e) {
        std::cerr << "error: invalid configuration: " << e.what() << "\n";
        return kExitUsage;
    } catch (const data_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

nlohmann::json read_json_file(const std::string& path, const char* field) {
    std::ifstream f(path);
    if (!f) throw config_error(field, "cannot read file '" + path + "'");
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(field, "malformed JSON in '" + path + "': " + e.what());
    }
}

}  // namespace

int cmd_train(const std::string& config_path) {
    return run_guarded([&]() {
        const nlohmann::json j = read_json_file(config_path, "config");
        TrainConfig cfg = TrainConfig::from_json(j);
        Trainer trainer(cfg);
        std::ofstream log;
        if (!cfg.out_dir.empty()) {
            fs::create_directories(cfg.out_dir);
            log.open(cfg.out_dir + "/log.jsonl");
            std::ofstream snapshot(cfg.out_dir + "/config.json");
            snapshot << cfg.to_json().dump(2) << "\n";
        }
        trainer.run(log.is_open() ? &log : nullptr);
        std::cout << "training finished after " << trainer.iteration() << " iterations\n";
        return kExitOk;
    });
}

int cmd_infer(const std::string& checkpoint, const std::string& input, const std::string& output,
              bool assert_one_step) {
    return run_guarded([&]() {
        LoadedModel model = load_model(checkpoint);
        const Tensor<float> x_l = read_png(input);
        const int64_t before = model.denoiser.eval_count;
        const Tensor<float> x_hat = model.super_resolve(x_l);
        const int64_t evals = model.denoiser.eval_count - before;
        if (assert_one_step && evals != 1) {
            std::cerr << "error: expected exactly one denoiser evaluation, observed " << evals
                      << "\n";
            return kExitRuntime;
        }
        write_png(output, x_hat);
        std::cout << "wrote " << output << " (" << x_hat.dim(2) << "x" << x_hat.dim(1)
                  << ", denoiser evaluations: " << evals << ")\n";
        return kExitOk;
    });
}

int cmd_eval(const std::string& checkpoint, const std::string& stub, const std::string& data_dir,
             const std::string& out_prefix) {
    return run_guarded([&]() {
        const FeatureExtractor<float> ex = FeatureExtractor<float>::seeded_default();
        SrFn sr;
        std::string id;
        std::optional<LoadedModel> model;
        if (!stub.empty()) {
            if (stub == "identity")
                sr = identity_stub();
            else if (stub == "bicubic")
                sr = bicubic_stub();
            else if (stub == "nearest")
                sr = nearest_stub();
            else
                throw config_error("stub", "must be identity, bicubic or nearest");
            id = "stub:" + stub;
        } else {
            if (checkpoint.empty())
                throw config_error("checkpoint", "either --checkpoint or --stub is required");
            model.emplace(load_model(checkpoint));
            sr = [&model](const Tensor<float>& lr, const Tensor<float>&) {
                return model->super_resolve(lr);
            };
            id = checkpoint;
        }
        MetricReport report = evaluate_dataset(sr, data_dir, ex, id);
        {
            std::ofstream csv(out_prefix + ".csv");
            if (!csv) throw io_error("cannot write " + out_prefix + ".csv");
            csv << report.to_csv();
        }
        {
            std::ofstream txt(out_prefix + ".txt");
            txt << report.summary();
        }
        std::cout << report.summary();
        return kExitOk;
    });
}

int cmd_degrade(const std::string& input_dir, const std::string& output_dir, uint64_t seed,
                const std::string& deg_config_path) {
    return run_guarded([&]() {
        DegradationConfig deg;
        if (!deg_config_path.empty())
            deg = DegradationConfig::from_json(read_json_file(deg_config_path, "degradation"));
        const Manifest manifest = build_manifest(input_dir);
        fs::create_directories(output_dir);

        nlohmann::json sampled = {{"blur_sigma", nlohmann::json::array()},
                                  {"resize_scale", nlohmann::json::array()},
                                  {"noise_sigma", nlohmann::json::array()},
                                  {"jpeg_quality", nlohmann::json::array()}};
        for (size_t i = 0; i < manifest.entries.size(); ++i) {
            const auto& entry = manifest.entries[i];
            const Tensor<float> x_h = read_png(input_dir + "/" + entry.name);
            const DegradationRecipe recipe =
                make_recipe(derive_seed(seed, 0xD6, static_cast<uint64_t>(i)), deg);
            const Tensor<float> x_l = apply_degradation(x_h, recipe);
            write_png(output_dir + "/" + entry.name, x_l);
            std::ofstream sidecar(output_dir + "/" + entry.name + ".recipe.json");
            sidecar << recipe.serialize() << "\n";
            for (const auto& op : recipe.ops) {
                switch (op.kind) {
                    case DegOp::Kind::gaussian_blur: sampled["blur_sigma"].push_back(op.sigma); break;
                    case DegOp::Kind::resize: sampled["resize_scale"].push_back(op.scale); break;
                    case DegOp::Kind::gaussian_noise:
                        sampled["noise_sigma"].push_back(op.noise_sigma);
                        break;
                    case DegOp::Kind::jpeg: sampled["jpeg_quality"].push_back(op.quality); break;
                }
            }
        }
        nlohmann::json report{{"seed", seed},
                              {"config", deg.to_json()},
                              {"images", manifest.entries.size()},
                              {"sampled", sampled}};
        std::ofstream rep(output_dir + "/params_report.json");
        rep << report.dump(2) << "\n";
        std::cout << "degraded " << manifest.entries.size() << " images into " << output_dir
                  << "\n";
        return kExitOk;
    });
}

int cmd_plot_features(const std::string& checkpoint, const std::string& data_dir,
                      const std::string& out_prefix, uint64_t seed, int count) {
    return run_guarded([&]() {
        LoadedModel model = load_model(checkpoint);
        if (!model.disc)
            throw data_error("checkpoint has no discriminator (trained with disc_preset none)");

        const std::string lr_dir = data_dir + "/lr", hr_dir = data_dir + "/hr";
        if (!fs::is_directory(hr_dir)) throw data_error("missing ground-truth folder: " + hr_dir);
        if (!fs::is_directory(lr_dir)) throw data_error("missing input folder: " + lr_dir);
        const Manifest manifest = build_manifest(hr_dir);

        std::vector<size_t> order(manifest.entries.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(seed, 0xF1C));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
        const size_t n = std::min<size_t>(order.size(), count > 0 ? static_cast<size_t>(count)
                                                                  : order.size());

        // Pooled middle-block features of clean latents at t=0, first 100
        // channels (or all, if the trunk is narrower).
        const int feat_dim = std::min(100, model.disc->trunk.cfg.ch2);
        std::vector<std::vector<double>> features;  // 2n rows
        std::vector<int> labels;                    // 1 = real, 0 = generated

        auto middle_pooled = [&](const Tensor<float>& z) {
            Graph<float> g;
            Binding<float> b(g, model.store);
            b.add_lora(&model.lora_d);
            Var zv = g.constant(Tensor<float>{{1, z.dim(0), z.dim(1), z.dim(2)}, 0});
            g.mutable_val(zv).data = z.data;
            Var mid = model.disc->trunk.forward_op(b, zv, {0}, /*trunk_only=*/true).middle;
            Var pooled = mean_hw(g, mid);  // (1, C)
            const auto& pv = g.val(pooled);
            std::vector<double> row(static_cast<size_t>(feat_dim));
            for (int c = 0; c < feat_dim; ++c) row[static_cast<size_t>(c)] = pv[c];
            return row;
        };

        for (size_t k = 0; k < n; ++k) {
            const auto& entry = manifest.entries[order[k]];
            const Tensor<float> hr = read_png(hr_dir + "/" + entry.name);
            const std::string lr_path = lr_dir + "/" + entry.name;
            if (!fs::exists(lr_path)) throw data_error("missing LR input: " + lr_path);
            const Tensor<float> lr = read_png(lr_path);

            const Tensor<float> z_real = codec_encode(model.codec, model.store, hr);
            auto [x_hat, z_fake] = generate(model.codec, model.denoiser, model.store,
                                            &model.lora_g, upscale_x4_bicubic(lr), model.cfg.t_l,
                                            model.sched);
            features.push_back(middle_pooled(z_real));
            labels.push_back(1);
            features.push_back(middle_pooled(z_fake));
            labels.push_back(0);
        }

        // principal-component projection to 2-D
        const size_t rows = features.size();
        Eigen::MatrixXd X(static_cast<Eigen::Index>(rows), feat_dim);
        for (size_t i = 0; i < rows; ++i)
            for (int c = 0; c < feat_dim; ++c)
                X(static_cast<Eigen::Index>(i), c) = features[i][static_cast<size_t>(c)];
        const Eigen::RowVectorXd mean = X.colwise().mean();
        X.rowwise() -= mean;
        const Eigen::MatrixXd cov = (X.transpose() * X) / std::max<double>(1.0, rows - 1.0);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        Eigen::MatrixXd pcs = es.eigenvectors().rightCols(2).rowwise().reverse();
        for (int c = 0; c < 2; ++c) {  // deterministic sign
            Eigen::Index argmax = 0;
            pcs.col(c).cwiseAbs().maxCoeff(&argmax);
            if (pcs(argmax, c) < 0) pcs.col(c) = -pcs.col(c);
        }
        const Eigen::MatrixXd proj = X * pcs;

        std::ofstream csv(out_prefix + ".csv");
        if (!csv) throw io_error("cannot write " + out_prefix + ".csv");
        csv << "label,pc1,pc2\n";
        csv.precision(10);
        for (size_t i = 0; i < rows; ++i)
            csv << (labels[i] ? "real" : "generated") << ","
                << proj(static_cast<Eigen::Index>(i), 0) << ","
                << proj(static_cast<Eigen::Index>(i), 1) << "\n";
        csv.close();

        Eigen::RowVector2d c_real = Eigen::RowVector2d::Zero(),
                           c_fake = Eigen::RowVector2d::Zero();
        int n_real = 0, n_fake = 0;
        for (size_t i = 0; i < rows; ++i) {
            if (labels[i]) {
                c_real += proj.row(static_cast<Eigen::Index>(i));
                ++n_real;
            } else {
                c_fake += proj.row(static_cast<Eigen::Index>(i));
                ++n_fake;
            }
        }
        c_real /= std::max(1, n_real);
        c_fake /= std::max(1, n_fake);
        const double centroid_distance = (c_real - c_fake).norm();
        {
            std::ofstream js(out_prefix + ".json");
            js << nlohmann::json{{"samples", n}, {"rows", rows},
                                 {"centroid_distance", centroid_distance}}
                      .dump(2)
               << "\n";
        }

        // best-effort scatter render
        try {
            const int S = 512, margin = 32;
            Tensor<float> canvas({3, S, S}, 1.0f);
            const double x0 = proj.col(0).minCoeff(), x1 = proj.col(0).maxCoeff();
            const double y0 = proj.col(1).minCoeff(), y1 = proj.col(1).maxCoeff();
            auto to_px = [&](double v, double lo, double hi) {
                const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
                return margin + static_cast<int>(t * (S - 2 * margin));
            };
            for (size_t i = 0; i < rows; ++i) {
                const int px = to_px(proj(static_cast<Eigen::Index>(i), 0), x0, x1);
                const int py = S - 1 - to_px(proj(static_cast<Eigen::Index>(i), 1), y0, y1);
                for (int dy = -2; dy <= 2; ++dy)
                    for (int dx = -2; dx <= 2; ++dx) {
                        const int yy = std::clamp(py + dy, 0, S - 1);
                        const int xx = std::clamp(px + dx, 0, S - 1);
                        canvas.at3(0, yy, xx) = labels[i] ? 0.85f : 0.1f;
                        canvas.at3(1, yy, xx) = 0.15f;
                        canvas.at3(2, yy, xx) = labels[i] ? 0.1f : 0.85f;
                    }
            }
            write_png(out_prefix + ".png", canvas);
        } catch (const std::exception& e) {
            std::cerr << "note: scatter render skipped: " << e.what() << "\n";
        }

        std::cout << "wrote " << rows << " projected rows; centroid distance "
                  << centroid_distance << "\n";
        return kExitOk;
    });
}

int cmd_pretrain_codec(const std::string& data_root, const std::string& out_path, int iterations,
                       uint64_t seed) {
    return run_guarded([&]() {
        CodecPretrainConfig cfg;
        cfg.data_root = data_root;
        cfg.out_path = out_path;
        if (iterations > 0) cfg.iterations = iterations;
        cfg.seed = seed;
        const double mae = pretrain_codec(cfg, &std::cout);
        std::cout << "codec saved to " << out_path << " (val MAE " << mae << ")\n";
        return kExitOk;
    });
}

int cmd_gen_data(const std::string& out_root, int train_count, int val_count, int size,
                 uint64_t seed) {
    return run_guarded([&]() {
        generate_toy_corpus_splits(out_root, train_count, val_count, size, seed);
        std::cout << "wrote " << train_count << " train / " << val_count << " val images ("
                  << size << "x" << size << ") under " << out_root << "\n";
        return kExitOk;
    });
}

}  // namespace d3sr
