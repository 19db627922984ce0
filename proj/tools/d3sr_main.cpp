#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "d3sr/cli_commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"One-step latent-diffusion super-resolution trainer and tools"};
    app.require_subcommand(1);

    std::string config_path;
    auto* train = app.add_subcommand("train", "Run the adversarial training loop");
    train->add_option("--config", config_path, "Training config (JSON)")->required();

    std::string ckpt, input, output;
    bool assert_one_step = false;
    auto* infer = app.add_subcommand("infer", "x4 upscale one PNG with a trained checkpoint");
    infer->add_option("--checkpoint", ckpt, "Training checkpoint")->required();
    infer->add_option("--input", input, "Input PNG")->required();
    infer->add_option("--output", output, "Output PNG")->required();
    infer->add_flag("--assert-one-step", assert_one_step,
                    "Fail unless exactly one denoiser evaluation ran");

    std::string eval_ckpt, eval_stub, eval_data, eval_out;
    auto* eval = app.add_subcommand("eval", "Full-reference metrics over an lr/hr pair directory");
    eval->add_option("--checkpoint", eval_ckpt, "Training checkpoint");
    eval->add_option("--stub", eval_stub, "Reference stub instead: identity|bicubic|nearest");
    eval->add_option("--data", eval_data, "Directory containing lr/ and hr/")->required();
    eval->add_option("--output", eval_out, "Report file prefix (.csv/.txt)")->required();

    std::string deg_in, deg_out, deg_cfg;
    uint64_t deg_seed = 0;
    auto* degrade = app.add_subcommand("degrade", "Synthesize LR images from an HR directory");
    degrade->add_option("--input", deg_in, "HR input directory")->required();
    degrade->add_option("--output", deg_out, "LR output directory")->required();
    degrade->add_option("--seed", deg_seed, "Root seed")->required();
    degrade->add_option("--config", deg_cfg, "Degradation config (JSON), defaults when omitted");

    std::string pf_ckpt, pf_data, pf_out;
    uint64_t pf_seed = 0;
    int pf_count = 32;
    auto* plotf = app.add_subcommand(
        "plot-features", "Project discriminator middle-block features of real vs generated");
    plotf->add_option("--checkpoint", pf_ckpt, "Training checkpoint")->required();
    plotf->add_option("--data", pf_data, "Directory containing lr/ and hr/")->required();
    plotf->add_option("--output", pf_out, "Output prefix (.csv/.png/.json)")->required();
    plotf->add_option("--seed", pf_seed, "Subsampling seed");
    plotf->add_option("--count", pf_count, "Pairs to project (0 = all)");

    std::string pc_data, pc_out;
    int pc_iters = 0;
    uint64_t pc_seed = 7;
    auto* pc = app.add_subcommand("pretrain-codec", "Pretrain and freeze the latent codec");
    pc->add_option("--data", pc_data, "Corpus root containing train/ and val/")->required();
    pc->add_option("--output", pc_out, "Codec checkpoint path")->required();
    pc->add_option("--iterations", pc_iters, "Training iterations (default 1500)");
    pc->add_option("--seed", pc_seed, "Seed");

    std::string gd_out;
    int gd_train = 64, gd_val = 16, gd_size = 96;
    uint64_t gd_seed = 1;
    auto* gd = app.add_subcommand("gen-data", "Generate the procedural toy corpus");
    gd->add_option("--output", gd_out, "Corpus root")->required();
    gd->add_option("--train", gd_train, "Train image count");
    gd->add_option("--val", gd_val, "Val image count");
    gd->add_option("--size", gd_size, "Image side length");
    gd->add_option("--seed", gd_seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // --help exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return d3sr::kExitUsage;
    }

    if (train->parsed()) return d3sr::cmd_train(config_path);
    if (infer->parsed()) return d3sr::cmd_infer(ckpt, input, output, assert_one_step);
    if (eval->parsed()) return d3sr::cmd_eval(eval_ckpt, eval_stub, eval_data, eval_out);
    if (degrade->parsed()) return d3sr::cmd_degrade(deg_in, deg_out, deg_seed, deg_cfg);
    if (plotf->parsed()) return d3sr::cmd_plot_features(pf_ckpt, pf_data, pf_out, pf_seed, pf_count);
    if (pc->parsed()) return d3sr::cmd_pretrain_codec(pc_data, pc_out, pc_iters, pc_seed);
    if (gd->parsed()) return d3sr::cmd_gen_data(gd_out, gd_train, gd_val, gd_size, gd_seed);
    return d3sr::kExitUsage;
}
