#pragma once

#include <cstdint>
#include <string>

namespace d3sr {

// Exit code contract: 0 success, 1 usage/config, 2 runtime, 3 data error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitData = 3;

int cmd_train(const std::string& config_path);
int cmd_infer(const std::string& checkpoint, const std::string& input, const std::string& output,
              bool assert_one_step);
int cmd_eval(const std::string& checkpoint, const std::string& stub, const std::string& data_dir,
             const std::string& out_prefix);
int cmd_degrade(const std::string& input_dir, const std::string& output_dir, uint64_t seed,
                const std::string& deg_config_path);
int cmd_plot_features(const std::string& checkpoint, const std::string& data_dir,
                      const std::string& out_prefix, uint64_t seed, int count);
int cmd_pretrain_codec(const std::string& data_root, const std::string& out_path, int iterations,
                       uint64_t seed);
int cmd_gen_data(const std::string& out_root, int train_count, int val_count, int size,
                 uint64_t seed);

}  // namespace d3sr
