#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latefuse/arch/model_config.hpp"
#include "latefuse/train/tokenizer.hpp"

namespace latefuse {

// Everything that determines a training run. Together with the corpus bytes
// this fixes the resulting checkpoint.
struct TrainRunConfig {
    ModelConfig model;  // vocab_size is taken from the tokenizer at train time

    std::string corpus;  // path; relative paths resolve against the config file
    TokenizerMode tokenizer = TokenizerMode::byte_level;
    int bpe_vocab = 512;

    std::uint64_t seed = 1;
    int batch_size = 32;
    int seq_len = 128;
    int steps = 2000;
    double lr = 3e-4;
    double min_lr_ratio = 0.1;  // cosine floor as a fraction of lr
    int warmup_steps = 100;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double grad_clip = 1.0;  // 0 disables clipping
    int eval_interval = 100;
    int eval_windows = 64;
    // Stop once validation loss (checked every eval_interval) is at or below
    // this value. 0 disables early stopping.
    double target_val_loss = 0.0;
    std::string checkpoint = "model.ckpt";

    // Throws ConfigError naming the offending key.
    void validate() const;

    friend bool operator==(const TrainRunConfig&, const TrainRunConfig&) = default;
};

// Key names accepted in config files, in documentation order.
const std::vector<std::string>& run_config_keys();

// Parses `key = value` lines (TOML subset, '#' comments). Unknown keys,
// unparsable values and missing files raise ConfigError.
TrainRunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
TrainRunConfig load_run_config(const std::filesystem::path& path);

// Applies one key/value pair; shared by the file parser and CLI overrides.
void set_run_config_value(TrainRunConfig& config, std::string_view key, std::string_view value);

// Canonical text form; parse_run_config(to_text(c)) == c.
std::string to_text(const TrainRunConfig& config);
nlohmann::json to_json(const TrainRunConfig& config);
// Inverse of to_json; validates.
TrainRunConfig run_config_from_json(const nlohmann::json& j);

}  // namespace latefuse
