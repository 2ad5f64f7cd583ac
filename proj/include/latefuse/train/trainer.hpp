#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "latefuse/arch/model.hpp"
#include "latefuse/train/corpus.hpp"
#include "latefuse/train/run_config.hpp"
#include "latefuse/train/tokenizer.hpp"

namespace latefuse {

// Documents joined by blank lines, as one id stream.
std::vector<int> tokenize_corpus(const Tokenizer& tokenizer, const Corpus& corpus);

// Byte-level tokenizer, or BPE learned from the corpus.
Tokenizer build_tokenizer(const TrainRunConfig& config, const Corpus& train);

// Fixed evaluation windows of seq_len + 1 tokens, non-overlapping, evenly
// spread over the stream when there are more than max_windows. Throws
// DataError when the stream is shorter than one window.
std::vector<std::vector<int>> evaluation_windows(std::span<const int> ids, int seq_len, int max_windows);

// Mean next-token negative log-likelihood over every position of every
// window. Does not touch the parameters.
double evaluate(const Model& model, std::span<const std::vector<int>> windows);

// Linear warmup then cosine decay to lr * min_lr_ratio at the last step.
double learning_rate(const TrainRunConfig& config, int step);

struct LossRecord {
    int step = 0;
    std::optional<double> train_loss;
    std::optional<double> val_loss;
};

struct TrainResult {
    Model model;
    Tokenizer tokenizer;
    std::vector<LossRecord> curve;  // step 0 holds the initial validation loss
    double initial_val_loss = 0.0;
    double final_val_loss = 0.0;
    int steps_run = 0;
    bool stopped_early = false;
};

using TrainProgress = std::function<void(const LossRecord&)>;

// Next-token cross-entropy training with AdamW. Each step draws batch_size
// windows at seeded random offsets; the result depends only on (config,
// corpora). A non-finite loss or gradient aborts with NumericalError naming
// the step.
TrainResult train(const TrainRunConfig& config, const Corpus& train_corpus, const Corpus& val_corpus,
                  const TrainProgress& progress = {});

// Same, with a caller-provided tokenizer and initial model.
TrainResult train(const TrainRunConfig& config, Model model, const Tokenizer& tokenizer,
                  std::span<const int> train_ids, std::span<const std::vector<int>> val_windows,
                  const TrainProgress& progress = {});

// "step,train_loss,val_loss" with empty cells where a value was not measured.
void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> curve);

}  // namespace latefuse
