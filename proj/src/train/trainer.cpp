#include "latefuse/train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "latefuse/core/errors.hpp"
#include "latefuse/core/ops.hpp"
#include "latefuse/core/optim.hpp"

namespace latefuse {

std::vector<int> tokenize_corpus(const Tokenizer& tokenizer, const Corpus& corpus) {
    std::string joined;
    joined.reserve(corpus.bytes() + 2 * corpus.documents.size());
    for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
        if (i) joined += "\n\n";
        joined += corpus.documents[i];
    }
    return tokenizer.encode(joined);
}

Tokenizer build_tokenizer(const TrainRunConfig& config, const Corpus& train) {
    if (config.tokenizer == TokenizerMode::byte_level) return Tokenizer::byte_level();
    return Tokenizer::train_bpe(train.documents, config.bpe_vocab);
}

std::vector<std::vector<int>> evaluation_windows(std::span<const int> ids, int seq_len, int max_windows) {
    const std::size_t w = static_cast<std::size_t>(seq_len) + 1;
    if (ids.size() < w) {
        throw DataError("token stream of " + std::to_string(ids.size()) + " tokens is shorter than one window of " +
                        std::to_string(w));
    }
    const std::size_t available = (ids.size() - 1) / static_cast<std::size_t>(seq_len);
    const std::size_t n = std::min<std::size_t>(available, static_cast<std::size_t>(max_windows));
    std::vector<std::vector<int>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t slot = n == available ? i : i * available / n;
        const std::size_t begin = slot * static_cast<std::size_t>(seq_len);
        out.emplace_back(ids.begin() + begin, ids.begin() + begin + w);
    }
    return out;
}

double evaluate(const Model& model, std::span<const std::vector<int>> windows) {
    if (windows.empty()) throw DataError("evaluation needs at least one window");
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& win : windows) {
        const std::span<const int> all(win);
        Tape<float> tape;
        auto params = bind_params(tape, model.params(), false);
        auto fwd = forward(tape, model.config(), params, all.first(all.size() - 1));
        Var loss = cross_entropy(tape, fwd.logits, all.subspan(1));
        total += static_cast<double>(tape.value(loss)[0]) * static_cast<double>(all.size() - 1);
        count += all.size() - 1;
    }
    return total / static_cast<double>(count);
}

double learning_rate(const TrainRunConfig& config, int step) {
    const double peak = config.lr;
    if (step < config.warmup_steps) return peak * static_cast<double>(step + 1) / config.warmup_steps;
    const int span = std::max(1, config.steps - config.warmup_steps);
    const double progress = std::min(1.0, static_cast<double>(step - config.warmup_steps) / span);
    const double floor = peak * config.min_lr_ratio;
    return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

// Per-sequence forward/backward, gradients summed into grads. Returns the
// sequence's mean loss.
double accumulate_gradients(const Model& model, std::span<const int> window, std::vector<Tensor>& grads) {
    Tape<float> tape;
    auto params = bind_params(tape, model.params(), true);
    auto fwd = forward(tape, model.config(), params, window.first(window.size() - 1));
    Var loss = cross_entropy(tape, fwd.logits, window.subspan(1));
    tape.backward(loss);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const Var v = params.vars()[i];
        if (!tape.has_grad(v)) continue;
        const auto& g = tape.grad(v);
        float* dst = grads[i].raw();
        for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
    }
    return tape.value(loss)[0];
}

std::string describe(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

TrainResult train(const TrainRunConfig& config, Model model, const Tokenizer& tokenizer,
                  std::span<const int> train_ids, std::span<const std::vector<int>> val_windows,
                  const TrainProgress& progress) {
    config.validate();
    if (model.config().vocab_size != tokenizer.vocab_size()) {
        throw ConfigError("model vocab " + std::to_string(model.config().vocab_size) + " != tokenizer vocab " +
                          std::to_string(tokenizer.vocab_size()));
    }
    const std::size_t w = static_cast<std::size_t>(config.seq_len) + 1;
    if (train_ids.size() < w) {
        throw DataError("training stream has " + std::to_string(train_ids.size()) +
                        " tokens, fewer than one window of " + std::to_string(w));
    }

    TrainResult result{std::move(model), tokenizer, {}, 0.0, 0.0, 0, false};
    Model& m = result.model;
    auto& params = m.params().tensors();

    std::vector<std::uint8_t> decay_mask;
    for (const auto& p : params) decay_mask.push_back(p.rank() == 2 ? 1 : 0);
    AdamState state = AdamState::zeros_like(params);
    std::vector<Tensor> grads;
    for (const auto& p : params) grads.emplace_back(p.shape());

    // Offsets come from a stream separate from parameter initialisation.
    std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ULL + 0x5DEECE66DULL);
    std::uniform_int_distribution<std::size_t> offset(0, train_ids.size() - w);

    result.initial_val_loss = evaluate(m, val_windows);
    result.final_val_loss = result.initial_val_loss;
    result.curve.push_back({0, std::nullopt, result.initial_val_loss});
    if (progress) progress(result.curve.back());

    for (int step = 0; step < config.steps; ++step) {
        for (auto& g : grads) g.fill(0.0f);
        std::vector<std::size_t> starts(static_cast<std::size_t>(config.batch_size));
        for (auto& s : starts) s = offset(rng);

        double loss = 0.0;
        const double lr = learning_rate(config, step);
        try {
            for (const std::size_t s : starts) loss += accumulate_gradients(m, train_ids.subspan(s, w), grads);
        } catch (const NumericalError& e) {
            throw NumericalError("training diverged at step " + std::to_string(step + 1) + " (lr " + describe(lr) +
                                 "): " + e.what());
        }
        loss /= config.batch_size;
        const float inv = 1.0f / static_cast<float>(config.batch_size);
        for (auto& g : grads) {
            for (auto& x : g.data()) x *= inv;
        }
        const double norm = clip_grad_norm(grads, config.grad_clip);
        if (!std::isfinite(loss) || !std::isfinite(norm)) {
            throw NumericalError("training diverged at step " + std::to_string(step + 1) + ": loss " +
                                 describe(loss) + ", gradient norm " + describe(norm) + ", lr " + describe(lr));
        }
        AdamHyper hyper{lr, config.beta1, config.beta2, 1e-8, config.weight_decay};
        adam_step(params, grads, state, hyper, decay_mask);

        LossRecord rec{step + 1, loss, std::nullopt};
        const bool last = step + 1 == config.steps;
        if ((step + 1) % config.eval_interval == 0 || last) {
            rec.val_loss = evaluate(m, val_windows);
            result.final_val_loss = *rec.val_loss;
        }
        result.curve.push_back(rec);
        result.steps_run = step + 1;
        if (progress) progress(rec);
        if (rec.val_loss && config.target_val_loss > 0.0 && *rec.val_loss <= config.target_val_loss) {
            result.stopped_early = !last;
            break;
        }
    }
    return result;
}

TrainResult train(const TrainRunConfig& config, const Corpus& train_corpus, const Corpus& val_corpus,
                  const TrainProgress& progress) {
    config.validate();
    Tokenizer tokenizer = build_tokenizer(config, train_corpus);
    ModelConfig mc = config.model;
    mc.vocab_size = tokenizer.vocab_size();
    const auto train_ids = tokenize_corpus(tokenizer, train_corpus);
    const auto val_ids = tokenize_corpus(tokenizer, val_corpus);
    const auto windows = evaluation_windows(val_ids, config.seq_len, config.eval_windows);
    return train(config, Model::initialize(mc, config.seed), tokenizer, train_ids, windows, progress);
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> curve) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write '" + path.string() + "'");
    f << "step,train_loss,val_loss\n";
    char buf[32];
    auto cell = [&](const std::optional<double>& v) -> std::string {
        if (!v) return "";
        std::snprintf(buf, sizeof buf, "%.6f", *v);
        return buf;
    };
    for (const auto& r : curve) f << r.step << ',' << cell(r.train_loss) << ',' << cell(r.val_loss) << '\n';
}

}  // namespace latefuse
