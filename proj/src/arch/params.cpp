#include "latefuse/arch/params.hpp"

#include <random>

#include "latefuse/core/errors.hpp"

namespace latefuse {

std::string layer_param(int layer, const std::string& leaf) {
    return "h" + std::to_string(layer) + "." + leaf;
}

std::string head_param(int layer, int head, const std::string& leaf) {
    return "h" + std::to_string(layer) + ".ffn.head" + std::to_string(head) + "." + leaf;
}

std::vector<ParamSpec> parameter_layout(const ModelConfig& config) {
    config.validate();
    const std::size_t v = config.vocab_size;
    const std::size_t d = config.d_model;
    const std::size_t s = config.max_seq_len;
    const std::size_t hidden = d * config.ffn_multiplier;
    const std::size_t heads = config.n_heads;
    const std::size_t dh = config.d_head();
    const std::size_t head_hidden = dh * config.ffn_multiplier;

    std::vector<ParamSpec> out;
    auto weight = [&](std::string name, Shape shape) { out.push_back({std::move(name), std::move(shape), InitKind::normal}); };
    auto bias = [&](std::string name, std::size_t n) { out.push_back({std::move(name), {n}, InitKind::zeros}); };
    auto norm = [&](const std::string& prefix) {
        out.push_back({prefix + ".g", {d}, InitKind::ones});
        out.push_back({prefix + ".b", {d}, InitKind::zeros});
    };

    weight("tok_emb", {v, d});
    weight("pos_emb", {s, d});

    for (int l = 0; l < config.n_layers; ++l) {
        auto p = [&](const std::string& leaf) { return layer_param(l, leaf); };
        if (config.single_stream()) {
            norm(p("ln1"));
            weight(p("attn.wq"), {d, d});
            bias(p("attn.bq"), d);
            weight(p("attn.wk"), {d, d});
            bias(p("attn.bk"), d);
            weight(p("attn.wv"), {d, d});
            bias(p("attn.bv"), d);
            weight(p("attn.wo"), {d, d});
            norm(p("ln2"));
            weight(p("ffn.w1"), {d, hidden});
            bias(p("ffn.b1"), hidden);
            weight(p("ffn.w2"), {hidden, d});
            bias(p("ffn.b2"), d);
            continue;
        }

        norm(p("cln_attn"));
        weight(p("attn.wq"), {d, d});
        bias(p("attn.bq"), d);
        weight(p("attn.wk"), {d, d});
        bias(p("attn.bk"), d);
        const bool dense_attn = config.attention_kind() == MixKind::dense;
        if (config.stream_mode == StreamMode::frozen) {
            // Values are the raw token stream; dense attention learns only the
            // head-mixing output map, independent attention places each head
            // back into its own slice.
            if (dense_attn) {
                weight(p("attn.wo"), {d, d});
            }
        } else if (dense_attn) {
            weight(p("attn.wv"), {d, d});
            bias(p("attn.bv"), d);
            weight(p("attn.wo"), {d, d});
        } else {
            out.push_back({p("attn.mix_v"), {heads, heads}, InitKind::identity});
            out.push_back({p("attn.mix_o"), {heads, heads}, InitKind::identity});
        }

        norm(p("cln_ffn"));
        if (config.ffn_kind() == MixKind::dense) {
            weight(p("ffn.w1"), {d, hidden});
            bias(p("ffn.b1"), hidden);
            weight(p("ffn.w2"), {hidden, d});
            bias(p("ffn.b2"), d);
        } else {
            for (int h = 0; h < config.n_heads; ++h) {
                weight(head_param(l, h, "w1"), {dh, head_hidden});
                bias(head_param(l, h, "b1"), head_hidden);
                weight(head_param(l, h, "w2"), {head_hidden, dh});
                bias(head_param(l, h, "b2"), dh);
            }
        }
    }

    norm("ln_f");
    weight("lm_head", {d, v});
    return out;
}

std::int64_t parameter_count(const ModelConfig& config) {
    std::int64_t n = 0;
    for (const auto& spec : parameter_layout(config)) {
        n += static_cast<std::int64_t>(shape_size(spec.shape));
    }
    return n;
}

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 0.02f);
    ParamStore store;
    for (const auto& spec : parameter_layout(config)) {
        Tensor t(spec.shape);
        switch (spec.init) {
            case InitKind::normal:
                for (auto& x : t.data()) x = normal(rng);
                break;
            case InitKind::zeros:
                break;
            case InitKind::ones:
                t.fill(1.0f);
                break;
            case InitKind::identity:
                for (std::size_t i = 0; i < spec.shape[0]; ++i) t(i, i) = 1.0f;
                break;
        }
        store.add(spec.name, std::move(t));
    }
    return store;
}

void check_params_match(const ModelConfig& config, const ParamStore& store) {
    const auto layout = parameter_layout(config);
    if (layout.size() != store.size()) {
        throw CheckpointError(CheckpointError::Kind::config_mismatch,
                              "expected " + std::to_string(layout.size()) + " tensors for " +
                                  std::string(to_string(config.variant)) + ", found " +
                                  std::to_string(store.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].name != store.name(i) || layout[i].shape != store.tensor(i).shape()) {
            throw CheckpointError(CheckpointError::Kind::config_mismatch,
                                  "tensor " + std::to_string(i) + " is '" + store.name(i) + "' " +
                                      shape_string(store.tensor(i).shape()) + ", config expects '" +
                                      layout[i].name + "' " + shape_string(layout[i].shape));
        }
    }
}

}  // namespace latefuse
