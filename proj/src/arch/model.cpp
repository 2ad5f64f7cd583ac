#include "latefuse/arch/model.hpp"

#include <cmath>

#include "latefuse/core/errors.hpp"
#include "latefuse/core/ops.hpp"

namespace latefuse {

void GateAssignment::set(int layer, int head, double g) {
    if (!(g >= 0.0 && g <= 1.0)) {
        throw ConfigError("gate for L" + std::to_string(layer) + ".H" + std::to_string(head) +
                          " must lie in [0, 1], got " + std::to_string(g));
    }
    if (layer < 0 || head < 0) {
        throw ConfigError("negative head index in gate assignment");
    }
    gates_[{layer, head}] = g;
}

double GateAssignment::get(int layer, int head) const {
    const auto it = gates_.find({layer, head});
    return it == gates_.end() ? 1.0 : it->second;
}

GateAssignment GateAssignment::uniform(std::span<const HeadId> heads, double g) {
    GateAssignment out;
    for (const auto& h : heads) out.set(h, g);
    return out;
}

std::string_view to_string(StreamEventKind kind) {
    switch (kind) {
        case StreamEventKind::write_token_stream: return "write_token_stream";
        case StreamEventKind::write_embedding_stream: return "write_embedding_stream";
        case StreamEventKind::write_residual: return "write_residual";
        case StreamEventKind::read_combined: return "read_combined";
        case StreamEventKind::output_fusion: return "output_fusion";
    }
    return "?";
}

template <typename T>
BoundParams<T> bind_params(Tape<T>& tape, const BasicParamStore<T>& store, bool trainable) {
    std::vector<Var> vars;
    vars.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) vars.push_back(tape.borrow(store.tensor(i), trainable));
    return BoundParams<T>(store, std::move(vars));
}

namespace {

template <typename T>
void emit(BasicForwardObserver<T>* observer, StreamEventKind kind, int layer, std::string_view source) {
    if (observer) observer->on_event({kind, layer, source});
}

template <typename T>
void report_state(Tape<T>& tape, BasicForwardObserver<T>* observer, int layer, const StreamState& s) {
    if (!observer) return;
    static const BasicTensor<T> none;
    observer->on_layer_state(layer, tape.value(s.token), s.embedding.valid() ? tape.value(s.embedding) : none);
}

template <typename T>
Var gated(Tape<T>& tape, Var ctx, const GateAssignment* gates, int layer, int head) {
    if (!gates) return ctx;
    const double g = gates->get(layer, head);
    return g == 1.0 ? ctx : scale(tape, ctx, static_cast<T>(g));
}

// Causal attention per head given projected queries/keys/values, each
// [T x d]. Returns the gated per-head contexts concatenated back to [T x d].
template <typename T>
Var multi_head(Tape<T>& tape, const ModelConfig& config, int layer, Var q, Var k, Var v,
               const GateAssignment* gates, bool capture, std::vector<BasicTensor<T>>* trace) {
    const std::size_t dh = config.d_head();
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Var> heads;
    heads.reserve(config.n_heads);
    for (int h = 0; h < config.n_heads; ++h) {
        const std::size_t begin = h * dh;
        Var qh = slice_cols(tape, q, begin, dh);
        Var kh = slice_cols(tape, k, begin, dh);
        Var vh = slice_cols(tape, v, begin, dh);
        Var p = softmax_rows(tape, scale(tape, matmul_nt(tape, qh, kh), inv_sqrt), Mask::causal);
        if (capture) trace->push_back(tape.value(p));
        heads.push_back(gated(tape, matmul(tape, p, vh), gates, layer, h));
    }
    return config.n_heads == 1 ? heads.front() : concat_cols(tape, std::span<const Var>(heads));
}

template <typename T>
Var combined(Tape<T>& tape, const StreamState& s) {
    return add(tape, s.token, s.embedding);
}

}  // namespace

template <typename T>
StreamState embed(Tape<T>& tape, const ModelConfig& config, const BoundParams<T>& params,
                  std::span<const int> ids) {
    if (ids.empty()) throw DataError("cannot run the model on an empty sequence");
    if (ids.size() > static_cast<std::size_t>(config.max_seq_len)) {
        throw DimensionError("sequence length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                             std::to_string(config.max_seq_len));
    }
    std::vector<int> positions(ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    Var tok = embedding(tape, params("tok_emb"), ids);
    Var pos = embedding(tape, params("pos_emb"), std::span<const int>(positions));
    StreamState s;
    s.token = add(tape, tok, pos);
    s.layer = 0;
    if (!config.single_stream()) {
        s.embedding = tape.constant(BasicTensor<T>::matrix(ids.size(), config.d_model, T(0)));
    }
    return s;
}

template <typename T>
Var channel_layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, int n_heads) {
    return grouped_layer_norm(tape, x, gain, bias, static_cast<std::size_t>(n_heads));
}

template <typename T>
AttentionOutput<T> fts_attention(Tape<T>& tape, const ModelConfig& config, const BoundParams<T>& params,
                                 int layer, const StreamState& state, const GateAssignment* gates,
                                 bool capture) {
    auto p = [&](const char* leaf) { return params(layer_param(layer, leaf)); };
    Var x = channel_layer_norm(tape, combined(tape, state), p("cln_attn.g"), p("cln_attn.b"), config.n_heads);
    Var q = add_row(tape, matmul(tape, x, p("attn.wq")), p("attn.bq"));
    Var k = add_row(tape, matmul(tape, x, p("attn.wk")), p("attn.bk"));

    const bool dense = config.attention_kind() == MixKind::dense;
    const bool frozen = config.stream_mode == StreamMode::frozen;
    Var v = state.token;
    if (!frozen) {
        v = dense ? add_row(tape, matmul(tape, state.token, p("attn.wv")), p("attn.bv"))
                  : kron_mix(tape, state.token, p("attn.mix_v"));
    }

    AttentionOutput<T> out;
    Var ctx = multi_head(tape, config, layer, q, k, v, gates, capture, &out.trace);
    if (dense) {
        out.delta = matmul(tape, ctx, p("attn.wo"));
    } else {
        out.delta = frozen ? ctx : kron_mix(tape, ctx, p("attn.mix_o"));
    }
    return out;
}

template <typename T>
AttentionOutput<T> std_attention(Tape<T>& tape, const ModelConfig& config, const BoundParams<T>& params,
                                 int layer, Var x, const GateAssignment* gates, bool capture) {
    auto p = [&](const char* leaf) { return params(layer_param(layer, leaf)); };
    Var q = add_row(tape, matmul(tape, x, p("attn.wq")), p("attn.bq"));
    Var k = add_row(tape, matmul(tape, x, p("attn.wk")), p("attn.bk"));
    Var v = add_row(tape, matmul(tape, x, p("attn.wv")), p("attn.bv"));
    AttentionOutput<T> out;
    Var ctx = multi_head(tape, config, layer, q, k, v, gates, capture, &out.trace);
    out.delta = matmul(tape, ctx, p("attn.wo"));
    return out;
}

namespace {

template <typename T>
Var dense_ffn(Tape<T>& tape, Var x, Var w1, Var b1, Var w2, Var b2) {
    Var hidden = gelu(tape, add_row(tape, matmul(tape, x, w1), b1));
    return add_row(tape, matmul(tape, hidden, w2), b2);
}

}  // namespace

template <typename T>
Var ffn_update(Tape<T>& tape, const ModelConfig& config, const BoundParams<T>& params, int layer,
               const StreamState& state) {
    auto p = [&](const char* leaf) { return params(layer_param(layer, leaf)); };
    Var x = channel_layer_norm(tape, combined(tape, state), p("cln_ffn.g"), p("cln_ffn.b"), config.n_heads);
    if (config.ffn_kind() == MixKind::dense) {
        return dense_ffn(tape, x, p("ffn.w1"), p("ffn.b1"), p("ffn.w2"), p("ffn.b2"));
    }
    const std::size_t dh = config.d_head();
    std::vector<Var> heads;
    heads.reserve(config.n_heads);
    for (int h = 0; h < config.n_heads; ++h) {
        auto hp = [&](const char* leaf) { return params(head_param(layer, h, leaf)); };
        Var xh = slice_cols(tape, x, h * dh, dh);
        heads.push_back(dense_ffn(tape, xh, hp("w1"), hp("b1"), hp("w2"), hp("b2")));
    }
    return config.n_heads == 1 ? heads.front() : concat_cols(tape, std::span<const Var>(heads));
}

template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const ModelConfig& config, const BoundParams<T>& params,
                         std::span<const int> ids, const ForwardOptions<T>& options) {
    auto* obs = options.observer;
    ForwardResult<T> result;
    result.attention.n_layers = config.n_layers;
    result.attention.n_heads = config.n_heads;

    StreamState s = embed(tape, config, params, ids);
    emit(obs, StreamEventKind::write_token_stream, -1, "embedding");
    report_state(tape, obs, -1, s);

    auto keep = [&](AttentionOutput<T>& a) {
        for (auto& m : a.trace) result.attention.matrices.push_back(std::move(m));
    };

    for (int l = 0; l < config.n_layers; ++l) {
        auto p = [&](const char* leaf) { return params(layer_param(l, leaf)); };
        if (config.single_stream()) {
            Var x = layer_norm(tape, s.token, p("ln1.g"), p("ln1.b"));
            auto attn = std_attention(tape, config, params, l, x, options.gates, options.capture);
            keep(attn);
            s.token = add(tape, s.token, attn.delta);
            emit(obs, StreamEventKind::write_residual, l, "attention");
            Var x2 = layer_norm(tape, s.token, p("ln2.g"), p("ln2.b"));
            s.token = add(tape, s.token,
                          dense_ffn(tape, x2, p("ffn.w1"), p("ffn.b1"), p("ffn.w2"), p("ffn.b2")));
            emit(obs, StreamEventKind::write_residual, l, "ffn");
        } else {
            emit(obs, StreamEventKind::read_combined, l, "attention");
            auto attn = fts_attention(tape, config, params, l, s, options.gates, options.capture);
            keep(attn);
            if (config.stream_mode == StreamMode::frozen) {
                s.embedding = add(tape, s.embedding, attn.delta);
                emit(obs, StreamEventKind::write_embedding_stream, l, "attention");
            } else {
                s.token = add(tape, s.token, attn.delta);
                emit(obs, StreamEventKind::write_token_stream, l, "attention");
            }
            emit(obs, StreamEventKind::read_combined, l, "ffn");
            s.embedding = add(tape, s.embedding, ffn_update(tape, config, params, l, s));
            emit(obs, StreamEventKind::write_embedding_stream, l, "ffn");
        }
        s.layer = l + 1;
        report_state(tape, obs, l, s);
    }

    Var head_input = s.token;
    if (!config.single_stream() && !options.zero_embedding_stream_at_head) head_input = combined(tape, s);
    result.fused = layer_norm(tape, head_input, params("ln_f.g"), params("ln_f.b"));
    emit(obs, StreamEventKind::output_fusion, config.n_layers, "lm_head");
    result.logits = matmul(tape, result.fused, params("lm_head"));
    result.final_state = s;
    return result;
}

Model::Model(ModelConfig config, ParamStore params) : config_(std::move(config)), params_(std::move(params)) {
    check_params_match(config_, params_);
}

Model Model::initialize(const ModelConfig& config, std::uint64_t seed) {
    return Model(config, init_params(config, seed));
}

Model::Output Model::run(std::span<const int> ids, const ForwardOptions<float>& options) const {
    Tape<float> tape;
    auto bound = bind_params(tape, params_, false);
    auto fwd = forward(tape, config_, bound, ids, options);
    Output out;
    out.logits = tape.value(fwd.logits);
    out.attention = std::move(fwd.attention);
    return out;
}

#define LATEFUSE_INSTANTIATE_MODEL(T)                                                                      \
    template BoundParams<T> bind_params(Tape<T>&, const BasicParamStore<T>&, bool);                       \
    template StreamState embed(Tape<T>&, const ModelConfig&, const BoundParams<T>&, std::span<const int>); \
    template Var channel_layer_norm(Tape<T>&, Var, Var, Var, int);                                         \
    template AttentionOutput<T> fts_attention(Tape<T>&, const ModelConfig&, const BoundParams<T>&, int,    \
                                              const StreamState&, const GateAssignment*, bool);            \
    template AttentionOutput<T> std_attention(Tape<T>&, const ModelConfig&, const BoundParams<T>&, int,    \
                                              Var, const GateAssignment*, bool);                           \
    template Var ffn_update(Tape<T>&, const ModelConfig&, const BoundParams<T>&, int, const StreamState&); \
    template ForwardResult<T> forward(Tape<T>&, const ModelConfig&, const BoundParams<T>&,                 \
                                      std::span<const int>, const ForwardOptions<T>&);

LATEFUSE_INSTANTIATE_MODEL(float)
LATEFUSE_INSTANTIATE_MODEL(double)

}  // namespace latefuse
