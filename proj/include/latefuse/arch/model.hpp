#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latefuse/arch/model_config.hpp"
#include "latefuse/arch/params.hpp"
#include "latefuse/core/autodiff.hpp"

namespace latefuse {

struct HeadId {
    int layer = 0;
    int head = 0;

    std::string label() const { return "L" + std::to_string(layer) + ".H" + std::to_string(head); }
    friend auto operator<=>(const HeadId&, const HeadId&) = default;
};

// Per-head soft gates, all 1.0 unless set. A gate scales the head's context
// vector before it is placed or projected into the stream, so a gate of 0
// removes the head's contribution exactly.
class GateAssignment {
public:
    GateAssignment() = default;

    // Throws ConfigError for g outside [0, 1].
    void set(int layer, int head, double g);
    void set(HeadId head, double g) { set(head.layer, head.head, g); }
    double get(int layer, int head) const;
    bool empty() const noexcept { return gates_.empty(); }
    std::size_t size() const noexcept { return gates_.size(); }

    static GateAssignment uniform(std::span<const HeadId> heads, double g);

private:
    std::map<std::pair<int, int>, double> gates_;
};

// The two streams between layers. For the single-stream variant only
// `token` is used (it is the residual stream) and `embedding` is invalid.
struct StreamState {
    Var token;
    Var embedding;
    int layer = 0;
};

// Post-softmax attention matrices [T x T] in (layer, head) order.
template <typename T>
struct AttentionCapture {
    int n_layers = 0;
    int n_heads = 0;
    std::vector<BasicTensor<T>> matrices;

    const BasicTensor<T>& at(int layer, int head) const {
        return matrices.at(static_cast<std::size_t>(layer * n_heads + head));
    }
};

enum class StreamEventKind {
    write_token_stream,      // X_T written (embedding time is layer -1)
    write_embedding_stream,  // X_E updated
    write_residual,          // single-stream residual update
    read_combined,           // X_T + X_E read as a block input (channel-normalised)
    output_fusion,           // LayerNorm(X_T + X_E) handed to the LM head
};

std::string_view to_string(StreamEventKind kind);

struct StreamEvent {
    StreamEventKind kind;
    int layer;
    std::string_view source;
};

// Instrumentation hooks for the forward pass.
template <typename T>
class BasicForwardObserver {
public:
    virtual ~BasicForwardObserver() = default;
    virtual void on_event(const StreamEvent& /*event*/) {}
    // Called after each layer (and with layer -1 after embedding). For the
    // single-stream variant `embedding` is an empty tensor.
    virtual void on_layer_state(int /*layer*/, const BasicTensor<T>& /*token*/,
                                const BasicTensor<T>& /*embedding*/) {}
};

template <typename T>
struct ForwardOptions {
    const GateAssignment* gates = nullptr;
    bool capture = false;
    BasicForwardObserver<T>* observer = nullptr;
    // Ablation: feed LayerNorm(X_T) instead of LayerNorm(X_T + X_E) to the head.
    bool zero_embedding_stream_at_head = false;
};

// Parameter store bound onto a tape as leaves.
template <typename T>
class BoundParams {
public:
    BoundParams(const BasicParamStore<T>& store, std::vector<Var> vars) : store_(&store), vars_(std::move(vars)) {}

    Var operator()(const std::string& name) const { return vars_[store_->index_of(name)]; }
    const std::vector<Var>& vars() const noexcept { return vars_; }

private:
    const BasicParamStore<T>* store_;
    std::vector<Var> vars_;
};

// Binds without copying; the store must outlive the tape.
template <typename T>
BoundParams<T> bind_params(Tape<T>& tape, const BasicParamStore<T>& store, bool trainable);

template <typename T>
struct AttentionOutput {
    Var delta;
    std::vector<BasicTensor<T>> trace;  // per head, only when captured
};

template <typename T>
struct ForwardResult {
    Var logits;
    Var fused;  // the single LayerNorm output read by the LM head
    StreamState final_state;
    AttentionCapture<T> attention;
};

// X_T = token embedding + position embedding, X_E = 0.
template <typename T>
StreamState embed(Tape<T>& tape, const ModelConfig& config, const BoundParams<T>& params,
                  std::span<const int> ids);

// Layer norm applied to each head's d_head slice separately.
template <typename T>
Var channel_layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, int n_heads);

// Two-stream attention for D-Cas / LFA / CFM. Queries and keys read
// CLN(X_T + X_E); values are the token stream. Returns the update for the
// stream this mode writes (X_E when frozen, X_T when mutable).
template <typename T>
AttentionOutput<T> fts_attention(Tape<T>& tape, const ModelConfig& config, const BoundParams<T>& params,
                                 int layer, const StreamState& state, const GateAssignment* gates,
                                 bool capture);

// Standard multi-head causal self-attention on an already normalised input.
template <typename T>
AttentionOutput<T> std_attention(Tape<T>& tape, const ModelConfig& config, const BoundParams<T>& params,
                                 int layer, Var x, const GateAssignment* gates, bool capture);

// FFN update for the two-stream variants: reads CLN(X_T + X_E), returns the
// X_E increment.
template <typename T>
Var ffn_update(Tape<T>& tape, const ModelConfig& config, const BoundParams<T>& params, int layer,
               const StreamState& state);

template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const ModelConfig& config, const BoundParams<T>& params,
                         std::span<const int> ids, const ForwardOptions<T>& options = {});

// Config plus float parameters, with a convenience inference entry point.
class Model {
public:
    Model(ModelConfig config, ParamStore params);
    static Model initialize(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }

    struct Output {
        Tensor logits;
        AttentionCapture<float> attention;
    };
    // Inference only; no gradients are tracked.
    Output run(std::span<const int> ids, const ForwardOptions<float>& options = {}) const;

private:
    ModelConfig config_;
    ParamStore params_;
};

}  // namespace latefuse
