#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

namespace latefuse {

// The four model variants.
//   std_t : single residual stream, dense attention, dense FFN
//   d_cas : frozen token stream, dense attention, dense FFN
//   lfa   : frozen token stream, independent attention, dense FFN
//   cfm   : frozen token stream, independent attention, independent FFN
enum class Variant { std_t, d_cas, lfa, cfm };

// How attention/FFN mix head channels. Dense mixes across heads with learned
// matrices; independent keeps each head's d_head slice to itself.
enum class MixKind { dense, independent };

// frozen: the token stream is written once at embedding time and never again.
// mutable_token: attention accumulates into the token stream instead
// (Kronecker-lifted value/output mixing for independent attention).
enum class StreamMode { frozen, mutable_token };

std::string_view to_string(Variant v);
std::string_view to_string(MixKind k);
std::string_view to_string(StreamMode m);
Variant parse_variant(std::string_view text);
StreamMode parse_stream_mode(std::string_view text);

struct ModelConfig {
    Variant variant = Variant::lfa;
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 64;
    int ffn_multiplier = 4;
    int vocab_size = 256;
    int max_seq_len = 128;
    StreamMode stream_mode = StreamMode::frozen;

    int d_head() const { return d_model / n_heads; }
    bool single_stream() const { return variant == Variant::std_t; }
    MixKind attention_kind() const;
    MixKind ffn_kind() const;
    int head_count() const { return n_layers * n_heads; }

    // Throws ConfigError describing the first violated constraint.
    void validate() const;

    // 6 layers, 6 heads, 384 channels.
    static ModelConfig paper_scale(Variant v, int vocab_size);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace latefuse
