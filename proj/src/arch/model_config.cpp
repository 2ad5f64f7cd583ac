#include "latefuse/arch/model_config.hpp"

#include <algorithm>
#include <cctype>

#include "latefuse/core/errors.hpp"

namespace latefuse {

namespace {

std::string lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

}  // namespace

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::std_t: return "std-t";
        case Variant::d_cas: return "d-cas";
        case Variant::lfa: return "lfa";
        case Variant::cfm: return "cfm";
    }
    return "?";
}

std::string_view to_string(MixKind k) { return k == MixKind::dense ? "dense" : "independent"; }

std::string_view to_string(StreamMode m) { return m == StreamMode::frozen ? "frozen" : "mutable-token"; }

Variant parse_variant(std::string_view text) {
    const std::string t = lower(text);
    if (t == "std-t" || t == "stdt" || t == "std_t") return Variant::std_t;
    if (t == "d-cas" || t == "dcas" || t == "d_cas") return Variant::d_cas;
    if (t == "lfa") return Variant::lfa;
    if (t == "cfm") return Variant::cfm;
    throw ConfigError("unknown variant '" + std::string(text) + "' (expected std-t, d-cas, lfa or cfm)");
}

StreamMode parse_stream_mode(std::string_view text) {
    const std::string t = lower(text);
    if (t == "frozen" || t == "fts") return StreamMode::frozen;
    if (t == "mutable-token" || t == "mutable") return StreamMode::mutable_token;
    throw ConfigError("unknown stream mode '" + std::string(text) + "'");
}

MixKind ModelConfig::attention_kind() const {
    return (variant == Variant::lfa || variant == Variant::cfm) ? MixKind::independent : MixKind::dense;
}

MixKind ModelConfig::ffn_kind() const {
    return variant == Variant::cfm ? MixKind::independent : MixKind::dense;
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(n_layers >= 1, "n_layers must be >= 1");
    require(n_heads >= 1, "n_heads must be >= 1");
    require(d_model >= 1, "d_model must be >= 1");
    require(d_model % n_heads == 0, "d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                        std::to_string(n_heads));
    require(ffn_multiplier >= 1, "ffn_multiplier must be >= 1");
    require(vocab_size >= 1, "vocab_size must be >= 1");
    require(max_seq_len >= 1, "max_seq_len must be >= 1");
}

ModelConfig ModelConfig::paper_scale(Variant v, int vocab_size) {
    ModelConfig c;
    c.variant = v;
    c.n_layers = 6;
    c.n_heads = 6;
    c.d_model = 384;
    c.vocab_size = vocab_size;
    c.max_seq_len = 256;
    return c;
}

nlohmann::json to_json(const ModelConfig& c) {
    return {
        {"variant", to_string(c.variant)},
        {"n_layers", c.n_layers},
        {"n_heads", c.n_heads},
        {"d_model", c.d_model},
        {"ffn_multiplier", c.ffn_multiplier},
        {"vocab_size", c.vocab_size},
        {"max_seq_len", c.max_seq_len},
        {"stream_mode", to_string(c.stream_mode)},
    };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.variant = parse_variant(j.at("variant").get<std::string>());
        c.n_layers = j.at("n_layers").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.ffn_multiplier = j.at("ffn_multiplier").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.max_seq_len = j.at("max_seq_len").get<int>();
        c.stream_mode = parse_stream_mode(j.at("stream_mode").get<std::string>());
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model config: ") + e.what());
    }
}

}  // namespace latefuse
