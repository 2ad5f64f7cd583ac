#include "latefuse/train/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "latefuse/core/errors.hpp"

namespace latefuse {

namespace {

template <typename N>
N parse_number(std::string_view key, std::string_view text) {
    N value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
    }
    return value;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

using Setter = std::function<void(TrainRunConfig&, std::string_view key, std::string_view value)>;
using Getter = std::function<std::string(const TrainRunConfig&)>;

struct Field {
    std::string key;
    Setter set;
    Getter get;
};

template <typename N>
Field number(std::string key, N TrainRunConfig::*member) {
    return {key, [member](TrainRunConfig& c, std::string_view k, std::string_view v) { c.*member = parse_number<N>(k, v); },
            [member](const TrainRunConfig& c) {
                if constexpr (std::is_floating_point_v<N>) {
                    return format_double(c.*member);
                } else {
                    return std::to_string(c.*member);
                }
            }};
}

template <typename N>
Field model_number(std::string key, N ModelConfig::*member) {
    return {key,
            [member](TrainRunConfig& c, std::string_view k, std::string_view v) { c.model.*member = parse_number<N>(k, v); },
            [member](const TrainRunConfig& c) { return std::to_string(c.model.*member); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        {"variant", [](TrainRunConfig& c, auto, std::string_view v) { c.model.variant = parse_variant(v); },
         [](const TrainRunConfig& c) { return quoted(std::string(to_string(c.model.variant))); }},
        model_number("layers", &ModelConfig::n_layers),
        model_number("heads", &ModelConfig::n_heads),
        model_number("d_model", &ModelConfig::d_model),
        model_number("ffn_multiplier", &ModelConfig::ffn_multiplier),
        model_number("max_seq_len", &ModelConfig::max_seq_len),
        {"stream_mode", [](TrainRunConfig& c, auto, std::string_view v) { c.model.stream_mode = parse_stream_mode(v); },
         [](const TrainRunConfig& c) { return quoted(std::string(to_string(c.model.stream_mode))); }},
        {"corpus", [](TrainRunConfig& c, auto, std::string_view v) { c.corpus = std::string(v); },
         [](const TrainRunConfig& c) { return quoted(c.corpus); }},
        {"tokenizer", [](TrainRunConfig& c, auto, std::string_view v) { c.tokenizer = parse_tokenizer_mode(v); },
         [](const TrainRunConfig& c) { return quoted(std::string(to_string(c.tokenizer))); }},
        number("bpe_vocab", &TrainRunConfig::bpe_vocab),
        number("seed", &TrainRunConfig::seed),
        number("batch_size", &TrainRunConfig::batch_size),
        number("seq_len", &TrainRunConfig::seq_len),
        number("steps", &TrainRunConfig::steps),
        number("lr", &TrainRunConfig::lr),
        number("min_lr_ratio", &TrainRunConfig::min_lr_ratio),
        number("warmup_steps", &TrainRunConfig::warmup_steps),
        number("weight_decay", &TrainRunConfig::weight_decay),
        number("beta1", &TrainRunConfig::beta1),
        number("beta2", &TrainRunConfig::beta2),
        number("grad_clip", &TrainRunConfig::grad_clip),
        number("eval_interval", &TrainRunConfig::eval_interval),
        number("eval_windows", &TrainRunConfig::eval_windows),
        number("target_val_loss", &TrainRunConfig::target_val_loss),
        {"checkpoint", [](TrainRunConfig& c, auto, std::string_view v) { c.checkpoint = std::string(v); },
         [](const TrainRunConfig& c) { return quoted(c.checkpoint); }},
    };
    return all;
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& f : fields()) k.push_back(f.key);
        return k;
    }();
    return keys;
}

void set_run_config_value(TrainRunConfig& config, std::string_view key, std::string_view value) {
    for (const auto& f : fields()) {
        if (f.key == key) {
            f.set(config, key, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void TrainRunConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    ModelConfig m = model;
    m.vocab_size = std::max(m.vocab_size, 1);
    m.validate();
    require(tokenizer == TokenizerMode::byte_level || bpe_vocab >= 256, "bpe_vocab must be >= 256");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(seq_len >= 2, "seq_len must be >= 2");
    require(seq_len <= model.max_seq_len,
            "seq_len " + std::to_string(seq_len) + " exceeds max_seq_len " + std::to_string(model.max_seq_len));
    require(steps >= 0, "steps must be >= 0");
    require(lr >= 0.0, "lr must be >= 0");
    require(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0, "min_lr_ratio must lie in [0, 1]");
    require(warmup_steps >= 0, "warmup_steps must be >= 0");
    require(weight_decay >= 0.0, "weight_decay must be >= 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "beta1 and beta2 must lie in [0, 1)");
    require(grad_clip >= 0.0, "grad_clip must be >= 0");
    require(eval_interval >= 1, "eval_interval must be >= 1");
    require(eval_windows >= 1, "eval_windows must be >= 1");
    require(target_val_loss >= 0.0, "target_val_loss must be >= 0");
    require(!checkpoint.empty(), "checkpoint file name must not be empty");
}

TrainRunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
    std::istringstream in{std::string(text)};
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    TrainRunConfig c;
    for (const auto& item : items) {
        // CLI11 reports section markers as pseudo-items named "++" / "--".
        if (item.name == "++" || item.name == "--") continue;
        if (!item.parents.empty()) throw ConfigError("config sections are not supported ('" + item.fullname() + "')");
        if (item.inputs.size() != 1) throw ConfigError("config key '" + item.name + "' needs exactly one value");
        set_run_config_value(c, item.name, item.inputs.front());
    }
    if (!c.corpus.empty() && !base_dir.empty() && std::filesystem::path(c.corpus).is_relative()) {
        c.corpus = (base_dir / c.corpus).lexically_normal().string();
    }
    c.validate();
    return c;
}

TrainRunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_run_config(buf.str(), path.parent_path());
}

std::string to_text(const TrainRunConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
    return out;
}

TrainRunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("run config JSON must be an object");
    TrainRunConfig c;
    for (const auto& [key, value] : j.items()) {
        set_run_config_value(c, key, value.is_string() ? value.get<std::string>() : value.dump());
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const TrainRunConfig& config) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : fields()) {
        const std::string v = f.get(config);
        j[f.key] = (v.size() >= 2 && v.front() == '"') ? nlohmann::json(v.substr(1, v.size() - 2))
                                                       : nlohmann::json::parse(v);
    }
    return j;
}

}  // namespace latefuse
