#pragma once

// Formatting helpers shared by the command implementations.

#include <cstdio>
#include <cstdlib>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latefuse/arch/model_config.hpp"
#include "latefuse/arch/params.hpp"

namespace latefuse::cli_detail {

// Shortest text that parses back to the same double.
inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    for (int prec = 6; prec < 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return s;
}

inline std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

inline nlohmann::json json_or_null(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

class Csv {
public:
    Csv(std::initializer_list<std::string_view> header) {
        std::vector<std::string> h(header.begin(), header.end());
        row(h);
    }
    Csv& row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) text_ += ',';
            text_ += escape(cells[i]);
        }
        text_ += '\n';
        return *this;
    }
    const std::string& str() const noexcept { return text_; }

private:
    static std::string escape(const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string out = "\"";
        for (const char c : s) {
            if (c == '"') out += '"';
            out += c;
        }
        return out + "\"";
    }
    std::string text_;
};

inline nlohmann::json model_json(const ModelConfig& c) {
    nlohmann::json j = to_json(c);
    j["parameters"] = parameter_count(c);
    j["attention"] = std::string(to_string(c.attention_kind()));
    j["ffn"] = std::string(to_string(c.ffn_kind()));
    return j;
}

}  // namespace latefuse::cli_detail
