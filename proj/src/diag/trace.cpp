#include "latefuse/diag/trace.hpp"

#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "latefuse/core/errors.hpp"

namespace latefuse {

namespace {

constexpr int kTraceVersion = 1;

TokenSpan resolve_span(const CoreferenceInstance& inst, std::span<const TokenPiece> tokens, const CharSpan& span,
                       const char* role) {
    const std::size_t b = codepoint_to_byte(inst.prompt, span.begin);
    const std::size_t e = codepoint_to_byte(inst.prompt, span.end);
    try {
        return align_span(tokens, inst.prompt, b, e);
    } catch (const AlignmentError& err) {
        throw AlignmentError("instance '" + inst.id + "' " + role + ": " + err.what());
    }
}

}  // namespace

std::size_t TraceSet::find(std::size_t dataset_index) const {
    for (std::size_t i = 0; i < resolved.size(); ++i) {
        if (resolved[i].instance == dataset_index) return i;
    }
    return std::numeric_limits<std::size_t>::max();
}

std::vector<std::pair<std::size_t, std::size_t>> TraceSet::resolved_pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& p : dataset.pairs()) {
        const std::size_t a = find(p.target_first);
        const std::size_t b = find(p.target_last);
        if (a < resolved.size() && b < resolved.size()) out.emplace_back(a, b);
    }
    return out;
}

std::vector<std::string> TraceSet::resolved_pair_ids() const {
    std::vector<std::string> out;
    for (const auto& p : dataset.pairs()) {
        if (find(p.target_first) < resolved.size() && find(p.target_last) < resolved.size()) out.push_back(p.pair_id);
    }
    return out;
}

ResolvedInstance resolve_instance(const CoreferenceInstance& inst, std::span<const TokenPiece> tokens) {
    ResolvedInstance r;
    r.query_token = resolve_span(inst, tokens, inst.query, "query").last;
    r.target = resolve_span(inst, tokens, inst.target, "target");
    for (const auto& d : inst.distractors) r.distractors.push_back(resolve_span(inst, tokens, d, "distractor"));
    return r;
}

AttentionTrace capture_prompt(const Model& model, const Tokenizer& tokenizer, const std::string& prompt_id,
                              const std::string& prompt, const GateAssignment* gates) {
    const auto pieces = tokenizer.encode_with_offsets(prompt);
    const auto& cfg = model.config();
    if (pieces.empty()) throw DataError("prompt '" + prompt_id + "' encodes to no tokens");
    if (pieces.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
        throw DataError("prompt '" + prompt_id + "' has " + std::to_string(pieces.size()) +
                        " tokens, more than max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    AttentionTrace t;
    t.prompt_id = prompt_id;
    t.prompt = prompt;
    for (const auto& p : pieces) {
        t.tokens.push_back(p.id);
        t.offsets.emplace_back(p.begin, p.end);
    }
    ForwardOptions<float> opts;
    opts.gates = gates;
    opts.capture = true;
    const auto out = model.run(t.tokens, opts);
    t.n_layers = cfg.n_layers;
    t.n_heads = cfg.n_heads;
    t.n_tokens = pieces.size();
    t.attention.reserve(out.attention.matrices.size() * t.n_tokens * t.n_tokens);
    for (const auto& m : out.attention.matrices) {
        for (const float v : m.data()) t.attention.push_back(v);
    }
    return t;
}

TraceSet capture(const Model& model, const Tokenizer& tokenizer, const ProbeDataset& dataset,
                 const GateAssignment* gates) {
    TraceSet set;
    set.dataset = dataset;
    set.n_layers = model.config().n_layers;
    set.n_heads = model.config().n_heads;
    std::map<std::string, std::size_t> by_prompt;
    for (std::size_t i = 0; i < dataset.instances.size(); ++i) {
        const auto& inst = dataset.instances[i];
        auto it = by_prompt.find(inst.prompt_id);
        if (it == by_prompt.end()) {
            set.traces.push_back(capture_prompt(model, tokenizer, inst.prompt_id, inst.prompt, gates));
            it = by_prompt.emplace(inst.prompt_id, set.traces.size() - 1).first;
        }
        const auto& trace = set.traces[it->second];
        if (trace.prompt != inst.prompt) {
            throw DataError("instances sharing prompt id '" + inst.prompt_id + "' have different prompt text");
        }
        std::vector<TokenPiece> pieces;
        for (std::size_t k = 0; k < trace.tokens.size(); ++k) {
            pieces.push_back({trace.tokens[k], trace.offsets[k].first, trace.offsets[k].second});
        }
        try {
            ResolvedInstance r = resolve_instance(inst, pieces);
            r.instance = i;
            r.trace = it->second;
            set.resolved.push_back(std::move(r));
        } catch (const AlignmentError& e) {
            set.filtered.push_back({inst.id, e.what()});
        }
    }
    return set;
}

nlohmann::json to_json(const TraceSet& set) {
    nlohmann::json instances = nlohmann::json::array();
    for (const auto& inst : set.dataset.instances) instances.push_back(to_json(inst));
    nlohmann::json traces = nlohmann::json::array();
    for (const auto& t : set.traces) {
        traces.push_back({{"prompt_id", t.prompt_id},
                          {"prompt", t.prompt},
                          {"tokens", t.tokens},
                          {"offsets", t.offsets},
                          {"n_tokens", t.n_tokens},
                          {"attention", t.attention}});
    }
    nlohmann::json resolved = nlohmann::json::array();
    for (const auto& r : set.resolved) {
        nlohmann::json d = nlohmann::json::array();
        for (const auto& s : r.distractors) d.push_back({s.first, s.last});
        resolved.push_back({{"instance", r.instance},
                            {"trace", r.trace},
                            {"query_token", r.query_token},
                            {"target", {r.target.first, r.target.last}},
                            {"distractors", d}});
    }
    nlohmann::json filtered = nlohmann::json::array();
    for (const auto& f : set.filtered) filtered.push_back({{"instance_id", f.instance_id}, {"message", f.message}});
    return {{"format", "latefuse-trace"}, {"version", kTraceVersion}, {"n_layers", set.n_layers},
            {"n_heads", set.n_heads},     {"instances", instances},   {"traces", traces},
            {"resolved", resolved},       {"filtered", filtered}};
}

TraceSet trace_set_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "latefuse-trace") throw DataError("not a trace dump");
        if (j.at("version").get<int>() != kTraceVersion) {
            throw DataError("trace dump version " + j["version"].dump() + ", this build reads " +
                            std::to_string(kTraceVersion));
        }
        TraceSet set;
        set.n_layers = j.at("n_layers").get<int>();
        set.n_heads = j.at("n_heads").get<int>();
        if (set.n_layers < 1 || set.n_heads < 1) throw DataError("trace dump needs at least one layer and head");
        for (const auto& inst : j.at("instances")) set.dataset.instances.push_back(instance_from_json(inst));
        validate_dataset(set.dataset);
        for (const auto& tj : j.at("traces")) {
            AttentionTrace t;
            t.prompt_id = tj.at("prompt_id").get<std::string>();
            t.prompt = tj.value("prompt", "");
            t.tokens = tj.value("tokens", std::vector<int>{});
            t.offsets = tj.value("offsets", std::vector<std::pair<std::size_t, std::size_t>>{});
            t.n_layers = set.n_layers;
            t.n_heads = set.n_heads;
            t.n_tokens = tj.at("n_tokens").get<std::size_t>();
            t.attention = tj.at("attention").get<std::vector<double>>();
            const std::size_t want = static_cast<std::size_t>(set.n_layers) * set.n_heads * t.n_tokens * t.n_tokens;
            if (t.attention.size() != want) {
                throw DataError("trace '" + t.prompt_id + "' holds " + std::to_string(t.attention.size()) +
                                " values, expected " + std::to_string(want));
            }
            set.traces.push_back(std::move(t));
        }
        for (const auto& rj : j.at("resolved")) {
            ResolvedInstance r;
            r.instance = rj.at("instance").get<std::size_t>();
            r.trace = rj.at("trace").get<std::size_t>();
            r.query_token = rj.at("query_token").get<std::size_t>();
            auto span = [](const nlohmann::json& s) { return TokenSpan{s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()}; };
            r.target = span(rj.at("target"));
            for (const auto& d : rj.at("distractors")) r.distractors.push_back(span(d));
            if (r.instance >= set.dataset.instances.size() || r.trace >= set.traces.size()) {
                throw DataError("resolved entry refers to a missing instance or trace");
            }
            const std::size_t n = set.traces[r.trace].n_tokens;
            bool ok = r.query_token < n && r.target.first <= r.target.last && r.target.last < n;
            for (const auto& d : r.distractors) ok = ok && d.first <= d.last && d.last < n;
            if (!ok) throw DataError("resolved token indices out of range for instance " + std::to_string(r.instance));
            set.resolved.push_back(std::move(r));
        }
        if (j.contains("filtered")) {
            for (const auto& f : j["filtered"]) {
                set.filtered.push_back({f.at("instance_id").get<std::string>(), f.value("message", "")});
            }
        }
        return set;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed trace dump: ") + e.what());
    }
}

void write_trace_dump(const std::filesystem::path& path, const TraceSet& set) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write trace dump '" + path.string() + "'");
    f << to_json(set).dump() << '\n';
}

TraceSet read_trace_dump(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read trace dump '" + path.string() + "'");
    try {
        return trace_set_from_json(nlohmann::json::parse(f));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("trace dump '" + path.string() + "' is not JSON: " + e.what());
    }
}

}  // namespace latefuse
