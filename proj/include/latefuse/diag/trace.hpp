#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "latefuse/arch/model.hpp"
#include "latefuse/diag/probe_dataset.hpp"
#include "latefuse/train/tokenizer.hpp"

namespace latefuse {

// Post-softmax attention for one prompt, all layers and heads, in double.
struct AttentionTrace {
    std::string prompt_id;
    std::string prompt;
    std::vector<int> tokens;
    std::vector<std::pair<std::size_t, std::size_t>> offsets;  // byte range per token
    int n_layers = 0;
    int n_heads = 0;
    std::size_t n_tokens = 0;
    std::vector<double> attention;  // [layer][head][query][key]

    double at(int layer, int head, std::size_t query, std::size_t key) const {
        return attention[((static_cast<std::size_t>(layer) * n_heads + head) * n_tokens + query) * n_tokens + key];
    }
    std::span<const double> row(int layer, int head, std::size_t query) const {
        return {attention.data() + ((static_cast<std::size_t>(layer) * n_heads + head) * n_tokens + query) * n_tokens,
                n_tokens};
    }
    std::span<double> row(int layer, int head, std::size_t query) {
        return {attention.data() + ((static_cast<std::size_t>(layer) * n_heads + head) * n_tokens + query) * n_tokens,
                n_tokens};
    }
};

// An instance with its spans resolved to token indices of its prompt's trace.
// The query is the last token of the query span.
struct ResolvedInstance {
    std::size_t instance = 0;  // index into the dataset
    std::size_t trace = 0;     // index into TraceSet::traces
    std::size_t query_token = 0;
    TokenSpan target;
    std::vector<TokenSpan> distractors;
};

struct AlignmentFailure {
    std::string instance_id;
    std::string message;
};

// Traces for a dataset. Instances whose spans fail to align to token
// boundaries are dropped and listed in `filtered`.
struct TraceSet {
    ProbeDataset dataset;
    std::vector<AttentionTrace> traces;
    std::vector<ResolvedInstance> resolved;
    std::vector<AlignmentFailure> filtered;
    int n_layers = 0;
    int n_heads = 0;

    // Resolved index of a dataset instance, or npos when it was filtered.
    std::size_t find(std::size_t dataset_index) const;
    // Minimal pairs whose two members both survived alignment.
    std::vector<std::pair<std::size_t, std::size_t>> resolved_pairs() const;
    std::vector<std::string> resolved_pair_ids() const;
};

// Resolves one instance against an encoded prompt. Throws AlignmentError
// with the instance id when a span cuts a token.
ResolvedInstance resolve_instance(const CoreferenceInstance& inst, std::span<const TokenPiece> tokens);

// Runs the model once per distinct prompt with the given gates (nullptr =
// all 1) and records every head's attention. Throws DataError when a prompt
// exceeds max_seq_len.
TraceSet capture(const Model& model, const Tokenizer& tokenizer, const ProbeDataset& dataset,
                 const GateAssignment* gates = nullptr);

// Single prompt, no dataset.
AttentionTrace capture_prompt(const Model& model, const Tokenizer& tokenizer, const std::string& prompt_id,
                              const std::string& prompt, const GateAssignment* gates = nullptr);

// JSON container (format "latefuse-trace", version 1) holding the dataset,
// the traces and the resolved token indices, so traces produced elsewhere
// can be fed to the metric engine.
nlohmann::json to_json(const TraceSet& set);
TraceSet trace_set_from_json(const nlohmann::json& j);
void write_trace_dump(const std::filesystem::path& path, const TraceSet& set);
TraceSet read_trace_dump(const std::filesystem::path& path);

}  // namespace latefuse
