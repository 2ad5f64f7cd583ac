#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latefuse/arch/model.hpp"
#include "latefuse/diag/trace.hpp"

namespace latefuse {

inline constexpr double kPdsThreshold = 0.075;
inline constexpr double kStabilityTau = 0.1;

std::vector<HeadId> all_heads(int n_layers, int n_heads);

// Sum of attention from the query token to every token of span. Throws
// IndexError when the head or a token index is out of range.
double attention_mass(const AttentionTrace& trace, int layer, int head, std::size_t query, const TokenSpan& span);

// Attention mass from a resolved instance's query to its target.
double target_mass(const TraceSet& set, std::size_t resolved, int layer, int head);
double distractor_mass(const TraceSet& set, std::size_t resolved, std::size_t distractor, int layer, int head);

// Mean target mass over the given resolved instances. Throws DataError
// for an empty selection.
double mean_attention(const TraceSet& set, int layer, int head, std::span<const std::size_t> resolved);

// Percentage of instances whose target mass strictly exceeds every
// distractor's mass (ties count as misses).
double top1_accuracy(const TraceSet& set, int layer, int head, std::span<const std::size_t> resolved);

struct PairStability {
    std::string pair_id;
    int eligible = 0;
    int stable = 0;
    std::optional<double> ratio;  // empty when no head is eligible
};

// A head is eligible for a pair when its mass to target plus distractors is
// at least tau in both orderings; it is stable when the span it attends to
// most (matched by word) is the same in both orderings, with ties unstable.
PairStability pair_stability(const TraceSet& set, std::size_t pair_index, std::span<const HeadId> heads,
                             double tau = kStabilityTau);

struct StabilitySummary {
    std::vector<PairStability> pairs;
    std::optional<double> mean;  // over pairs with a defined ratio
    std::optional<double> min;
    std::optional<double> max;
};

StabilitySummary stability(const TraceSet& set, std::span<const HeadId> heads, double tau = kStabilityTau,
                           std::span<const std::size_t> pair_indices = {});

// |mean target mass over target-last members - mean over target-first
// members| for the given resolved pairs. Throws DataError if none.
double pds(const TraceSet& set, int layer, int head, std::span<const std::pair<std::size_t, std::size_t>> pairs);

struct HeadTable {
    int n_layers = 0;
    int n_heads = 0;
    std::vector<double> values;  // [layer][head]

    double at(int layer, int head) const { return values.at(static_cast<std::size_t>(layer * n_heads + head)); }
    double& at(int layer, int head) { return values.at(static_cast<std::size_t>(layer * n_heads + head)); }
};

HeadTable pds_table(const TraceSet& set, std::span<const std::pair<std::size_t, std::size_t>> pairs);
HeadTable mean_attention_table(const TraceSet& set, std::span<const std::size_t> resolved);
HeadTable top1_table(const TraceSet& set, std::span<const std::size_t> resolved);

struct PdsSummary {
    double threshold = kPdsThreshold;
    int late_layers = 2;  // the last layers counted separately
    int total_above = 0;
    int late_above = 0;
    std::vector<double> max_per_layer;
    double max_last_layer = 0.0;
    HeadId argmax_last_layer;
    double average = 0.0;
};

PdsSummary summarize_pds(const HeadTable& table, double threshold = kPdsThreshold, int late_layers = 2);

// Heads with PDS strictly above threshold, in (layer, head) order.
std::vector<HeadId> heads_above(const HeadTable& table, double threshold = kPdsThreshold);

struct Histogram {
    double bin_width = 0.025;
    std::vector<int> counts;  // bin i covers [i*w, (i+1)*w); the last bin is closed
};

// Fixed bins over [0, upper]; values above upper land in the last bin, so
// counts always sum to values.size(). Negative values throw DataError.
Histogram histogram(std::span<const double> values, double bin_width = 0.025, double upper = 1.0);

}  // namespace latefuse
