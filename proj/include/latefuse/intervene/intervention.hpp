#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latefuse/arch/model.hpp"
#include "latefuse/diag/metrics.hpp"
#include "latefuse/diag/trace.hpp"
#include "latefuse/intervene/stats.hpp"

namespace latefuse {

enum class Selection { top_k, bottom_k, matched_random, explicit_list, none };

std::string_view to_string(Selection s);
Selection parse_selection(std::string_view text);

struct InterventionSpec {
    Selection selection = Selection::none;
    int k = 1;
    double gate = 0.0;
    std::uint64_t seed = 0;      // matched_random only
    std::vector<HeadId> heads;   // explicit_list only

    // Throws ConfigError on k < 1 for ranked selections or gate outside [0, 1].
    void validate() const;
};

// Heads ordered by PDS, descending for top_k and ascending for bottom_k,
// ties broken by lower layer then lower head. matched_random draws k heads
// uniformly without replacement under seed. Throws ConfigError when k is out
// of range.
std::vector<HeadId> rank_heads(const HeadTable& pds, Selection selection, int k, std::uint64_t seed = 0);

// Resolves a spec to a concrete head set (empty for Selection::none).
std::vector<HeadId> select_heads(const HeadTable& pds, const InterventionSpec& spec);

// Anything that can produce traces for a fixed prompt set under gates.
class TraceSource {
public:
    virtual ~TraceSource() = default;
    virtual int n_layers() const = 0;
    virtual int n_heads() const = 0;
    // gates == nullptr means no gating at all.
    virtual TraceSet capture(const GateAssignment* gates) const = 0;
};

class ModelTraceSource final : public TraceSource {
public:
    ModelTraceSource(const Model& model, const Tokenizer& tokenizer, ProbeDataset dataset)
        : model_(model), tokenizer_(tokenizer), dataset_(std::move(dataset)) {}

    int n_layers() const override { return model_.config().n_layers; }
    int n_heads() const override { return model_.config().n_heads; }
    TraceSet capture(const GateAssignment* gates) const override {
        return latefuse::capture(model_, tokenizer_, dataset_, gates);
    }

private:
    const Model& model_;
    const Tokenizer& tokenizer_;
    ProbeDataset dataset_;
};

struct SpsSample {
    std::string prompt_id;
    double semantic = 0.0;
    double distractor = 0.0;
    double diff = 0.0;
};

struct SpsResult {
    double mean = 0.0;
    std::vector<SpsSample> samples;
    std::size_t filtered = 0;   // instances dropped by alignment
    HeadTable per_head;         // mean (semantic - distractor) of each head alone
};

// The resolved competing-nouns instances of a trace set.
std::vector<std::size_t> competing_noun_instances(const TraceSet& set);

// Measurement head set: the m heads with the highest mean target attention
// over the competing-nouns instances (ties to lower layer, then head).
std::vector<HeadId> measurement_heads(const TraceSet& baseline, int m = 5);

// Per prompt: semantic and distractor masses averaged over the measurement
// heads, then their difference; SPS is the mean difference. The target of a
// competing-nouns instance is the semantic span and its first distractor the
// positional one. Throws DataError when no instance survives alignment.
SpsResult sps(const TraceSet& set, std::span<const HeadId> measurement);

struct SpsOptions {
    int measurement_heads = 5;
};

// Baseline traces, PDS ranking and measurement heads computed once; each
// run() gates a head set and measures SPS.
class InterventionHarness {
public:
    InterventionHarness(const TraceSource& source, SpsOptions options = {});

    const TraceSet& baseline_traces() const noexcept { return baseline_; }
    const SpsResult& baseline() const noexcept { return baseline_sps_; }
    const std::vector<HeadId>& measurement() const noexcept { return measurement_; }
    const HeadTable& pds() const noexcept { return pds_; }
    int n_layers() const { return source_.n_layers(); }
    int n_heads() const { return source_.n_heads(); }

    // Gated forward passes with every head in `heads` at g.
    SpsResult run(std::span<const HeadId> heads, double g) const;

private:
    const TraceSource& source_;
    TraceSet baseline_;
    SpsResult baseline_sps_;
    std::vector<HeadId> measurement_;
    HeadTable pds_;
};

struct GridCell {
    int k = 0;
    double gate = 1.0;
    std::string condition;
    std::vector<HeadId> heads;
    std::size_t n = 0;
    double sps = 0.0;
    double delta_sps = 0.0;
    double sem = 0.0;                  // standard error of the per-prompt differences
    std::optional<EffectSize> effect;  // empty when undefined (zero variance)
};

// Suppression of the k heads chosen by `selection` (top-k, bottom-k or
// matched-random under `seed`) over every (k, g) cell.
std::vector<GridCell> suppression_grid(const InterventionHarness& harness, std::span<const int> ks,
                                       std::span<const double> gates, Selection selection = Selection::top_k,
                                       std::uint64_t seed = 1);

inline constexpr int kDefaultKs[] = {1, 2, 3, 5};
inline constexpr double kDefaultGates[] = {1.0, 0.75, 0.5, 0.25, 0.0};
inline constexpr int kRandomSeeds = 20;

struct ControlRow {
    std::string condition;  // baseline, top-k, bottom-k, matched-random, hard
    int k = 0;
    double gate = 0.0;
    std::vector<HeadId> heads;  // empty for baseline and matched-random
    std::size_t n = 0;
    double sps = 0.0;
    double delta_sps = 0.0;
    double sem = 0.0;
    std::optional<EffectSize> effect;
    // matched-random only: spread over seeds
    int seeds = 0;
    double sps_sd = 0.0;
    double d_mean = 0.0;
    double d_sd = 0.0;
};

// baseline, top-k, bottom-k and matched-random (averaged over `seeds`)
// at gate g; plus hard suppression (g = 0 on every head above the PDS
// threshold) when at least one head is above it.
std::vector<ControlRow> control_suite(const InterventionHarness& harness, int k, double g = 0.0,
                                      int seeds = kRandomSeeds, std::uint64_t seed_base = 1,
                                      double threshold = kPdsThreshold);

}  // namespace latefuse
