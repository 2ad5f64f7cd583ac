#include "latefuse/intervene/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "latefuse/core/errors.hpp"

namespace latefuse {

std::string_view to_string(Selection s) {
    switch (s) {
        case Selection::top_k: return "top-k";
        case Selection::bottom_k: return "bottom-k";
        case Selection::matched_random: return "matched-random";
        case Selection::explicit_list: return "explicit";
        case Selection::none: return "none";
    }
    return "?";
}

Selection parse_selection(std::string_view text) {
    if (text == "top-k" || text == "top") return Selection::top_k;
    if (text == "bottom-k" || text == "bottom") return Selection::bottom_k;
    if (text == "matched-random" || text == "random") return Selection::matched_random;
    if (text == "explicit") return Selection::explicit_list;
    if (text == "none" || text == "baseline") return Selection::none;
    throw ConfigError("unknown selection '" + std::string(text) +
                      "' (expected top-k, bottom-k, matched-random, explicit or none)");
}

void InterventionSpec::validate() const {
    if (!(gate >= 0.0 && gate <= 1.0)) throw ConfigError("gate must lie in [0, 1], got " + std::to_string(gate));
    const bool ranked = selection == Selection::top_k || selection == Selection::bottom_k ||
                        selection == Selection::matched_random;
    if (ranked && k < 1) throw ConfigError("k must be >= 1, got " + std::to_string(k));
    if (selection == Selection::explicit_list && heads.empty()) throw ConfigError("explicit selection needs heads");
}

std::vector<HeadId> rank_heads(const HeadTable& pds, Selection selection, int k, std::uint64_t seed) {
    const int total = pds.n_layers * pds.n_heads;
    if (k < 1 || k > total) {
        throw ConfigError("k = " + std::to_string(k) + " outside 1.." + std::to_string(total) + " heads");
    }
    std::vector<HeadId> heads = all_heads(pds.n_layers, pds.n_heads);
    switch (selection) {
        case Selection::top_k:
        case Selection::bottom_k: {
            const bool top = selection == Selection::top_k;
            std::stable_sort(heads.begin(), heads.end(), [&](const HeadId& a, const HeadId& b) {
                const double va = pds.at(a.layer, a.head), vb = pds.at(b.layer, b.head);
                return top ? va > vb : va < vb;
            });
            break;
        }
        case Selection::matched_random: {
            // Partial Fisher-Yates over the (layer, head)-ordered universe.
            std::mt19937_64 rng(seed);
            for (int i = 0; i < k; ++i) {
                std::uniform_int_distribution<int> pick(i, total - 1);
                std::swap(heads[i], heads[pick(rng)]);
            }
            break;
        }
        default: throw ConfigError("rank_heads needs top-k, bottom-k or matched-random");
    }
    heads.resize(static_cast<std::size_t>(k));
    return heads;
}

std::vector<HeadId> select_heads(const HeadTable& pds, const InterventionSpec& spec) {
    spec.validate();
    switch (spec.selection) {
        case Selection::none: return {};
        case Selection::explicit_list: {
            for (const auto& h : spec.heads) {
                if (h.layer < 0 || h.layer >= pds.n_layers || h.head < 0 || h.head >= pds.n_heads) {
                    throw ConfigError("head " + h.label() + " does not exist");
                }
            }
            return spec.heads;
        }
        default: return rank_heads(pds, spec.selection, spec.k, spec.seed);
    }
}

std::vector<std::size_t> competing_noun_instances(const TraceSet& set) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < set.resolved.size(); ++i) {
        if (set.dataset.instances[set.resolved[i].instance].phenomenon == Phenomenon::competing_nouns) out.push_back(i);
    }
    return out;
}

std::vector<HeadId> measurement_heads(const TraceSet& baseline, int m) {
    const auto cn = competing_noun_instances(baseline);
    const auto table = mean_attention_table(baseline, cn);
    return rank_heads(table, Selection::top_k, std::min(m, table.n_layers * table.n_heads));
}

SpsResult sps(const TraceSet& set, std::span<const HeadId> measurement) {
    const auto cn = competing_noun_instances(set);
    if (cn.empty()) throw DataError("SPS: no competing-nouns instance survived alignment");
    if (measurement.empty()) throw ConfigError("SPS needs at least one measurement head");
    SpsResult r;
    for (const auto& f : set.filtered) {
        for (const auto& inst : set.dataset.instances) {
            if (inst.id == f.instance_id && inst.phenomenon == Phenomenon::competing_nouns) ++r.filtered;
        }
    }
    double total = 0.0;
    for (const std::size_t i : cn) {
        SpsSample s;
        s.prompt_id = set.dataset.instances[set.resolved[i].instance].prompt_id;
        for (const auto& h : measurement) {
            s.semantic += target_mass(set, i, h.layer, h.head);
            s.distractor += distractor_mass(set, i, 0, h.layer, h.head);
        }
        s.semantic /= static_cast<double>(measurement.size());
        s.distractor /= static_cast<double>(measurement.size());
        s.diff = s.semantic - s.distractor;
        total += s.diff;
        r.samples.push_back(std::move(s));
    }
    r.mean = total / static_cast<double>(cn.size());

    r.per_head = {set.n_layers, set.n_heads, {}};
    for (const auto& h : all_heads(set.n_layers, set.n_heads)) {
        double acc = 0.0;
        for (const std::size_t i : cn) acc += target_mass(set, i, h.layer, h.head) - distractor_mass(set, i, 0, h.layer, h.head);
        r.per_head.values.push_back(acc / static_cast<double>(cn.size()));
    }
    return r;
}

InterventionHarness::InterventionHarness(const TraceSource& source, SpsOptions options) : source_(source) {
    baseline_ = source_.capture(nullptr);
    const auto pairs = baseline_.resolved_pairs();
    if (pairs.empty()) throw DataError("intervention needs at least one complete minimal pair to rank heads");
    pds_ = pds_table(baseline_, pairs);
    measurement_ = measurement_heads(baseline_, options.measurement_heads);
    baseline_sps_ = sps(baseline_, measurement_);
}

SpsResult InterventionHarness::run(std::span<const HeadId> heads, double g) const {
    const GateAssignment gates = GateAssignment::uniform(heads, g);
    return sps(source_.capture(&gates), measurement_);
}

namespace {

std::vector<double> diffs(const SpsResult& r) {
    std::vector<double> out;
    for (const auto& s : r.samples) out.push_back(s.diff);
    return out;
}

double sem_of(std::span<const double> xs) {
    return xs.size() > 1 ? sample_sd(xs) / std::sqrt(static_cast<double>(xs.size())) : 0.0;
}

std::optional<EffectSize> effect_or_empty(std::span<const double> base, std::span<const double> treat) {
    try {
        return cohens_d(base, treat);
    } catch (const DataError&) {
        return std::nullopt;
    }
}

}  // namespace

std::vector<GridCell> suppression_grid(const InterventionHarness& harness, std::span<const int> ks,
                                       std::span<const double> gates, Selection selection, std::uint64_t seed) {
    if (selection != Selection::top_k && selection != Selection::bottom_k && selection != Selection::matched_random) {
        throw ConfigError("the suppression grid needs top-k, bottom-k or matched-random selection");
    }
    const auto base = diffs(harness.baseline());
    std::vector<GridCell> out;
    for (const int k : ks) {
        const auto heads = rank_heads(harness.pds(), selection, k, seed);
        for (const double g : gates) {
            if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("gate must lie in [0, 1], got " + std::to_string(g));
            const auto r = harness.run(heads, g);
            const auto treat = diffs(r);
            GridCell cell;
            cell.k = k;
            cell.gate = g;
            cell.condition = std::string(to_string(selection));
            cell.heads = heads;
            cell.n = r.samples.size();
            cell.sps = r.mean;
            cell.delta_sps = r.mean - harness.baseline().mean;
            cell.sem = sem_of(treat);
            cell.effect = effect_or_empty(base, treat);
            out.push_back(std::move(cell));
        }
    }
    return out;
}

std::vector<ControlRow> control_suite(const InterventionHarness& harness, int k, double g, int seeds,
                                      std::uint64_t seed_base, double threshold) {
    if (seeds < 1) throw ConfigError("matched-random needs at least one seed");
    const auto base = diffs(harness.baseline());
    std::vector<ControlRow> rows;

    auto row_for = [&](std::string condition, std::vector<HeadId> heads, double gate) {
        ControlRow row;
        row.condition = std::move(condition);
        row.k = static_cast<int>(heads.size());
        row.gate = gate;
        const auto r = heads.empty() ? harness.baseline() : harness.run(heads, gate);
        row.heads = std::move(heads);
        row.n = r.samples.size();
        row.sps = r.mean;
        row.delta_sps = r.mean - harness.baseline().mean;
        const auto treat = diffs(r);
        row.sem = sem_of(treat);
        row.effect = effect_or_empty(base, treat);
        return row;
    };

    ControlRow baseline = row_for("baseline", {}, 1.0);
    rows.push_back(baseline);
    rows.push_back(row_for("top-k", rank_heads(harness.pds(), Selection::top_k, k), g));
    rows.push_back(row_for("bottom-k", rank_heads(harness.pds(), Selection::bottom_k, k), g));

    // Matched random: per-seed effects, plus one effect on the per-prompt
    // mean over seeds.
    ControlRow random;
    random.condition = "matched-random";
    random.k = k;
    random.gate = g;
    random.seeds = seeds;
    std::vector<double> seed_sps, seed_d, averaged(base.size(), 0.0);
    for (int s = 0; s < seeds; ++s) {
        const auto heads = rank_heads(harness.pds(), Selection::matched_random, k, seed_base + static_cast<std::uint64_t>(s));
        const auto r = harness.run(heads, g);
        const auto treat = diffs(r);
        for (std::size_t i = 0; i < averaged.size(); ++i) averaged[i] += treat[i] / seeds;
        seed_sps.push_back(r.mean);
        if (const auto e = effect_or_empty(base, treat)) seed_d.push_back(e->d);
    }
    random.n = base.size();
    random.sps = mean(seed_sps);
    random.delta_sps = random.sps - harness.baseline().mean;
    random.sps_sd = seeds > 1 ? sample_sd(seed_sps) : 0.0;
    random.d_mean = seed_d.empty() ? 0.0 : mean(seed_d);
    random.d_sd = seed_d.size() > 1 ? sample_sd(seed_d) : 0.0;
    random.sem = sem_of(averaged);
    random.effect = effect_or_empty(base, averaged);
    rows.push_back(std::move(random));

    const auto above = heads_above(harness.pds(), threshold);
    if (!above.empty()) rows.push_back(row_for("hard", above, 0.0));
    return rows;
}

}  // namespace latefuse
