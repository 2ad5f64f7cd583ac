#include "latefuse/diag/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "latefuse/core/errors.hpp"

namespace latefuse {

std::vector<HeadId> all_heads(int n_layers, int n_heads) {
    std::vector<HeadId> out;
    for (int l = 0; l < n_layers; ++l) {
        for (int h = 0; h < n_heads; ++h) out.push_back({l, h});
    }
    return out;
}

double attention_mass(const AttentionTrace& trace, int layer, int head, std::size_t query, const TokenSpan& span) {
    if (layer < 0 || layer >= trace.n_layers || head < 0 || head >= trace.n_heads) {
        throw IndexError("head L" + std::to_string(layer) + ".H" + std::to_string(head) + " not in trace");
    }
    if (query >= trace.n_tokens || span.first > span.last || span.last >= trace.n_tokens) {
        throw IndexError("token index out of range in trace '" + trace.prompt_id + "'");
    }
    const auto row = trace.row(layer, head, query);
    double s = 0.0;
    for (std::size_t j = span.first; j <= span.last; ++j) s += row[j];
    return s;
}

namespace {

const ResolvedInstance& resolved_at(const TraceSet& set, std::size_t i) {
    if (i >= set.resolved.size()) throw IndexError("resolved instance " + std::to_string(i) + " out of range");
    return set.resolved[i];
}

}  // namespace

double target_mass(const TraceSet& set, std::size_t resolved, int layer, int head) {
    const auto& r = resolved_at(set, resolved);
    return attention_mass(set.traces.at(r.trace), layer, head, r.query_token, r.target);
}

double distractor_mass(const TraceSet& set, std::size_t resolved, std::size_t distractor, int layer, int head) {
    const auto& r = resolved_at(set, resolved);
    return attention_mass(set.traces.at(r.trace), layer, head, r.query_token, r.distractors.at(distractor));
}

double mean_attention(const TraceSet& set, int layer, int head, std::span<const std::size_t> resolved) {
    if (resolved.empty()) throw DataError("mean attention over an empty instance set");
    double s = 0.0;
    for (const std::size_t i : resolved) s += target_mass(set, i, layer, head);
    return s / static_cast<double>(resolved.size());
}

double top1_accuracy(const TraceSet& set, int layer, int head, std::span<const std::size_t> resolved) {
    if (resolved.empty()) throw DataError("Top1 over an empty instance set");
    int wins = 0;
    for (const std::size_t i : resolved) {
        const double t = target_mass(set, i, layer, head);
        bool win = true;
        for (std::size_t d = 0; d < set.resolved[i].distractors.size(); ++d) {
            if (distractor_mass(set, i, d, layer, head) >= t) win = false;
        }
        wins += win ? 1 : 0;
    }
    return 100.0 * wins / static_cast<double>(resolved.size());
}

namespace {

struct Preference {
    double total = 0.0;                // mass to target plus distractors
    std::optional<std::string> label;  // word of the preferred span; empty on a tie
};

Preference preference(const TraceSet& set, std::size_t ri, int layer, int head) {
    const auto& r = set.resolved[ri];
    const auto& inst = set.dataset.instances[r.instance];
    Preference p;
    double best = target_mass(set, ri, layer, head);
    p.total = best;
    p.label = inst.text(inst.target);
    for (std::size_t d = 0; d < r.distractors.size(); ++d) {
        const double m = distractor_mass(set, ri, d, layer, head);
        p.total += m;
        if (m > best) {
            best = m;
            p.label = inst.text(inst.distractors[d]);
        } else if (m == best) {
            p.label.reset();
        }
    }
    return p;
}

}  // namespace

PairStability pair_stability(const TraceSet& set, std::size_t pair_index, std::span<const HeadId> heads, double tau) {
    const auto pairs = set.resolved_pairs();
    const auto ids = set.resolved_pair_ids();
    if (pair_index >= pairs.size()) throw IndexError("pair " + std::to_string(pair_index) + " out of range");
    const auto [first, last] = pairs[pair_index];
    PairStability out;
    out.pair_id = ids[pair_index];
    for (const auto& h : heads) {
        const auto a = preference(set, first, h.layer, h.head);
        const auto b = preference(set, last, h.layer, h.head);
        if (a.total < tau || b.total < tau) continue;
        ++out.eligible;
        if (a.label && b.label && *a.label == *b.label) ++out.stable;
    }
    if (out.eligible > 0) out.ratio = static_cast<double>(out.stable) / out.eligible;
    return out;
}

StabilitySummary stability(const TraceSet& set, std::span<const HeadId> heads, double tau,
                           std::span<const std::size_t> pair_indices) {
    StabilitySummary s;
    std::vector<std::size_t> which(pair_indices.begin(), pair_indices.end());
    if (which.empty()) {
        for (std::size_t i = 0; i < set.resolved_pairs().size(); ++i) which.push_back(i);
    }
    double sum = 0.0;
    int n = 0;
    for (const std::size_t i : which) {
        s.pairs.push_back(pair_stability(set, i, heads, tau));
        if (const auto r = s.pairs.back().ratio) {
            sum += *r;
            ++n;
            s.min = s.min ? std::min(*s.min, *r) : *r;
            s.max = s.max ? std::max(*s.max, *r) : *r;
        }
    }
    if (n > 0) s.mean = sum / n;
    return s;
}

double pds(const TraceSet& set, int layer, int head, std::span<const std::pair<std::size_t, std::size_t>> pairs) {
    if (pairs.empty()) throw DataError("PDS needs at least one complete minimal pair");
    double first = 0.0, last = 0.0;
    for (const auto& [f, l] : pairs) {
        first += target_mass(set, f, layer, head);
        last += target_mass(set, l, layer, head);
    }
    const double k = static_cast<double>(pairs.size());
    return std::abs(last / k - first / k);
}

namespace {

template <typename F>
HeadTable table_of(const TraceSet& set, F&& f) {
    HeadTable t{set.n_layers, set.n_heads, {}};
    for (int l = 0; l < set.n_layers; ++l) {
        for (int h = 0; h < set.n_heads; ++h) t.values.push_back(f(l, h));
    }
    return t;
}

}  // namespace

HeadTable pds_table(const TraceSet& set, std::span<const std::pair<std::size_t, std::size_t>> pairs) {
    return table_of(set, [&](int l, int h) { return pds(set, l, h, pairs); });
}

HeadTable mean_attention_table(const TraceSet& set, std::span<const std::size_t> resolved) {
    return table_of(set, [&](int l, int h) { return mean_attention(set, l, h, resolved); });
}

HeadTable top1_table(const TraceSet& set, std::span<const std::size_t> resolved) {
    return table_of(set, [&](int l, int h) { return top1_accuracy(set, l, h, resolved); });
}

PdsSummary summarize_pds(const HeadTable& table, double threshold, int late_layers) {
    PdsSummary s;
    s.threshold = threshold;
    s.late_layers = std::min(late_layers, table.n_layers);
    const int late_begin = table.n_layers - s.late_layers;
    double sum = 0.0;
    for (int l = 0; l < table.n_layers; ++l) {
        double mx = 0.0;
        for (int h = 0; h < table.n_heads; ++h) {
            const double v = table.at(l, h);
            sum += v;
            mx = std::max(mx, v);
            if (v > threshold) {
                ++s.total_above;
                if (l >= late_begin) ++s.late_above;
            }
            if (l == table.n_layers - 1 && (h == 0 || v > s.max_last_layer)) {
                s.max_last_layer = v;
                s.argmax_last_layer = {l, h};
            }
        }
        s.max_per_layer.push_back(mx);
    }
    const int n = table.n_layers * table.n_heads;
    s.average = n > 0 ? sum / n : 0.0;
    return s;
}

std::vector<HeadId> heads_above(const HeadTable& table, double threshold) {
    std::vector<HeadId> out;
    for (int l = 0; l < table.n_layers; ++l) {
        for (int h = 0; h < table.n_heads; ++h) {
            if (table.at(l, h) > threshold) out.push_back({l, h});
        }
    }
    return out;
}

Histogram histogram(std::span<const double> values, double bin_width, double upper) {
    if (!(bin_width > 0.0) || !(upper > 0.0)) throw ConfigError("histogram bin width and upper bound must be positive");
    Histogram hist;
    hist.bin_width = bin_width;
    const auto bins = static_cast<std::size_t>(std::ceil(upper / bin_width - 1e-9));
    hist.counts.assign(std::max<std::size_t>(bins, 1), 0);
    for (const double v : values) {
        if (!(v >= 0.0)) throw DataError("histogram value " + std::to_string(v) + " is negative or NaN");
        const auto bin = std::min(static_cast<std::size_t>(v / bin_width), hist.counts.size() - 1);
        ++hist.counts[bin];
    }
    return hist;
}

}  // namespace latefuse
