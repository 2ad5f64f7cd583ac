#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <string>

#include "latefuse/arch/model.hpp"
#include "latefuse/intervene/intervention.hpp"
#include "latefuse/intervene/stats.hpp"
#include "../support/oracles.hpp"

using namespace latefuse;

namespace {

// Masses (target, first distractor) for one head on one instance, given the
// gates of the capture.
using MassRule = std::function<std::pair<double, double>(const CoreferenceInstance&, std::size_t, HeadId,
                                                         const GateAssignment*)>;

double gate_of(const GateAssignment* g, HeadId h) { return g ? g->get(h.layer, h.head) : 1.0; }

// Jitter in [-0.02, 0.02] shared by both members of a pair, so samples have
// variance while order-blind heads keep a PDS of exactly zero.
double jitter(const CoreferenceInstance& inst, int salt) {
    std::mt19937_64 rng(std::hash<std::string>{}(inst.pair_id.value_or(inst.id)) + static_cast<std::size_t>(salt));
    return std::uniform_real_distribution<double>(-0.02, 0.02)(rng);
}

class RuleSource final : public TraceSource {
public:
    RuleSource(ProbeDataset ds, int layers, int heads, MassRule rule)
        : ds_(std::move(ds)), layers_(layers), heads_(heads), rule_(std::move(rule)) {}
    int n_layers() const override { return layers_; }
    int n_heads() const override { return heads_; }
    TraceSet capture(const GateAssignment* gates) const override {
        std::mt19937_64 rng(42);
        auto s = latefuse::testing::synthetic_trace_set(ds_, layers_, heads_, rng);
        for (std::size_t ri = 0; ri < s.resolved.size(); ++ri) {
            const auto& r = s.resolved[ri];
            for (const auto& h : all_heads(layers_, heads_)) {
                const auto [t, d] = rule_(ds_.instances[r.instance], r.instance, h, gates);
                auto row = s.traces[r.trace].row(h.layer, h.head, r.query_token);
                std::fill(row.begin(), row.end(), 0.0);
                row[r.target.first] = t;
                row[r.distractors[0].first] = d;
                row[r.query_token] = 1.0 - t - d;
            }
        }
        return s;
    }

private:
    ProbeDataset ds_;
    int layers_, heads_;
    MassRule rule_;
};

ProbeDataset grid() { return build_competing_noun_grid(default_grid()); }

// L0.H0 tracks recency (whichever noun is last gets the mass) and leaks
// distractor mass into the semantic head L1.H1 in proportion to its gate.
// L1.H1 prefers the semantic noun. Everything else is flat.
std::pair<double, double> recency_rule(const CoreferenceInstance& inst, std::size_t, HeadId h,
                                       const GateAssignment* g) {
    const bool last = inst.order == Order::target_last;
    if (h == HeadId{0, 0}) return last ? std::pair{0.5, 0.05} : std::pair{0.05, 0.5};
    if (h == HeadId{1, 1}) return {0.5 + jitter(inst, 1), 0.1 + 0.25 * gate_of(g, {0, 0}) + jitter(inst, 2)};
    return {0.05, 0.05};
}

// Semantics carried by the zero-PDS head L0.H0 (bottom of the ranking); the
// recency head L1.H0 barely touches the measured masses.
std::pair<double, double> semantic_bottom_rule(const CoreferenceInstance& inst, std::size_t, HeadId h,
                                               const GateAssignment* g) {
    const bool last = inst.order == Order::target_last;
    if (h == HeadId{0, 0}) {
        const double gs = gate_of(g, h);
        return {0.1 + 0.6 * gs + jitter(inst, 3), 0.1 + 0.01 * gate_of(g, {1, 0}) + jitter(inst, 4)};
    }
    if (h == HeadId{1, 0}) return last ? std::pair{0.2, 0.02} : std::pair{0.02, 0.2};
    const double m = 0.03 + 0.01 * h.head;
    return last ? std::pair{m, 0.01} : std::pair{0.01, 0.01};
}

std::vector<double> diffs(const SpsResult& r) {
    std::vector<double> out;
    for (const auto& s : r.samples) out.push_back(s.diff);
    return out;
}

}  // namespace

TEST_SUITE("ranking") {
    TEST_CASE("top-k, bottom-k and ties") {
        HeadTable t{1, 3, {0.2, 0.3, 0.1}};
        CHECK(rank_heads(t, Selection::top_k, 2) == std::vector<HeadId>{{0, 1}, {0, 0}});
        CHECK(rank_heads(t, Selection::bottom_k, 1) == std::vector<HeadId>{{0, 2}});
        CHECK(rank_heads(t, Selection::top_k, 3).size() == 3);
        CHECK_THROWS_AS(rank_heads(t, Selection::top_k, 4), ConfigError);
        CHECK_THROWS_AS(rank_heads(t, Selection::top_k, 0), ConfigError);

        HeadTable ties{2, 2, {0.1, 0.5, 0.5, 0.1}};
        CHECK(rank_heads(ties, Selection::top_k, 2) == std::vector<HeadId>{{0, 1}, {1, 0}});
        CHECK(rank_heads(ties, Selection::bottom_k, 2) == std::vector<HeadId>{{0, 0}, {1, 1}});
    }

    TEST_CASE("matched random is seeded and draws without replacement") {
        HeadTable t{6, 6, std::vector<double>(36, 0.0)};
        const auto a = rank_heads(t, Selection::matched_random, 7, 5);
        CHECK(a == rank_heads(t, Selection::matched_random, 7, 5));
        CHECK(std::set<HeadId>(a.begin(), a.end()).size() == 7);
        bool differs = false;
        for (std::uint64_t s = 6; s < 12; ++s) differs |= rank_heads(t, Selection::matched_random, 7, s) != a;
        CHECK(differs);
    }

    TEST_CASE("spec validation") {
        InterventionSpec s;
        s.selection = Selection::top_k;
        s.k = 0;
        CHECK_THROWS_AS(s.validate(), ConfigError);
        s.k = 1;
        s.gate = 1.2;
        CHECK_THROWS_AS(s.validate(), ConfigError);
        s.gate = 0.5;
        CHECK_NOTHROW(s.validate());
        HeadTable t{1, 2, {0.1, 0.2}};
        s.selection = Selection::explicit_list;
        s.heads = {{0, 5}};
        CHECK_THROWS_AS(select_heads(t, s), ConfigError);
        s.selection = Selection::none;
        CHECK(select_heads(t, s).empty());
        CHECK(parse_selection("bottom-k") == Selection::bottom_k);
        CHECK_THROWS_AS(parse_selection("sideways"), ConfigError);
    }
}

TEST_SUITE("effect size") {
    TEST_CASE("identical samples give d = 0 and p = 1") {
        const std::vector<double> a{0.1, 0.4, 0.2, 0.9};
        const auto e = cohens_d(a, a);
        CHECK(e.d == 0.0);
        CHECK(e.p_value == 1.0);
    }

    TEST_CASE("a one-sd shift at n = 10^4 gives d close to 1") {
        std::mt19937_64 rng(1);
        std::normal_distribution<double> n(0.0, 1.0);
        std::vector<double> a(10000);
        for (auto& x : a) x = n(rng);
        const double sd = sample_sd(a);
        std::vector<double> b(a);
        for (auto& x : b) x += sd;
        const auto e = cohens_d(a, b);
        CHECK(e.d == doctest::Approx(1.0).epsilon(0.01));
        CHECK(e.p_value < 1e-10);
        CHECK(cohens_d(b, a).d == doctest::Approx(-e.d));
    }

    TEST_CASE("scale and shift invariance") {
        std::mt19937_64 rng(2);
        std::normal_distribution<double> n(0.0, 1.0);
        std::vector<double> a(40), b(55);
        for (auto& x : a) x = n(rng);
        for (auto& x : b) x = n(rng) + 0.3;
        const double d = cohens_d(a, b).d;
        auto map = [](std::vector<double> v, double s, double c) {
            for (auto& x : v) x = s * x + c;
            return v;
        };
        CHECK(cohens_d(map(a, 3.5, 0), map(b, 3.5, 0)).d == doctest::Approx(d).epsilon(1e-12));
        CHECK(cohens_d(map(a, 1, -7), map(b, 1, -7)).d == doctest::Approx(d).epsilon(1e-9));
    }

    TEST_CASE("matches the brute-force Welch computation") {
        std::mt19937_64 rng(3);
        std::normal_distribution<double> n(0.0, 1.0);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> a(5 + trial), b(8 + 2 * trial);
            for (auto& x : a) x = n(rng);
            for (auto& x : b) x = 1.5 * n(rng) + 0.2;
            const auto e = cohens_d(a, b);
            const auto o = latefuse::testing::brute::cohens_d(a, b);
            CHECK(std::abs(e.d - o.d) < 1e-9);
            CHECK(std::abs(e.t - o.t) < 1e-9);
            CHECK(std::abs(e.df - o.df) < 1e-9);
            CHECK(std::abs(e.p_value - o.p) < 1e-9);
        }
    }

    TEST_CASE("undefined cases") {
        CHECK_THROWS_AS(cohens_d(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), DataError);
        CHECK_THROWS_AS(cohens_d(std::vector<double>{1.0, 1.0}, std::vector<double>{2.0, 2.0}), DataError);
    }
}

TEST_SUITE("sps") {
    TEST_CASE("equal masses give zero SPS") {
        const RuleSource src(grid(), 1, 2, [](auto&, auto, auto, auto) { return std::pair{0.2, 0.2}; });
        const auto r = sps(src.capture(nullptr), std::vector<HeadId>{{0, 0}, {0, 1}});
        CHECK(r.mean == 0.0);
        CHECK(r.samples.size() == 60);
        for (const auto& s : r.samples) CHECK(s.diff == 0.0);
    }

    TEST_CASE("measurement heads are ranked by mean target attention") {
        const RuleSource src(grid(), 2, 2, recency_rule);
        CHECK(measurement_heads(src.capture(nullptr), 1) == std::vector<HeadId>{{1, 1}});
        CHECK(measurement_heads(src.capture(nullptr), 2) == std::vector<HeadId>{{1, 1}, {0, 0}});
    }

    TEST_CASE("datasets without competing nouns are rejected") {
        ProbeDataset ds = diagnostic_set();
        std::erase_if(ds.instances, [](const auto& i) { return i.phenomenon == Phenomenon::competing_nouns; });
        std::mt19937_64 rng(1);
        const auto s = latefuse::testing::synthetic_trace_set(ds, 1, 1, rng);
        CHECK_THROWS_AS(sps(s, std::vector<HeadId>{{0, 0}}), DataError);
    }
}

TEST_SUITE("harness") {
    TEST_CASE("baseline is reproducible and gate 1 is neutral") {
        const RuleSource src(grid(), 2, 2, recency_rule);
        const InterventionHarness h(src, {1});
        const InterventionHarness again(src, {1});
        CHECK(diffs(h.baseline()) == diffs(again.baseline()));
        const int ks[] = {1, 2, 3, 4};
        const double gates[] = {1.0};
        for (const auto& cell : suppression_grid(h, ks, gates)) {
            CHECK(cell.delta_sps == 0.0);
            CHECK(diffs(h.run(cell.heads, 1.0)) == diffs(h.baseline()));
            REQUIRE(cell.effect.has_value());
            CHECK(cell.effect->d == 0.0);
        }
    }

    TEST_CASE("one recency head: |delta SPS| grows as the gate closes") {
        const RuleSource src(grid(), 2, 2, recency_rule);
        const InterventionHarness h(src, {1});
        CHECK(h.pds().at(0, 0) == doctest::Approx(0.45));
        const int ks[] = {1};
        const auto cells = suppression_grid(h, ks, kDefaultGates);
        REQUIRE(cells.size() == 5);
        CHECK(cells[0].heads == std::vector<HeadId>{{0, 0}});
        for (std::size_t i = 1; i < cells.size(); ++i) {
            CHECK(cells[i].gate < cells[i - 1].gate);
            CHECK(std::abs(cells[i].delta_sps) > std::abs(cells[i - 1].delta_sps));
        }
        CHECK(cells.back().delta_sps == doctest::Approx(0.25).epsilon(1e-9));
    }

    TEST_CASE("the (k, 0) cell equals hard suppression of the same heads") {
        const RuleSource src(grid(), 2, 2, recency_rule);
        const InterventionHarness h(src, {2});
        const int ks[] = {1, 2, 3};
        const double gates[] = {0.0};
        for (const auto& cell : suppression_grid(h, ks, gates)) {
            const auto hard = h.run(cell.heads, 0.0);
            CHECK(cell.sps == hard.mean);
            CHECK(cell.n == hard.samples.size());
        }
    }

    TEST_CASE("semantics in the bottom-ranked head: bottom-k hurts more than top-k") {
        const RuleSource src(grid(), 2, 2, semantic_bottom_rule);
        const InterventionHarness h(src, {1});
        CHECK(rank_heads(h.pds(), Selection::bottom_k, 1) == std::vector<HeadId>{{0, 0}});
        CHECK(rank_heads(h.pds(), Selection::top_k, 1) == std::vector<HeadId>{{1, 0}});
        const auto rows = control_suite(h, 1, 0.0, 5);
        auto row = [&](const std::string& c) {
            return *std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.condition == c; });
        };
        REQUIRE(row("top-k").effect.has_value());
        REQUIRE(row("bottom-k").effect.has_value());
        CHECK(std::abs(row("bottom-k").effect->d) > std::abs(row("top-k").effect->d));
        CHECK(row("bottom-k").effect->d < 0.0);
    }

    TEST_CASE("control suite lists every condition") {
        const RuleSource src(grid(), 2, 2, recency_rule);
        const InterventionHarness h(src, {1});
        const auto rows = control_suite(h, 2, 0.0, 4);
        std::vector<std::string> names;
        for (const auto& r : rows) names.push_back(r.condition);
        CHECK(names == std::vector<std::string>{"baseline", "top-k", "bottom-k", "matched-random", "hard"});
        CHECK(rows[0].effect->d == 0.0);
        CHECK(rows[0].n == 60);
        CHECK(rows[3].seeds == 4);
        CHECK(rows[4].heads == std::vector<HeadId>{{0, 0}});
        for (const auto& r : rows) {
            CHECK(r.n == 60);
            CHECK(r.effect.has_value());
        }
        CHECK_THROWS_AS(control_suite(h, 2, 0.0, 0), ConfigError);
    }

    TEST_CASE("real model: gate 1 neutrality and grid consistency") {
        ModelConfig c;
        c.variant = Variant::lfa;
        c.n_layers = 2;
        c.n_heads = 2;
        c.d_model = 16;
        c.vocab_size = 256;
        c.max_seq_len = 64;
        const auto model = Model::initialize(c, 3);
        const auto tok = Tokenizer::byte_level();
        const ModelTraceSource src(model, tok, grid());
        const InterventionHarness h(src, {2});
        const int ks[] = {1, 3};
        const double gates[] = {1.0, 0.0};
        const auto cells = suppression_grid(h, ks, gates, Selection::bottom_k);
        for (const auto& cell : cells) {
            CHECK(cell.condition == "bottom-k");
            if (cell.gate == 1.0) CHECK(cell.delta_sps == 0.0);
            else CHECK(cell.sps == h.run(cell.heads, 0.0).mean);
        }
        CHECK_THROWS_AS(suppression_grid(h, ks, gates, Selection::none), ConfigError);
    }
}
