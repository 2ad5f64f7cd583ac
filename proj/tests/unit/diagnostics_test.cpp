#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "latefuse/arch/model.hpp"
#include "latefuse/diag/metrics.hpp"
#include "latefuse/diag/probe_dataset.hpp"
#include "latefuse/diag/trace.hpp"
#include "../support/oracles.hpp"

using namespace latefuse;
using latefuse::testing::synthetic_trace_set;

namespace {

CompetingNounGrid one_template(std::vector<std::pair<std::string, std::string>> nouns) {
    return {{"{N} saw a {A} and a {B}. {P} used {it}."}, std::move(nouns)};
}

// Query row of one head: `t` on the target's first token, `d` on the first
// distractor's first token, the rest on the query token itself.
void set_masses(TraceSet& s, std::size_t ri, int l, int h, double t, double d) {
    const auto& r = s.resolved[ri];
    auto row = s.traces[r.trace].row(l, h, r.query_token);
    std::fill(row.begin(), row.end(), 0.0);
    row[r.target.first] = t;
    row[r.distractors[0].first] = d;
    row[r.query_token] = 1.0 - t - d;
}

std::vector<std::size_t> all_resolved(const TraceSet& s) {
    std::vector<std::size_t> v(s.resolved.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    return v;
}

}  // namespace

TEST_SUITE("probe dataset") {
    TEST_CASE("diagnostic set shape and the verbatim example") {
        const auto ds = diagnostic_set();
        CHECK(ds.instances.size() == 29);
        CHECK(ds.prompt_count() == 13);
        CHECK_NOTHROW(validate_dataset(ds));
        const auto& first = ds.instances.front();
        CHECK(first.prompt == "Tim saw a key and a box. He used it.");
        CHECK(first.text(first.target) == "key");
        CHECK(first.order == Order::target_first);
        CHECK(first.text(first.query) == "it");
    }

    TEST_CASE("one template and one noun pair give one minimal pair") {
        const auto ds = build_competing_noun_grid(one_template({{"key", "box"}}));
        REQUIRE(ds.instances.size() == 2);
        const auto pairs = ds.pairs();
        REQUIRE(pairs.size() == 1);
        const auto& a = ds.instances[pairs[0].target_first];
        const auto& b = ds.instances[pairs[0].target_last];
        CHECK(a.prompt == "Tim saw a key and a box. He used it.");
        CHECK(b.prompt == "Tim saw a box and a key. He used it.");
        CHECK(b.order == Order::target_last);
        CHECK(a.pair_id == b.pair_id);
        CHECK(a.text(a.target) == b.text(b.target));
        CHECK(a.text(a.distractors[0]) == b.text(b.distractors[0]));
    }

    TEST_CASE("default grid pairs every competing-nouns instance") {
        const auto ds = build_competing_noun_grid(default_grid());
        CHECK(ds.instances.size() == 60);
        CHECK(ds.pairs().size() == 30);
        CHECK_NOTHROW(validate_dataset(ds));
    }

    TEST_CASE("templates with the query first are rejected") {
        CompetingNounGrid g{{"{P} used {it}. {N} saw a {A} and a {B}."}, {{"key", "box"}}};
        CHECK_THROWS_AS(build_competing_noun_grid(g), DataError);
    }

    TEST_CASE("invalid instances") {
        auto inst = diagnostic_set().instances.front();
        inst.target = {30, 34};
        CHECK_THROWS_AS(validate_instance(inst), DataError);
        inst = diagnostic_set().instances.front();
        inst.query = {100, 102};
        CHECK_THROWS_AS(validate_instance(inst), DataError);
    }

    TEST_CASE("jsonl round trip and incomplete pairs") {
        const auto ds = build_competing_noun_grid(one_template({{"key", "box"}, {"pen", "bag"}}));
        std::string text;
        for (const auto& i : ds.instances) text += to_json(i).dump() + "\n";
        CHECK(parse_dataset(text).instances == ds.instances);
        std::string broken;
        for (std::size_t i = 0; i < 3; ++i) broken += to_json(ds.instances[i]).dump() + "\n";
        CHECK_THROWS_AS(parse_dataset(broken), DataError);
        CHECK_THROWS_AS(parse_dataset("{not json}\n"), DataError);
    }
}

TEST_SUITE("metrics") {
    TEST_CASE("attention mass on a hand-built trace") {
        AttentionTrace t;
        t.n_layers = 1;
        t.n_heads = 1;
        t.n_tokens = 3;
        t.attention = {1, 0, 0, 0.25, 0.75, 0, 0.2, 0.3, 0.5};
        CHECK(attention_mass(t, 0, 0, 2, {0, 1}) == doctest::Approx(0.5));
        CHECK(attention_mass(t, 0, 0, 2, {0, 2}) == doctest::Approx(1.0));
        CHECK(attention_mass(t, 0, 0, 1, {2, 2}) == 0.0);
        CHECK(attention_mass(t, 0, 0, 1, {1, 1}) == 0.75);
        CHECK_THROWS_AS(attention_mass(t, 0, 1, 1, {1, 1}), IndexError);
        CHECK_THROWS_AS(attention_mass(t, 0, 0, 3, {1, 1}), IndexError);
    }

    TEST_CASE("mean attention, Top1 and PDS on crafted masses") {
        std::mt19937_64 rng(1);
        const auto ds = build_competing_noun_grid(one_template({{"key", "box"}, {"pen", "bag"}}));
        auto s = synthetic_trace_set(ds, 1, 1, rng);
        // pairs: (0 first, 1 last), (2 first, 3 last)
        set_masses(s, 0, 0, 0, 0.1, 0.2);
        set_masses(s, 1, 0, 0, 0.6, 0.1);
        set_masses(s, 2, 0, 0, 0.3, 0.1);
        set_masses(s, 3, 0, 0, 0.4, 0.1);

        const std::vector<std::size_t> two{0, 2};
        CHECK(mean_attention(s, 0, 0, two) == doctest::Approx(0.2));
        const std::vector<std::size_t> one{1};
        CHECK(mean_attention(s, 0, 0, one) == doctest::Approx(0.6));
        CHECK(top1_accuracy(s, 0, 0, all_resolved(s)) == doctest::Approx(75.0));
        CHECK(pds(s, 0, 0, s.resolved_pairs()) == doctest::Approx(0.3));

        set_masses(s, 0, 0, 0, 0.2, 0.2);
        CHECK(top1_accuracy(s, 0, 0, std::vector<std::size_t>{0}) == 0.0);
        CHECK_THROWS_AS(mean_attention(s, 0, 0, std::vector<std::size_t>{}), DataError);
    }

    TEST_CASE("identical attention in both orders gives PDS 0") {
        std::mt19937_64 rng(2);
        const auto ds = build_competing_noun_grid(one_template({{"key", "box"}}));
        auto s = synthetic_trace_set(ds, 2, 2, rng);
        for (int l = 0; l < 2; ++l) {
            for (int h = 0; h < 2; ++h) {
                set_masses(s, 0, l, h, 0.3, 0.2);
                set_masses(s, 1, l, h, 0.3, 0.2);
            }
        }
        for (const double v : pds_table(s, s.resolved_pairs()).values) CHECK(v == 0.0);
    }

    TEST_CASE("stability: two of four heads consistent") {
        std::mt19937_64 rng(3);
        const auto ds = build_competing_noun_grid(one_template({{"key", "box"}}));
        auto s = synthetic_trace_set(ds, 2, 2, rng);
        // head 0, 1: prefer "key" in both orders; head 2: flips; head 3: tie in one order.
        set_masses(s, 0, 0, 0, 0.5, 0.1);
        set_masses(s, 1, 0, 0, 0.4, 0.2);
        set_masses(s, 0, 0, 1, 0.3, 0.2);
        set_masses(s, 1, 0, 1, 0.6, 0.1);
        set_masses(s, 0, 1, 0, 0.5, 0.1);
        set_masses(s, 1, 1, 0, 0.1, 0.5);
        set_masses(s, 0, 1, 1, 0.2, 0.2);
        set_masses(s, 1, 1, 1, 0.4, 0.1);
        const auto heads = all_heads(2, 2);
        const auto p = pair_stability(s, 0, heads, 0.1);
        CHECK(p.eligible == 4);
        CHECK(p.stable == 2);
        CHECK(*p.ratio == doctest::Approx(0.5));

        const auto none = pair_stability(s, 0, heads, 0.95);
        CHECK(none.eligible == 0);
        CHECK_FALSE(none.ratio.has_value());
        const auto summary = stability(s, heads, 0.95);
        CHECK_FALSE(summary.mean.has_value());
    }

    TEST_CASE("all heads prefer the target in both orders") {
        std::mt19937_64 rng(4);
        const auto ds = build_competing_noun_grid(one_template({{"key", "box"}}));
        auto s = synthetic_trace_set(ds, 1, 3, rng);
        for (int h = 0; h < 3; ++h) {
            set_masses(s, 0, 0, h, 0.6, 0.1);
            set_masses(s, 1, 0, h, 0.5, 0.2);
        }
        CHECK(*pair_stability(s, 0, all_heads(1, 3)).ratio == 1.0);
    }

    TEST_CASE("PDS summary") {
        HeadTable t{3, 2, {0.0, 0.08, 0.01, 0.02, 0.2, 0.05}};
        const auto s = summarize_pds(t, 0.075, 2);
        CHECK(s.total_above == 2);
        CHECK(s.late_above == 1);
        CHECK(s.max_last_layer == 0.2);
        CHECK(s.argmax_last_layer == HeadId{2, 0});
        CHECK(s.max_per_layer == std::vector<double>{0.08, 0.02, 0.2});
        CHECK(s.average == doctest::Approx(0.36 / 6));
        CHECK(heads_above(t) == std::vector<HeadId>{{0, 1}, {2, 0}});

        HeadTable zero{2, 2, {0, 0, 0, 0}};
        const auto z = summarize_pds(zero);
        CHECK(z.total_above == 0);
        CHECK(z.late_above == 0);
    }

    TEST_CASE("histogram conserves counts") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(0.0, 1.2);
        std::vector<double> xs(97);
        for (auto& x : xs) x = u(rng);
        xs.push_back(1.0);
        xs.push_back(0.0);
        const auto h = histogram(xs, 0.025);
        CHECK(h.counts.size() == 40);
        int total = 0;
        for (const int c : h.counts) total += c;
        CHECK(total == static_cast<int>(xs.size()));
        CHECK_THROWS_AS(histogram(std::vector<double>{-0.1}), DataError);
    }

    TEST_CASE("thresholds are monotone") {
        std::mt19937_64 rng(6);
        const auto ds = build_competing_noun_grid(default_grid());
        const auto s = synthetic_trace_set(ds, 3, 3, rng, 3.0);
        const auto table = pds_table(s, s.resolved_pairs());
        const auto heads = all_heads(3, 3);
        int prev_above = 1 << 30, prev_eligible = 1 << 30;
        for (double thr = 0.0; thr <= 0.5; thr += 0.01) {
            const int above = summarize_pds(table, thr).total_above;
            CHECK(above <= prev_above);
            prev_above = above;
            int eligible = 0;
            for (const auto& p : stability(s, heads, thr).pairs) eligible += p.eligible;
            CHECK(eligible <= prev_eligible);
            prev_eligible = eligible;
        }
    }

    TEST_CASE("relabelling instance order leaves every metric unchanged") {
        std::mt19937_64 rng(7);
        const auto ds = build_competing_noun_grid(one_template({{"key", "box"}, {"pen", "bag"}, {"rope", "bowl"}}));
        const auto s = synthetic_trace_set(ds, 2, 2, rng);

        auto shuffled = ds;
        std::vector<std::size_t> perm(ds.instances.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < perm.size(); ++i) shuffled.instances[i] = ds.instances[perm[i]];
        TraceSet t = s;
        t.dataset = shuffled;
        for (auto& r : t.resolved) {
            r.instance = static_cast<std::size_t>(std::find(perm.begin(), perm.end(), r.instance) - perm.begin());
        }
        const auto a = pds_table(s, s.resolved_pairs());
        const auto b = pds_table(t, t.resolved_pairs());
        for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-12));
        const auto ma = mean_attention_table(s, all_resolved(s));
        const auto mb = mean_attention_table(t, all_resolved(t));
        for (std::size_t i = 0; i < ma.values.size(); ++i) CHECK(ma.values[i] == doctest::Approx(mb.values[i]).epsilon(1e-12));
        CHECK(*stability(s, all_heads(2, 2)).mean == doctest::Approx(*stability(t, all_heads(2, 2)).mean));
    }
}

TEST_SUITE("capture") {
    TEST_CASE("real model traces: rows sum to one, query resolves to one token, determinism") {
        ModelConfig c;
        c.variant = Variant::lfa;
        c.n_layers = 2;
        c.n_heads = 2;
        c.d_model = 16;
        c.vocab_size = 256;
        c.max_seq_len = 128;
        const auto model = Model::initialize(c, 1);
        const auto tok = Tokenizer::byte_level();
        const auto ds = diagnostic_set();
        const auto a = capture(model, tok, ds);
        const auto b = capture(model, tok, ds);
        CHECK(a.traces.size() == 13);
        CHECK(a.resolved.size() == 29);
        CHECK(a.filtered.empty());
        for (std::size_t i = 0; i < a.traces.size(); ++i) {
            CHECK(a.traces[i].attention == b.traces[i].attention);
            const auto& t = a.traces[i];
            for (int l = 0; l < 2; ++l) {
                for (int h = 0; h < 2; ++h) {
                    for (std::size_t q = 0; q < t.n_tokens; ++q) {
                        double sum = 0.0;
                        for (const double v : t.row(l, h, q)) {
                            CHECK(v >= 0.0);
                            CHECK(v <= 1.0);
                            sum += v;
                        }
                        CHECK(std::abs(sum - 1.0) < 1e-6);
                    }
                }
            }
        }
        const auto& first = a.resolved.front();
        CHECK(first.query_token == std::string("Tim saw a key and a box. He used it").size() - 1);

        GateAssignment off;
        off.set(0, 0, 0.0);
        CHECK(capture(model, tok, ds, &off).traces[0].attention != a.traces[0].attention);
    }

    TEST_CASE("over-long prompts are a data error and misaligned spans are filtered") {
        ModelConfig c;
        c.n_layers = 1;
        c.n_heads = 1;
        c.d_model = 8;
        c.vocab_size = 256;
        c.max_seq_len = 16;
        const auto model = Model::initialize(c, 1);
        CHECK_THROWS_AS(capture(model, Tokenizer::byte_level(), diagnostic_set()), DataError);


        const auto inst = build_competing_noun_grid(one_template({{"key", "box"}})).instances.front();
        // One piece covering "a key" cuts the target span.
        std::vector<TokenPiece> pieces;
        for (std::size_t i = 0; i < inst.prompt.size(); ++i) {
            if (i == 8) {
                pieces.push_back({300, 8, 13});
                i = 12;
                continue;
            }
            pieces.push_back({static_cast<unsigned char>(inst.prompt[i]), i, i + 1});
        }
        CHECK_THROWS_AS(resolve_instance(inst, pieces), AlignmentError);
    }

    TEST_CASE("trace dump round trip") {
        std::mt19937_64 rng(8);
        const auto ds = build_competing_noun_grid(one_template({{"key", "box"}}));
        const auto s = synthetic_trace_set(ds, 2, 3, rng);
        const auto back = trace_set_from_json(to_json(s));
        CHECK(back.n_layers == 2);
        CHECK(back.n_heads == 3);
        REQUIRE(back.traces.size() == s.traces.size());
        CHECK(back.traces[1].attention == s.traces[1].attention);
        CHECK(back.resolved.size() == s.resolved.size());
        CHECK(back.resolved[1].target == s.resolved[1].target);
        CHECK_THROWS_AS(trace_set_from_json(nlohmann::json{{"format", "other"}}), DataError);
    }
}
