#include "latefuse/cli/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <map>
#include <ostream>
#include <set>

#include "common.hpp"
#include "latefuse/arch/checkpoint.hpp"
#include "latefuse/arch/params.hpp"
#include "latefuse/core/errors.hpp"
#include "latefuse/diag/probe_dataset.hpp"
#include "latefuse/diag/trace.hpp"
#include "latefuse/train/corpus.hpp"
#include "latefuse/train/trainer.hpp"

namespace latefuse {

namespace fs = std::filesystem;
using nlohmann::json;
using cli_detail::Csv;
using cli_detail::json_or_null;
using cli_detail::model_json;
using cli_detail::num;

fs::path data_dir() {
    if (const char* env = std::getenv("LATEFUSE_DATA"); env && *env) return fs::absolute(env);
    return LATEFUSE_DATA_DIR;
}

fs::path output_root() {
    if (const char* env = std::getenv("LATEFUSE_OUT"); env && *env) return env;
    return "runs";
}

fs::path resolve_input(const std::string& path, const fs::path& out_dir) {
    if (path.empty()) throw UsageError("empty input path");
    const fs::path p(path);
    return p.is_absolute() ? p : (out_dir / p).lexically_normal();
}

namespace {

ManifestInput input(const std::string& role, const std::string& path, const fs::path& out) {
    return {role, path, sha256_file(resolve_input(path, out))};
}

struct LoadedModel {
    Model model;
    Tokenizer tokenizer;
};

LoadedModel load_model(const fs::path& path) {
    auto ck = load_checkpoint(path);
    if (!ck.extra.contains("tokenizer")) {
        throw DataError("checkpoint '" + path.string() + "' carries no tokenizer");
    }
    return {std::move(ck.model), Tokenizer::from_json(ck.extra.at("tokenizer"))};
}

std::string labels(std::span<const HeadId> heads, const char* sep = " ") {
    std::string out;
    for (const auto& h : heads) {
        if (!out.empty()) out += sep;
        out += h.label();
    }
    return out;
}

std::vector<int> layers_of(std::span<const HeadId> heads) {
    std::set<int> s;
    for (const auto& h : heads) s.insert(h.layer);
    return {s.begin(), s.end()};
}

std::string layer_labels(std::span<const HeadId> heads) {
    std::string out;
    for (const int l : layers_of(heads)) {
        if (!out.empty()) out += ' ';
        out += "L" + std::to_string(l);
    }
    return out;
}

json head_list(std::span<const HeadId> heads) {
    json a = json::array();
    for (const auto& h : heads) a.push_back(h.label());
    return a;
}

}  // namespace

// train -----------------------------------------------------------------------

TrainSummary cmd_train(const TrainRunConfig& config, const fs::path& out, std::ostream& log) {
    config.validate();
    if (config.corpus.empty()) throw ConfigError("corpus: a corpus path is required");
    const Corpus corpus = load_corpus(resolve_input(config.corpus, out));
    const auto [train_corpus, val_corpus] = split_validation(corpus);

    ArtifactWriter writer(out);
    log << "training " << to_string(config.model.variant) << " " << config.model.n_layers << "L/"
        << config.model.n_heads << "H/" << config.model.d_model << "d for " << config.steps << " steps\n";
    const auto result = train(config, train_corpus, val_corpus, [&](const LossRecord& r) {
        if (!r.val_loss) return;
        log << "  step " << r.step;
        if (r.train_loss) log << "  train " << num(*r.train_loss);
        log << "  val " << num(*r.val_loss) << "\n";
    });

    save_checkpoint(writer.stage(config.checkpoint), result.model, {{"tokenizer", result.tokenizer.to_json()}});
    write_loss_csv(writer.stage("loss.csv"), result.curve);
    writer.write_text("train_config.toml", to_text(config));

    TrainSummary s;
    s.parameters = parameter_count(result.model.config());
    s.initial_val_loss = result.initial_val_loss;
    s.final_val_loss = result.final_val_loss;
    s.steps_run = result.steps_run;
    writer.write_json("train.json",
                      {{"format", "latefuse-train"},
                       {"version", 1},
                       {"model", model_json(result.model.config())},
                       {"tokenizer", std::string(to_string(result.tokenizer.mode()))},
                       {"corpus",
                        {{"documents", corpus.documents.size()},
                         {"bytes", corpus.bytes()},
                         {"train_documents", train_corpus.documents.size()},
                         {"val_documents", val_corpus.documents.size()}}},
                       {"initial_val_loss", s.initial_val_loss},
                       {"final_val_loss", s.final_val_loss},
                       {"reduction", 1.0 - s.final_val_loss / s.initial_val_loss},
                       {"steps_run", s.steps_run},
                       {"stopped_early", result.stopped_early},
                       {"config", to_json(config)}});

    RunManifest m;
    m.command = "train";
    m.config = to_json(config);
    m.seed = config.seed;
    m.inputs.push_back(input("corpus", config.corpus, out));
    writer.commit(std::move(m));
    log << "final val loss " << num(s.final_val_loss) << " (initial " << num(s.initial_val_loss) << ")\n";
    return s;
}

// probe -----------------------------------------------------------------------

json to_json(const ProbeOptions& o) {
    return {{"checkpoint", o.checkpoint}, {"dataset", o.dataset}, {"tau", o.tau}, {"top_heads", o.top_heads}};
}

ProbeOptions probe_options_from_json(const json& j) {
    ProbeOptions o;
    o.checkpoint = j.value("checkpoint", o.checkpoint);
    o.dataset = j.value("dataset", o.dataset);
    o.tau = j.value("tau", o.tau);
    o.top_heads = j.value("top_heads", o.top_heads);
    return o;
}

namespace {

struct HeadRow {
    HeadId head;
    double mean_attn = 0.0;
    double top1 = 0.0;
};

std::vector<HeadRow> head_rows(const TraceSet& set, std::span<const std::size_t> which) {
    const auto mean = mean_attention_table(set, which);
    const auto top1 = top1_table(set, which);
    std::vector<HeadRow> rows;
    for (const auto& h : all_heads(set.n_layers, set.n_heads)) rows.push_back({h, mean.at(h.layer, h.head), top1.at(h.layer, h.head)});
    return rows;
}

json head_rows_json(const std::vector<HeadRow>& rows, int n_heads) {
    json a = json::array();
    for (const auto& r : rows) {
        a.push_back({{"head", r.head.label()},
                     {"layer", r.head.layer},
                     {"index", r.head.layer * n_heads + r.head.head},
                     {"mean_attn", r.mean_attn},
                     {"top1", r.top1}});
    }
    return a;
}

void require_resolved(const TraceSet& set) {
    if (!set.resolved.empty()) return;
    std::string msg = "no instance survived span alignment";
    for (const auto& f : set.filtered) msg += "\n  " + f.instance_id + ": " + f.message;
    throw DataError(msg);
}

void log_filtered(const TraceSet& set, std::ostream& log) {
    for (const auto& f : set.filtered) log << "filtered " << f.instance_id << ": " << f.message << "\n";
}

}  // namespace

void cmd_probe(const ProbeOptions& o, const fs::path& out, std::ostream& log) {
    if (o.checkpoint.empty()) throw UsageError("probe needs --checkpoint");
    if (o.dataset.empty()) throw UsageError("probe needs --dataset");
    if (o.top_heads < 1) throw UsageError("--top-heads must be >= 1");
    const auto loaded = load_model(resolve_input(o.checkpoint, out));
    const auto dataset = read_dataset(resolve_input(o.dataset, out));
    const TraceSet set = capture(loaded.model, loaded.tokenizer, dataset);
    log_filtered(set, log);
    require_resolved(set);

    ArtifactWriter writer(out);
    write_trace_dump(writer.stage("trace.json"), set);

    const int H = set.n_heads;
    std::vector<std::size_t> every(set.resolved.size());
    for (std::size_t i = 0; i < every.size(); ++i) every[i] = i;
    const auto rows = head_rows(set, every);
    Csv heads{"head", "layer", "index", "mean_attn", "top1"};
    for (const auto& r : rows) {
        heads.row({r.head.label(), std::to_string(r.head.layer), std::to_string(r.head.layer * H + r.head.head),
                   num(r.mean_attn), num(r.top1)});
    }
    writer.write_text("heads.csv", heads.str());

    Csv by_phen{"phenomenon", "n", "head", "layer", "index", "mean_attn", "top1"};
    json phen_json = json::array();
    for (const auto p : {Phenomenon::competing_nouns, Phenomenon::gender, Phenomenon::plurality}) {
        std::vector<std::size_t> which;
        for (std::size_t i = 0; i < set.resolved.size(); ++i) {
            if (set.dataset.instances[set.resolved[i].instance].phenomenon == p) which.push_back(i);
        }
        if (which.empty()) continue;
        const auto prow = head_rows(set, which);
        for (const auto& r : prow) {
            by_phen.row({std::string(to_string(p)), std::to_string(which.size()), r.head.label(),
                         std::to_string(r.head.layer), std::to_string(r.head.layer * H + r.head.head),
                         num(r.mean_attn), num(r.top1)});
        }
        phen_json.push_back({{"phenomenon", to_string(p)}, {"n", which.size()}, {"heads", head_rows_json(prow, H)}});
    }
    writer.write_text("heads_by_phenomenon.csv", by_phen.str());

    const auto heads_all = all_heads(set.n_layers, set.n_heads);
    const auto stab = stability(set, heads_all, o.tau);
    Csv stab_csv{"pair_id", "eligible", "stable", "ratio"};
    json stab_pairs = json::array();
    for (const auto& p : stab.pairs) {
        stab_csv.row({p.pair_id, std::to_string(p.eligible), std::to_string(p.stable), num(p.ratio)});
        stab_pairs.push_back(
            {{"pair_id", p.pair_id}, {"eligible", p.eligible}, {"stable", p.stable}, {"ratio", json_or_null(p.ratio)}});
    }
    writer.write_text("stability.csv", stab_csv.str());

    Csv filtered{"instance_id", "message"};
    json filtered_json = json::array();
    for (const auto& f : set.filtered) {
        filtered.row({f.instance_id, f.message});
        filtered_json.push_back({{"instance_id", f.instance_id}, {"message", f.message}});
    }
    writer.write_text("filtered.csv", filtered.str());

    HeadTable mean_table{set.n_layers, set.n_heads, {}};
    for (const auto& r : rows) mean_table.values.push_back(r.mean_attn);
    const auto top = rank_heads(mean_table, Selection::top_k, std::min(o.top_heads, set.n_layers * set.n_heads));

    writer.write_json("probe.json", {{"format", "latefuse-probe"},
                                     {"version", 1},
                                     {"model", model_json(loaded.model.config())},
                                     {"dataset",
                                      {{"instances", set.dataset.instances.size()},
                                       {"prompts", set.dataset.prompt_count()},
                                       {"resolved", set.resolved.size()},
                                       {"filtered", filtered_json}}},
                                     {"heads", head_rows_json(rows, H)},
                                     {"top_heads", head_list(top)},
                                     {"by_phenomenon", phen_json},
                                     {"stability",
                                      {{"tau", o.tau},
                                       {"mean", json_or_null(stab.mean)},
                                       {"min", json_or_null(stab.min)},
                                       {"max", json_or_null(stab.max)},
                                       {"pairs", stab_pairs}}}});

    RunManifest m;
    m.command = "probe";
    m.config = to_json(o);
    m.inputs = {input("checkpoint", o.checkpoint, out), input("dataset", o.dataset, out)};
    writer.commit(std::move(m));

    log << "probed " << set.resolved.size() << " of " << set.dataset.instances.size() << " instances; top heads "
        << labels(top) << "\n";
}

// pds -------------------------------------------------------------------------

json to_json(const PdsOptions& o) {
    return {{"trace", o.trace},         {"checkpoint", o.checkpoint}, {"dataset", o.dataset},
            {"threshold", o.threshold}, {"late_layers", o.late_layers}, {"bin_width", o.bin_width}};
}

PdsOptions pds_options_from_json(const json& j) {
    PdsOptions o;
    o.trace = j.value("trace", o.trace);
    o.checkpoint = j.value("checkpoint", o.checkpoint);
    o.dataset = j.value("dataset", o.dataset);
    o.threshold = j.value("threshold", o.threshold);
    o.late_layers = j.value("late_layers", o.late_layers);
    o.bin_width = j.value("bin_width", o.bin_width);
    return o;
}

void cmd_pds(const PdsOptions& o, const fs::path& out, std::ostream& log) {
    const bool from_trace = !o.trace.empty();
    if (from_trace == !o.checkpoint.empty()) throw UsageError("pds needs exactly one of --trace or --checkpoint");
    if (!from_trace && o.dataset.empty()) throw UsageError("pds from a checkpoint needs --dataset");
    if (o.late_layers < 1) throw UsageError("--late-layers must be >= 1");
    if (!(o.bin_width > 0.0)) throw UsageError("--bin-width must be positive");

    TraceSet set;
    json model = nullptr;
    if (from_trace) {
        set = read_trace_dump(resolve_input(o.trace, out));
    } else {
        const auto loaded = load_model(resolve_input(o.checkpoint, out));
        set = capture(loaded.model, loaded.tokenizer, read_dataset(resolve_input(o.dataset, out)));
        model = model_json(loaded.model.config());
    }
    log_filtered(set, log);

    const auto pairs = set.resolved_pairs();
    const auto ids = set.resolved_pair_ids();
    std::vector<std::string> incomplete;
    for (const auto& p : set.dataset.pairs()) {
        if (std::find(ids.begin(), ids.end(), p.pair_id) == ids.end()) incomplete.push_back(p.pair_id);
    }
    if (pairs.empty()) {
        std::string msg = "no complete minimal pair to compute PDS from";
        for (const auto& id : incomplete) msg += "\n  incomplete pair: " + id;
        throw DataError(msg);
    }
    for (const auto& id : incomplete) log << "incomplete pair " << id << " skipped\n";

    const auto table = pds_table(set, pairs);
    const auto summary = summarize_pds(table, o.threshold, o.late_layers);
    const auto hist = histogram(table.values, o.bin_width, 1.0);
    const int L = set.n_layers, H = set.n_heads;

    ArtifactWriter writer(out);
    Csv per_head{"head", "layer", "index", "pds"};
    json heads_json = json::array();
    for (const auto& h : all_heads(L, H)) {
        const double v = table.at(h.layer, h.head);
        per_head.row({h.label(), std::to_string(h.layer), std::to_string(h.layer * H + h.head), num(v)});
        heads_json.push_back({{"head", h.label()}, {"layer", h.layer}, {"index", h.layer * H + h.head}, {"pds", v}});
    }
    writer.write_text("pds.csv", per_head.str());

    std::string heat = "layer";
    for (int h = 0; h < H; ++h) heat += ",H" + std::to_string(h);
    heat += "\n";
    json heat_json = json::array();
    for (int l = 0; l < L; ++l) {
        heat += "L" + std::to_string(l);
        json row = json::array();
        for (int h = 0; h < H; ++h) {
            heat += "," + num(table.at(l, h));
            row.push_back(table.at(l, h));
        }
        heat += "\n";
        heat_json.push_back(row);
    }
    writer.write_text("pds_heatmap.csv", heat);

    Csv by_layer{"layer", "max_pds", "mean_pds", "above_threshold"};
    json layer_json = json::array();
    for (int l = 0; l < L; ++l) {
        double sum = 0.0;
        int above = 0;
        for (int h = 0; h < H; ++h) {
            sum += table.at(l, h);
            above += table.at(l, h) > o.threshold ? 1 : 0;
        }
        const double mean = sum / H;
        by_layer.row({std::to_string(l), num(summary.max_per_layer[l]), num(mean), std::to_string(above)});
        layer_json.push_back({{"layer", l}, {"max_pds", summary.max_per_layer[l]}, {"mean_pds", mean}, {"above_threshold", above}});
    }
    writer.write_text("pds_by_layer.csv", by_layer.str());

    Csv hist_csv{"bin", "lower", "upper", "count"};
    for (std::size_t b = 0; b < hist.counts.size(); ++b) {
        hist_csv.row({std::to_string(b), num(static_cast<double>(b) * hist.bin_width),
                      num(static_cast<double>(b + 1) * hist.bin_width), std::to_string(hist.counts[b])});
    }
    writer.write_text("pds_histogram.csv", hist_csv.str());

    json filtered = json::array();
    for (const auto& f : set.filtered) filtered.push_back(f.instance_id);
    writer.write_json("pds.json",
                      {{"format", "latefuse-pds"},
                       {"version", 1},
                       {"model", model},
                       {"n_layers", L},
                       {"n_heads", H},
                       {"pairs", pairs.size()},
                       {"pair_ids", ids},
                       {"incomplete_pairs", incomplete},
                       {"filtered", filtered},
                       {"threshold", o.threshold},
                       {"summary",
                        {{"total_above", summary.total_above},
                         {"late_layers", summary.late_layers},
                         {"late_above", summary.late_above},
                         {"max_last_layer", summary.max_last_layer},
                         {"argmax_last_layer", summary.argmax_last_layer.label()},
                         {"average", summary.average},
                         {"max_per_layer", summary.max_per_layer}}},
                       {"by_layer", layer_json},
                       {"histogram", {{"bin_width", hist.bin_width}, {"upper", 1.0}, {"counts", hist.counts}}},
                       {"heads", heads_json},
                       {"heatmap", heat_json}});

    RunManifest m;
    m.command = "pds";
    m.config = to_json(o);
    if (from_trace) {
        m.inputs.push_back(input("trace", o.trace, out));
    } else {
        m.inputs = {input("checkpoint", o.checkpoint, out), input("dataset", o.dataset, out)};
    }
    writer.commit(std::move(m));

    log << "PDS over " << pairs.size() << " pairs: " << summary.total_above << " heads above " << num(o.threshold)
        << ", " << summary.late_above << " in the last " << summary.late_layers << " layers, max last layer "
        << num(summary.max_last_layer) << " at " << summary.argmax_last_layer.label() << ", average "
        << num(summary.average) << "\n";
}

// intervene -------------------------------------------------------------------

json to_json(const InterveneOptions& o) {
    return {{"checkpoint", o.checkpoint},
            {"dataset", o.dataset},
            {"ks", o.ks},
            {"gates", o.gates},
            {"selection", to_string(o.selection)},
            {"control_k", o.control_k},
            {"control_gate", o.control_gate},
            {"seeds", o.seeds},
            {"seed", o.seed},
            {"measure_heads", o.measure_heads},
            {"threshold", o.threshold}};
}

InterveneOptions intervene_options_from_json(const json& j) {
    InterveneOptions o;
    o.checkpoint = j.value("checkpoint", o.checkpoint);
    o.dataset = j.value("dataset", o.dataset);
    o.ks = j.value("ks", o.ks);
    o.gates = j.value("gates", o.gates);
    if (j.contains("selection")) o.selection = parse_selection(j.at("selection").get<std::string>());
    o.control_k = j.value("control_k", o.control_k);
    o.control_gate = j.value("control_gate", o.control_gate);
    o.seeds = j.value("seeds", o.seeds);
    o.seed = j.value("seed", o.seed);
    o.measure_heads = j.value("measure_heads", o.measure_heads);
    o.threshold = j.value("threshold", o.threshold);
    return o;
}

namespace {

std::string effect_d(const std::optional<EffectSize>& e) { return e ? num(e->d) : std::string(); }
std::string effect_p(const std::optional<EffectSize>& e) { return e ? num(e->p_value) : std::string(); }
json effect_json(const std::optional<EffectSize>& e) {
    if (!e) return nullptr;
    return {{"d", e->d},       {"p", e->p_value}, {"t", e->t},
            {"df", e->df},     {"pooled_sd", e->pooled_sd}};
}

}  // namespace

void cmd_intervene(const InterveneOptions& o, const fs::path& out, std::ostream& log) {
    if (o.checkpoint.empty()) throw UsageError("intervene needs --checkpoint");
    if (o.dataset.empty()) throw UsageError("intervene needs --dataset");
    if (o.seeds < 1) throw UsageError("--seeds must be >= 1");
    if (o.measure_heads < 1) throw UsageError("--measure-heads must be >= 1");
    if (o.control_k < 1) throw UsageError("--control-k must be >= 1");
    if (!(o.control_gate >= 0.0 && o.control_gate <= 1.0)) throw UsageError("--control-gate must lie in [0, 1]");
    for (const double g : o.gates) {
        if (!(g >= 0.0 && g <= 1.0)) throw UsageError("gate " + num(g) + " outside [0, 1]");
    }

    const auto loaded = load_model(resolve_input(o.checkpoint, out));
    const auto dataset = read_dataset(resolve_input(o.dataset, out));
    const int total = loaded.model.config().head_count();
    std::vector<int> ks = o.ks;
    if (ks.empty()) {
        for (const int k : kDefaultKs) {
            if (k <= total) ks.push_back(k);
        }
    }
    for (const int k : ks) {
        if (k < 1 || k > total) throw UsageError("k = " + std::to_string(k) + " outside 1.." + std::to_string(total));
    }
    std::vector<double> gates = o.gates;
    if (gates.empty()) gates.assign(std::begin(kDefaultGates), std::end(kDefaultGates));
    const int control_k = std::min(o.control_k, total);

    const ModelTraceSource source(loaded.model, loaded.tokenizer, dataset);
    const InterventionHarness harness(source, {o.measure_heads});
    log_filtered(harness.baseline_traces(), log);
    log << "baseline SPS " << num(harness.baseline().mean) << " over " << harness.baseline().samples.size()
        << " prompts; measurement heads " << labels(harness.measurement()) << "\n";

    const auto grid = suppression_grid(harness, ks, gates, o.selection, o.seed);
    const auto controls = control_suite(harness, control_k, o.control_gate, o.seeds, o.seed, o.threshold);
    const std::string variant(to_string(loaded.model.config().variant));

    ArtifactWriter writer(out);
    Csv grid_csv{"k", "gate", "condition", "heads", "n", "sps", "delta_sps", "sem", "d", "p"};
    json grid_json = json::array();
    for (const auto& c : grid) {
        grid_csv.row({std::to_string(c.k), num(c.gate), c.condition, labels(c.heads), std::to_string(c.n), num(c.sps),
                      num(c.delta_sps), num(c.sem), effect_d(c.effect), effect_p(c.effect)});
        grid_json.push_back({{"k", c.k},
                             {"gate", c.gate},
                             {"condition", c.condition},
                             {"heads", head_list(c.heads)},
                             {"n", c.n},
                             {"sps", c.sps},
                             {"delta_sps", c.delta_sps},
                             {"sem", c.sem},
                             {"effect", effect_json(c.effect)}});
    }
    writer.write_text("grid.csv", grid_csv.str());

    json curves = json::array();
    for (const int k : ks) {
        Csv curve{"gate", "sps", "delta_sps", "sem", "d", "p"};
        json points = json::array();
        for (const auto& c : grid) {
            if (c.k != k) continue;
            curve.row({num(c.gate), num(c.sps), num(c.delta_sps), num(c.sem), effect_d(c.effect), effect_p(c.effect)});
            points.push_back({{"gate", c.gate},
                              {"sps", c.sps},
                              {"delta_sps", c.delta_sps},
                              {"sem", c.sem},
                              {"d", c.effect ? json(c.effect->d) : json(nullptr)}});
        }
        writer.write_text("gate_curve_k" + std::to_string(k) + ".csv", curve.str());
        curves.push_back({{"k", k}, {"points", points}});
    }

    Csv controls_csv{"condition", "k", "gate", "heads", "n", "sps", "delta_sps", "sem", "d", "p", "seeds", "sps_sd",
                     "d_mean", "d_sd"};
    json controls_json = json::array();
    for (const auto& r : controls) {
        const bool random = r.condition == "matched-random";
        controls_csv.row({r.condition, std::to_string(r.k), num(r.gate), labels(r.heads), std::to_string(r.n), num(r.sps),
                          num(r.delta_sps), num(r.sem), effect_d(r.effect), effect_p(r.effect),
                          random ? std::to_string(r.seeds) : "", random ? num(r.sps_sd) : "",
                          random ? num(r.d_mean) : "", random ? num(r.d_sd) : ""});
        json row = {{"condition", r.condition}, {"k", r.k},         {"gate", r.gate},
                    {"heads", head_list(r.heads)}, {"n", r.n},     {"sps", r.sps},
                    {"delta_sps", r.delta_sps},   {"sem", r.sem},  {"effect", effect_json(r.effect)}};
        if (random) {
            row["seeds"] = r.seeds;
            row["sps_sd"] = r.sps_sd;
            row["d_mean"] = r.d_mean;
            row["d_sd"] = r.d_sd;
        }
        controls_json.push_back(row);
    }
    writer.write_text("controls.csv", controls_csv.str());

    // Effect table: every suppression condition, largest |d| first; undefined
    // effects last, then by condition name.
    std::vector<const ControlRow*> effects;
    for (const auto& r : controls) {
        if (r.condition != "baseline") effects.push_back(&r);
    }
    std::stable_sort(effects.begin(), effects.end(), [](const ControlRow* a, const ControlRow* b) {
        if (a->effect.has_value() != b->effect.has_value()) return a->effect.has_value();
        if (a->effect && std::abs(a->effect->d) != std::abs(b->effect->d)) {
            return std::abs(a->effect->d) > std::abs(b->effect->d);
        }
        return a->condition < b->condition;
    });
    Csv effects_csv{"model", "condition", "layers", "n_heads", "heads", "gate", "n", "sps", "delta_sps", "d", "p"};
    json effects_json = json::array();
    for (const auto* r : effects) {
        effects_csv.row({variant, r->condition, layer_labels(r->heads), std::to_string(r->k), labels(r->heads),
                         num(r->gate), std::to_string(r->n), num(r->sps), num(r->delta_sps), effect_d(r->effect),
                         effect_p(r->effect)});
        json layers = json::array();
        for (const int l : layers_of(r->heads)) layers.push_back(l);
        effects_json.push_back({{"model", variant},
                                {"condition", r->condition},
                                {"layers", layers},
                                {"n_heads", r->k},
                                {"heads", head_list(r->heads)},
                                {"gate", r->gate},
                                {"n", r->n},
                                {"sps", r->sps},
                                {"delta_sps", r->delta_sps},
                                {"d", r->effect ? json(r->effect->d) : json(nullptr)},
                                {"p", r->effect ? json(r->effect->p_value) : json(nullptr)}});
    }
    writer.write_text("effects.csv", effects_csv.str());

    const auto& per_head = harness.baseline().per_head;
    Csv per_head_csv{"head", "layer", "index", "sps", "pds"};
    json per_head_json = json::array();
    for (const auto& h : all_heads(per_head.n_layers, per_head.n_heads)) {
        const double s = per_head.at(h.layer, h.head), p = harness.pds().at(h.layer, h.head);
        per_head_csv.row({h.label(), std::to_string(h.layer), std::to_string(h.layer * per_head.n_heads + h.head), num(s),
                          num(p)});
        per_head_json.push_back({{"head", h.label()}, {"sps", s}, {"pds", p}});
    }
    writer.write_text("per_head_sps.csv", per_head_csv.str());

    json samples = json::array();
    for (const auto& s : harness.baseline().samples) {
        samples.push_back({{"prompt_id", s.prompt_id}, {"semantic", s.semantic}, {"distractor", s.distractor}, {"diff", s.diff}});
    }
    const auto& base_row = controls.front();
    writer.write_json("intervene.json", {{"format", "latefuse-intervene"},
                                         {"version", 1},
                                         {"model", model_json(loaded.model.config())},
                                         {"ks", ks},
                                         {"gates", gates},
                                         {"selection", to_string(o.selection)},
                                         {"control_k", control_k},
                                         {"control_gate", o.control_gate},
                                         {"threshold", o.threshold},
                                         {"measurement_heads", head_list(harness.measurement())},
                                         {"baseline",
                                          {{"sps", harness.baseline().mean},
                                           {"sem", base_row.sem},
                                           {"n", harness.baseline().samples.size()},
                                           {"filtered", harness.baseline().filtered},
                                           {"samples", samples}}},
                                         {"per_head", per_head_json},
                                         {"grid", grid_json},
                                         {"gate_curves", curves},
                                         {"controls", controls_json},
                                         {"effects", effects_json}});

    RunManifest m;
    m.command = "intervene";
    m.config = to_json(o);
    m.seed = o.seed;
    m.inputs = {input("checkpoint", o.checkpoint, out), input("dataset", o.dataset, out)};
    writer.commit(std::move(m));

    for (const auto& r : controls) {
        log << "  " << r.condition << " k=" << r.k << " g=" << num(r.gate) << " SPS " << num(r.sps) << " d "
            << (r.effect ? num(r.effect->d) : std::string("undefined")) << "\n";
    }
}

// gen-data --------------------------------------------------------------------

void cmd_gen_data(const GenDataOptions& o, const fs::path& out, std::ostream& log) {
    if (o.bytes < 1024) throw UsageError("--bytes must be at least 1024");
    if (!(o.coref_share >= 0.0 && o.coref_share <= 1.0)) throw UsageError("--coref-share must lie in [0, 1]");
    ArtifactWriter writer(out);
    const Corpus corpus = generate_story_corpus({o.seed, o.bytes, o.coref_share});
    write_corpus(writer.stage("desk_corpus.txt"), corpus);
    write_dataset(writer.stage("diagnostic.jsonl"), diagnostic_set());
    write_dataset(writer.stage("competing_nouns.jsonl"), build_competing_noun_grid(default_grid()));
    RunManifest m;
    m.command = "gen-data";
    m.config = {{"seed", o.seed}, {"bytes", o.bytes}, {"coref_share", o.coref_share}};
    m.seed = o.seed;
    writer.commit(std::move(m));
    log << "wrote " << corpus.documents.size() << " documents (" << corpus.bytes() << " bytes) and probe sets to "
        << out.string() << "\n";
}

// reproduce-all ---------------------------------------------------------------

ReproduceOptions ReproduceOptions::desk() {
    ReproduceOptions o;
    auto& t = o.train;
    t.model.n_layers = 2;
    t.model.n_heads = 2;
    t.model.d_model = 64;
    t.model.max_seq_len = 128;
    t.batch_size = 16;
    t.seq_len = 64;
    t.steps = 400;
    t.lr = 1e-3;
    t.warmup_steps = 20;
    t.eval_interval = 50;
    t.eval_windows = 32;
    t.corpus = (data_dir() / "desk_corpus.txt").string();
    o.diagnostic = (data_dir() / "diagnostic.jsonl").string();
    o.competing = (data_dir() / "competing_nouns.jsonl").string();
    return o;
}

json to_json(const ReproduceOptions& o) {
    json variants = json::array();
    for (const auto v : o.variants) variants.push_back(to_string(v));
    json probe = to_json(o.probe), pds = to_json(o.pds), intervene = to_json(o.intervene);
    for (auto* j : {&probe, &pds, &intervene}) {
        for (const char* k : {"checkpoint", "dataset", "trace"}) j->erase(k);
    }
    json train = to_json(o.train);
    train.erase("variant");
    return {{"train", train},         {"variants", variants}, {"diagnostic", o.diagnostic}, {"competing", o.competing},
            {"probe", probe},         {"pds", pds},           {"intervene", intervene}};
}

ReproduceOptions reproduce_options_from_json(const json& j) {
    try {
        ReproduceOptions o;
        o.train = run_config_from_json(j.at("train"));
        o.variants.clear();
        for (const auto& v : j.at("variants")) o.variants.push_back(parse_variant(v.get<std::string>()));
        o.diagnostic = j.at("diagnostic").get<std::string>();
        o.competing = j.at("competing").get<std::string>();
        o.probe = probe_options_from_json(j.at("probe"));
        o.pds = pds_options_from_json(j.at("pds"));
        o.intervene = intervene_options_from_json(j.at("intervene"));
        return o;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed reproduce-all config: ") + e.what());
    }
}

void cmd_reproduce_all(const ReproduceOptions& o, const fs::path& out, std::ostream& log) {
    if (o.variants.empty()) throw UsageError("reproduce-all needs at least one variant");
    std::set<Variant> seen(o.variants.begin(), o.variants.end());
    if (seen.size() != o.variants.size()) throw UsageError("reproduce-all: duplicate variant");
    for (const auto* p : {&o.train.corpus, &o.diagnostic, &o.competing}) {
        if (p->empty()) throw UsageError("reproduce-all needs a corpus, a diagnostic set and a competing-nouns set");
    }

    RunManifest root;
    root.command = "reproduce-all";
    root.config = to_json(o);
    root.seed = o.train.seed;
    root.inputs = {input("corpus", o.train.corpus, out), input("diagnostic", o.diagnostic, out),
                   input("competing", o.competing, out)};
    // Stages read inputs relative to their own directory, one level down.
    auto lifted = [](const std::string& p) { return fs::path(p).is_absolute() ? p : "../../" + p; };

    std::vector<std::string> stages;
    for (const auto v : o.variants) {
        const std::string name(to_string(v));
        const fs::path vdir = out / name;
        log << "== " << name << "\n";

        TrainRunConfig tc = o.train;
        tc.model.variant = v;
        tc.corpus = lifted(o.train.corpus);
        cmd_train(tc, vdir / "train", log);
        const std::string ckpt = "../train/" + tc.checkpoint;

        ProbeOptions po = o.probe;
        po.checkpoint = ckpt;
        po.dataset = lifted(o.diagnostic);
        cmd_probe(po, vdir / "probe", log);

        PdsOptions pd = o.pds;
        pd.trace.clear();
        pd.checkpoint = ckpt;
        pd.dataset = lifted(o.competing);
        cmd_pds(pd, vdir / "pds", log);

        InterveneOptions io = o.intervene;
        io.checkpoint = ckpt;
        io.dataset = lifted(o.competing);
        cmd_intervene(io, vdir / "intervene", log);

        for (const char* s : {"train", "probe", "pds", "intervene"}) stages.push_back(name + "/" + s);
    }
    cmd_report("..", out / "report", log);
    stages.push_back("report");

    for (const auto& stage : stages) {
        const auto m = read_manifest(out / stage / kManifestName);
        for (const auto& f : m.outputs) root.outputs.push_back({stage + "/" + f.path, f.sha256});
        root.outputs.push_back({stage + "/" + kManifestName, sha256_file(out / stage / kManifestName)});
    }
    std::sort(root.outputs.begin(), root.outputs.end(),
              [](const ManifestOutput& a, const ManifestOutput& b) { return a.path < b.path; });
    write_manifest(out, std::move(root));
    log << "reproduce-all finished: " << (out / "report" / "summary.txt").string() << "\n";
}

// replay ----------------------------------------------------------------------

void cmd_replay(const fs::path& manifest_path, const std::optional<fs::path>& out_opt, std::ostream& log) {
    const RunManifest m = read_manifest(manifest_path);
    const fs::path origin = manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
    const fs::path out = out_opt ? *out_opt : origin;
    if (m.tool_version != tool_version()) {
        log << "note: manifest written by version " << m.tool_version << ", running " << tool_version() << "\n";
    }
    if (sha256_hex(m.config.dump()) != m.config_sha256) throw DataError("manifest config hash does not match its config");

    // Relative inputs were recorded against the original directory; anchor
    // them there when writing somewhere else.
    json config = m.config;
    std::vector<ManifestInput> inputs = m.inputs;
    if (fs::weakly_canonical(out) != fs::weakly_canonical(origin)) {
        std::map<std::string, std::string> moved;
        for (auto& in : inputs) {
            if (fs::path(in.path).is_absolute()) continue;
            const std::string anchored = fs::absolute(resolve_input(in.path, origin)).lexically_normal().string();
            moved[in.path] = anchored;
            in.path = anchored;
        }
        std::function<void(json&)> rewrite = [&](json& j) {
            if (j.is_string()) {
                const auto it = moved.find(j.get<std::string>());
                if (it != moved.end()) j = it->second;
            } else if (j.is_structured()) {
                for (auto& child : j) rewrite(child);
            }
        };
        rewrite(config);
        if (!moved.empty()) log << "relative inputs anchored at " << origin.string() << "\n";
    }
    for (const auto& in : inputs) {
        const fs::path p = resolve_input(in.path, out);
        const std::string h = sha256_file(p);
        if (h != in.sha256) {
            throw DataError("input '" + in.role + "' (" + p.string() + ") has sha256 " + h + ", manifest expects " +
                            in.sha256);
        }
    }
    log << "inputs match; config sha256 " << m.config_sha256 << "\n";

    if (m.command == "train") {
        cmd_train(run_config_from_json(config), out, log);
    } else if (m.command == "probe") {
        cmd_probe(probe_options_from_json(config), out, log);
    } else if (m.command == "pds") {
        cmd_pds(pds_options_from_json(config), out, log);
    } else if (m.command == "intervene") {
        cmd_intervene(intervene_options_from_json(config), out, log);
    } else if (m.command == "report") {
        cmd_report(config.at("dir").get<std::string>(), out, log);
    } else if (m.command == "reproduce-all") {
        cmd_reproduce_all(reproduce_options_from_json(config), out, log);
    } else if (m.command == "gen-data") {
        GenDataOptions g;
        g.seed = m.config.at("seed").get<std::uint64_t>();
        g.bytes = m.config.at("bytes").get<std::size_t>();
        g.coref_share = m.config.at("coref_share").get<double>();
        cmd_gen_data(g, out, log);
    } else {
        throw DataError("manifest names unknown command '" + m.command + "'");
    }

    const RunManifest now = read_manifest(out / kManifestName);
    std::map<std::string, std::string> before;
    for (const auto& f : m.outputs) before[f.path] = f.sha256;
    int same = 0, changed = 0;
    for (const auto& f : now.outputs) {
        const auto it = before.find(f.path);
        if (it != before.end() && it->second == f.sha256) {
            ++same;
        } else {
            ++changed;
            log << "  differs: " << f.path << "\n";
        }
    }
    log << same << " outputs identical, " << changed << " differ\n";
}

}  // namespace latefuse
