// latefuse command-line front end.
//
// Exit codes: 0 success, 1 internal error, 2 usage/config error, 3 data or
// I/O error, 4 numerical error (divergence).

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "latefuse/cli/commands.hpp"
#include "latefuse/core/errors.hpp"

namespace fs = std::filesystem;
using namespace latefuse;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

std::string absolute(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

// Flags that map one-to-one onto run config keys.
struct ModelFlags {
    std::map<std::string, std::string> values;  // config key -> text

    void add(CLI::App* app, bool with_variant = true) {
        static const std::pair<const char*, const char*> flags[] = {
            {"--variant", "variant"}, {"--layers", "layers"},   {"--heads", "heads"},
            {"--d-model", "d_model"}, {"--seed", "seed"},       {"--steps", "steps"},
            {"--batch-size", "batch_size"}, {"--seq-len", "seq_len"}, {"--lr", "lr"},
            {"--tokenizer", "tokenizer"},   {"--corpus", "corpus"}};
        for (const auto& [flag, key] : flags) {
            if (!with_variant && std::string(key) == "variant") continue;
            app->add_option_function<std::string>(
                flag, [this, key = std::string(key)](const std::string& v) { values[key] = v; },
                std::string("run config key '") + key + "'");
        }
        app->add_option_function<std::vector<std::string>>(
               "--set",
               [this](const std::vector<std::string>& kvs) {
                   for (const auto& kv : kvs) {
                       const auto eq = kv.find('=');
                       if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected KEY=VALUE, got " + kv);
                       values[kv.substr(0, eq)] = kv.substr(eq + 1);
                   }
               },
               "Override any run config key (KEY=VALUE, repeatable)")
            ->take_all();
    }

    void apply(TrainRunConfig& c) const {
        for (const auto& [k, v] : values) set_run_config_value(c, k, v);
        if (c.corpus.empty()) c.corpus = (data_dir() / "desk_corpus.txt").string();
        c.corpus = absolute(c.corpus);
        c.validate();
    }
};

TrainRunConfig base_config(const std::string& config_path) {
    if (config_path.empty()) return {};
    if (!fs::is_regular_file(config_path)) throw ConfigError("config file '" + config_path + "' does not exist");
    return load_run_config(config_path);
}

int run(int argc, char** argv) {
    CLI::App app{"latefuse: late-fusion transformer training, attention diagnostics and head interventions"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tool_version());

    // train
    auto* train = app.add_subcommand("train", "Train one model variant");
    std::string train_config, train_out;
    ModelFlags train_flags;
    train->add_option("--config", train_config, "Run config file (key = value)");
    train_flags.add(train);
    train->add_option("--out", train_out, "Artifact directory (default $LATEFUSE_OUT/<variant>/train)");

    // probe
    auto* probe = app.add_subcommand("probe", "Capture attention on a probe set and tabulate coreference metrics");
    ProbeOptions probe_opts;
    std::string probe_out;
    probe->add_option("--checkpoint", probe_opts.checkpoint, "Model checkpoint")->required();
    probe->add_option("--dataset", probe_opts.dataset, "Probe set (JSON lines; default bundled diagnostic set)");
    probe->add_option("--tau", probe_opts.tau, "Stability eligibility threshold")->capture_default_str();
    probe->add_option("--top-heads", probe_opts.top_heads, "Heads listed as top coreference heads")->capture_default_str();
    probe->add_option("--out", probe_out, "Artifact directory (default $LATEFUSE_OUT/probe)");

    // pds
    auto* pds = app.add_subcommand("pds", "Token-position dependence per head");
    PdsOptions pds_opts;
    std::string pds_out;
    pds->add_option("--trace", pds_opts.trace, "Trace dump written by probe");
    pds->add_option("--checkpoint", pds_opts.checkpoint, "Model checkpoint (instead of --trace)");
    pds->add_option("--dataset", pds_opts.dataset, "Probe set with minimal pairs (default bundled competing-nouns set)");
    pds->add_option("--threshold", pds_opts.threshold, "Recency-head threshold")->capture_default_str();
    pds->add_option("--late-layers", pds_opts.late_layers, "Trailing layers counted as late")->capture_default_str();
    pds->add_option("--bin-width", pds_opts.bin_width, "Histogram bin width")->capture_default_str();
    pds->add_option("--out", pds_out, "Artifact directory (default $LATEFUSE_OUT/pds)");

    // intervene
    auto* intervene = app.add_subcommand("intervene", "Gate ranked heads and measure semantic preference");
    InterveneOptions iv;
    std::string iv_out, iv_selection = "top-k";
    intervene->add_option("--checkpoint", iv.checkpoint, "Model checkpoint")->required();
    intervene->add_option("--dataset", iv.dataset, "Competing-nouns probe set (default bundled)");
    intervene->add_option("--k", iv.ks, "Head counts for the grid (default 1,2,3,5 up to the head count)")
        ->delimiter(',');
    intervene->add_option("--gate", iv.gates, "Gate values for the grid (default 1,0.75,0.5,0.25,0)")->delimiter(',');
    intervene->add_option("--selection", iv_selection, "Grid head selection: top-k, bottom-k, matched-random")
        ->capture_default_str();
    intervene->add_option("--control-k", iv.control_k, "k for the control suite")->capture_default_str();
    intervene->add_option("--control-gate", iv.control_gate, "Gate for the control suite")->capture_default_str();
    intervene->add_option("--seeds", iv.seeds, "Matched-random repetitions")->capture_default_str();
    intervene->add_option("--seed", iv.seed, "First matched-random seed")->capture_default_str();
    intervene->add_option("--measure-heads", iv.measure_heads, "Heads whose attention enters SPS")->capture_default_str();
    intervene->add_option("--threshold", iv.threshold, "PDS threshold for hard suppression")->capture_default_str();
    intervene->add_option("--out", iv_out, "Artifact directory (default $LATEFUSE_OUT/intervene)");

    // report
    auto* report = app.add_subcommand("report", "Consolidate per-variant artifacts into report.json and summary.txt");
    std::string report_dir, report_out;
    report->add_option("--dir", report_dir, "Directory holding <variant>/{train,probe,pds,intervene}")->required();
    report->add_option("--out", report_out, "Artifact directory (default <dir>/report)");

    // reproduce-all
    auto* repro = app.add_subcommand("reproduce-all", "Train every variant at desk scale and run the full pipeline");
    std::string repro_manifest, repro_config, repro_out;
    std::vector<std::string> repro_variants;
    ModelFlags repro_flags;
    std::vector<int> repro_ks;
    std::vector<double> repro_gates;
    std::optional<int> repro_seeds;
    repro->add_option("--manifest", repro_manifest, "Re-run exactly what a previous reproduce-all manifest records");
    repro->add_option("--config", repro_config, "Run config file used as the training template");
    repro->add_option("--variants", repro_variants, "Variants to run (default all four)")->delimiter(',');
    repro_flags.add(repro, false);
    repro->add_option("--k", repro_ks, "Grid head counts")->delimiter(',');
    repro->add_option("--gate", repro_gates, "Grid gate values")->delimiter(',');
    repro->add_option("--seeds", repro_seeds, "Matched-random repetitions");
    repro->add_option("--out", repro_out, "Output root (default $LATEFUSE_OUT/reproduce)");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Write the desk corpus and the probe sets");
    GenDataOptions gen_opts;
    std::string gen_out;
    gen->add_option("--seed", gen_opts.seed, "Corpus generator seed")->capture_default_str();
    gen->add_option("--bytes", gen_opts.bytes, "Approximate corpus size")->capture_default_str();
    gen->add_option("--coref-share", gen_opts.coref_share, "Share of pronoun-resolution sentences")->capture_default_str();
    gen->add_option("--out", gen_out, "Output directory (default bundled data directory)");

    // replay
    auto* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
    std::string replay_manifest, replay_out;
    replay->add_option("--manifest", replay_manifest, "manifest.json of an artifact directory")->required();
    replay->add_option("--out", replay_out, "Where to write (default the manifest's directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    std::ostream& log = std::cout;
    if (*train) {
        TrainRunConfig c = base_config(train_config);
        train_flags.apply(c);
        const fs::path out =
            train_out.empty() ? output_root() / std::string(to_string(c.model.variant)) / "train" : fs::path(train_out);
        cmd_train(c, out, log);
    } else if (*probe) {
        if (probe_opts.dataset.empty()) probe_opts.dataset = (data_dir() / "diagnostic.jsonl").string();
        probe_opts.checkpoint = absolute(probe_opts.checkpoint);
        probe_opts.dataset = absolute(probe_opts.dataset);
        cmd_probe(probe_opts, probe_out.empty() ? output_root() / "probe" : fs::path(probe_out), log);
    } else if (*pds) {
        if (pds_opts.dataset.empty() && !pds_opts.checkpoint.empty()) {
            pds_opts.dataset = (data_dir() / "competing_nouns.jsonl").string();
        }
        pds_opts.trace = absolute(pds_opts.trace);
        pds_opts.checkpoint = absolute(pds_opts.checkpoint);
        pds_opts.dataset = absolute(pds_opts.dataset);
        cmd_pds(pds_opts, pds_out.empty() ? output_root() / "pds" : fs::path(pds_out), log);
    } else if (*intervene) {
        iv.selection = parse_selection(iv_selection);
        if (iv.dataset.empty()) iv.dataset = (data_dir() / "competing_nouns.jsonl").string();
        iv.checkpoint = absolute(iv.checkpoint);
        iv.dataset = absolute(iv.dataset);
        cmd_intervene(iv, iv_out.empty() ? output_root() / "intervene" : fs::path(iv_out), log);
    } else if (*report) {
        const std::string dir = absolute(report_dir);
        cmd_report(dir, report_out.empty() ? fs::path(dir) / "report" : fs::path(report_out), log);
    } else if (*repro) {
        const fs::path out = repro_out.empty() ? output_root() / "reproduce" : fs::path(repro_out);
        if (!repro_manifest.empty()) {
            cmd_replay(repro_manifest, out, log);
            return 0;
        }
        ReproduceOptions o = ReproduceOptions::desk();
        if (!repro_config.empty()) {
            const std::string corpus = o.train.corpus;
            o.train = base_config(repro_config);
            if (o.train.corpus.empty()) o.train.corpus = corpus;
        }
        repro_flags.apply(o.train);
        if (!repro_variants.empty()) {
            o.variants.clear();
            for (const auto& v : repro_variants) o.variants.push_back(parse_variant(v));
        }
        o.diagnostic = absolute(o.diagnostic);
        o.competing = absolute(o.competing);
        if (!repro_ks.empty()) o.intervene.ks = repro_ks;
        if (!repro_gates.empty()) o.intervene.gates = repro_gates;
        if (repro_seeds) o.intervene.seeds = *repro_seeds;
        cmd_reproduce_all(o, out, log);
    } else if (*gen) {
        cmd_gen_data(gen_opts, gen_out.empty() ? data_dir() : fs::path(gen_out), log);
    } else if (*replay) {
        cmd_replay(replay_manifest, replay_out.empty() ? std::nullopt : std::optional<fs::path>(replay_out), log);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.error_class()) {
            case ErrorClass::usage: return kExitUsage;
            case ErrorClass::data: return kExitData;
            case ErrorClass::numerical: return kExitNumerical;
            case ErrorClass::internal: return kExitInternal;
        }
        return kExitInternal;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}
