#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latefuse/cli/manifest.hpp"
#include "latefuse/diag/metrics.hpp"
#include "latefuse/intervene/intervention.hpp"
#include "latefuse/train/run_config.hpp"

namespace latefuse {

// Every command writes one artifact directory holding its outputs and a
// manifest.json. Input paths inside options are either absolute or relative
// to the artifact directory; the command-line front end makes user paths
// absolute, reproduce-all uses relative links between its stages.

// Bundled data: LATEFUSE_DATA if set, else the source tree's data/.
std::filesystem::path data_dir();
// Default output root: LATEFUSE_OUT if set, else "runs".
std::filesystem::path output_root();

std::filesystem::path resolve_input(const std::string& path, const std::filesystem::path& out_dir);

// train ---------------------------------------------------------------------

struct TrainSummary {
    std::int64_t parameters = 0;
    double initial_val_loss = 0.0;
    double final_val_loss = 0.0;
    int steps_run = 0;
};

// Outputs: checkpoint (config.checkpoint), loss.csv, train_config.toml,
// train.json.
TrainSummary cmd_train(const TrainRunConfig& config, const std::filesystem::path& out, std::ostream& log);

// probe ---------------------------------------------------------------------

struct ProbeOptions {
    std::string checkpoint;
    std::string dataset;
    double tau = kStabilityTau;
    int top_heads = 5;
};

nlohmann::json to_json(const ProbeOptions& o);
ProbeOptions probe_options_from_json(const nlohmann::json& j);

// Outputs: trace.json, heads.csv, heads_by_phenomenon.csv, stability.csv,
// filtered.csv, probe.json.
void cmd_probe(const ProbeOptions& options, const std::filesystem::path& out, std::ostream& log);

// pds -----------------------------------------------------------------------

struct PdsOptions {
    std::string trace;       // a trace dump, or
    std::string checkpoint;  // a checkpoint plus dataset
    std::string dataset;
    double threshold = kPdsThreshold;
    int late_layers = 2;
    double bin_width = 0.025;
};

nlohmann::json to_json(const PdsOptions& o);
PdsOptions pds_options_from_json(const nlohmann::json& j);

// Outputs: pds.csv, pds_heatmap.csv, pds_by_layer.csv, pds_histogram.csv,
// pds.json.
void cmd_pds(const PdsOptions& options, const std::filesystem::path& out, std::ostream& log);

// intervene -----------------------------------------------------------------

struct InterveneOptions {
    std::string checkpoint;
    std::string dataset;
    std::vector<int> ks;        // empty: default ks that fit the model
    std::vector<double> gates;  // empty: default gate grid
    Selection selection = Selection::top_k;
    int control_k = 3;          // clamped to the head count
    double control_gate = 0.0;
    int seeds = kRandomSeeds;
    std::uint64_t seed = 1;
    int measure_heads = 5;
    double threshold = kPdsThreshold;
};

nlohmann::json to_json(const InterveneOptions& o);
InterveneOptions intervene_options_from_json(const nlohmann::json& j);

// Outputs: grid.csv, gate_curve_k{K}.csv, controls.csv, effects.csv,
// per_head_sps.csv, intervene.json.
void cmd_intervene(const InterveneOptions& options, const std::filesystem::path& out, std::ostream& log);

// report --------------------------------------------------------------------

// Consolidates a reproduce-all style tree (<dir>/<variant>/{train,probe,pds,
// intervene}) into report.json and summary.txt. Throws DataError listing
// every missing artifact.
void cmd_report(const std::string& dir, const std::filesystem::path& out, std::ostream& log);

// Artifacts cmd_report reads from each variant directory.
const std::vector<std::string>& report_inputs();

// reproduce-all -------------------------------------------------------------

struct ReproduceOptions {
    TrainRunConfig train;  // model variant is overridden per variant
    std::vector<Variant> variants{Variant::std_t, Variant::d_cas, Variant::lfa, Variant::cfm};
    std::string diagnostic;  // probe dataset
    std::string competing;   // pds / intervene dataset
    ProbeOptions probe;
    PdsOptions pds;
    InterveneOptions intervene;

    // Desk-scale defaults: 2 layers, 2 heads, 64 channels, 400 steps.
    static ReproduceOptions desk();
};

nlohmann::json to_json(const ReproduceOptions& o);
ReproduceOptions reproduce_options_from_json(const nlohmann::json& j);

void cmd_reproduce_all(const ReproduceOptions& options, const std::filesystem::path& out, std::ostream& log);

// gen-data ------------------------------------------------------------------

struct GenDataOptions {
    std::uint64_t seed = 1;
    std::size_t bytes = 1 << 20;
    double coref_share = 0.5;
};

// Outputs: desk_corpus.txt, diagnostic.jsonl, competing_nouns.jsonl.
void cmd_gen_data(const GenDataOptions& options, const std::filesystem::path& out, std::ostream& log);

// replay --------------------------------------------------------------------

// Re-runs the command recorded in a manifest into `out` (default: the
// manifest's directory). Input hashes are checked first; a mismatch is a
// DataError naming the input.
void cmd_replay(const std::filesystem::path& manifest, const std::optional<std::filesystem::path>& out,
                std::ostream& log);

}  // namespace latefuse
