#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

#include "common.hpp"
#include "latefuse/cli/commands.hpp"
#include "latefuse/core/errors.hpp"

namespace latefuse {

namespace fs = std::filesystem;
using nlohmann::json;
using cli_detail::num;

const std::vector<std::string>& report_inputs() {
    static const std::vector<std::string> files = {"train/train.json", "probe/probe.json", "pds/pds.json",
                                                   "intervene/intervene.json"};
    return files;
}

namespace {

constexpr int kReportVersion = 1;
const char* const kVariantOrder[] = {"std-t", "d-cas", "lfa", "cfm"};

struct VariantArtifacts {
    std::string variant;
    json train, probe, pds, intervene;
};

std::vector<VariantArtifacts> load_tree(const fs::path& dir) {
    std::vector<std::string> missing;
    std::vector<VariantArtifacts> found;
    for (const char* v : kVariantOrder) {
        if (!fs::is_directory(dir / v)) continue;
        VariantArtifacts a;
        a.variant = v;
        json* slots[] = {&a.train, &a.probe, &a.pds, &a.intervene};
        bool complete = true;
        for (std::size_t i = 0; i < report_inputs().size(); ++i) {
            const fs::path p = dir / v / report_inputs()[i];
            if (!fs::is_regular_file(p)) {
                missing.push_back((fs::path(v) / report_inputs()[i]).string());
                complete = false;
                continue;
            }
            *slots[i] = read_json_file(p);
        }
        if (complete) found.push_back(std::move(a));
    }
    if (found.empty() && missing.empty()) {
        std::string msg = "no variant artifacts under '" + dir.string() + "'; expected <variant>/{";
        for (std::size_t i = 0; i < report_inputs().size(); ++i) msg += (i ? "," : "") + report_inputs()[i];
        msg += "} for at least one variant of std-t, d-cas, lfa, cfm";
        throw DataError(msg);
    }
    if (!missing.empty()) {
        std::string msg = "missing artifacts under '" + dir.string() + "':";
        for (const auto& m : missing) msg += "\n  " + m;
        throw DataError(msg);
    }
    return found;
}

const json* find_head(const json& heads, const std::string& label) {
    for (const auto& h : heads) {
        if (h.at("head") == label) return &h;
    }
    return nullptr;
}

const json* control(const json& intervene, const std::string& condition) {
    for (const auto& c : intervene.at("controls")) {
        if (c.at("condition") == condition) return &c;
    }
    return nullptr;
}

// Hard suppression when the model has heads above threshold, else top-k.
const json& suppression_row(const json& intervene) {
    if (const auto* hard = control(intervene, "hard")) return *hard;
    if (const auto* top = control(intervene, "top-k")) return *top;
    throw DataError("intervene.json has neither a hard nor a top-k control row");
}

json d_of(const json& row) { return row.at("effect").is_null() ? json(nullptr) : row.at("effect").at("d"); }
json p_of(const json& row) { return row.at("effect").is_null() ? json(nullptr) : row.at("effect").at("p"); }

double max_late_pds(const json& pds) {
    const auto& s = pds.at("summary");
    const auto per_layer = s.at("max_per_layer").get<std::vector<double>>();
    const int late = s.at("late_layers").get<int>();
    double mx = 0.0;
    for (int l = static_cast<int>(per_layer.size()) - late; l < static_cast<int>(per_layer.size()); ++l) {
        if (l >= 0) mx = std::max(mx, per_layer[static_cast<std::size_t>(l)]);
    }
    return mx;
}

std::string late_label(const json& pds) {
    const int L = pds.at("n_layers").get<int>();
    const int late = pds.at("summary").at("late_layers").get<int>();
    const int first = std::max(0, L - late);
    return first == L - 1 ? "L" + std::to_string(first) : "L" + std::to_string(first) + "-L" + std::to_string(L - 1);
}

json build_report(const std::vector<VariantArtifacts>& tree) {
    json variants = json::array();
    for (const auto& a : tree) variants.push_back(a.variant);

    json table1 = json::array();
    for (const auto& a : tree) {
        const auto& t = a.train;
        table1.push_back({{"variant", a.variant},
                          {"attention", t.at("model").at("attention")},
                          {"ffn", t.at("model").at("ffn")},
                          {"parameters", t.at("model").at("parameters")},
                          {"layers", t.at("model").at("n_layers")},
                          {"heads", t.at("model").at("n_heads")},
                          {"d_model", t.at("model").at("d_model")},
                          {"initial_val_loss", t.at("initial_val_loss")},
                          {"final_val_loss", t.at("final_val_loss")},
                          {"reduction", t.at("reduction")},
                          {"steps", t.at("steps_run")}});
    }

    const auto ref_it = std::find_if(tree.begin(), tree.end(), [](const auto& a) { return a.variant == "lfa"; });
    const auto& ref = ref_it != tree.end() ? *ref_it : tree.front();
    json table2_heads = json::array();
    for (const auto& label : ref.probe.at("top_heads")) {
        json values = json::object();
        for (const auto& a : tree) {
            const json* h = find_head(a.probe.at("heads"), label.get<std::string>());
            values[a.variant] = h ? json{{"mean_attn", h->at("mean_attn")}, {"top1", h->at("top1")}} : json(nullptr);
        }
        table2_heads.push_back({{"head", label}, {"values", values}});
    }
    json best = json::object();
    for (const auto& a : tree) {
        const json* top = nullptr;
        for (const auto& h : a.probe.at("heads")) {
            if (!top || h.at("top1").get<double>() > top->at("top1").get<double>()) top = &h;
        }
        best[a.variant] = {{"head", top->at("head")}, {"top1", top->at("top1")}, {"mean_attn", top->at("mean_attn")}};
    }

    json table3 = json::array(), stability = json::array(), table5 = json::array();
    json by_layer = json::array(), hist = json::array(), heatmap = json::array(), curves = json::array(),
         sps = json::array();
    for (const auto& a : tree) {
        const auto& s = a.pds.at("summary");
        table3.push_back({{"variant", a.variant},
                          {"threshold", a.pds.at("threshold")},
                          {"total_above", s.at("total_above")},
                          {"late_layers", s.at("late_layers")},
                          {"late_label", late_label(a.pds)},
                          {"late_above", s.at("late_above")},
                          {"max_last_layer", s.at("max_last_layer")},
                          {"argmax_last_layer", s.at("argmax_last_layer")},
                          {"average", s.at("average")},
                          {"pairs", a.pds.at("pairs")}});
        const auto& st = a.probe.at("stability");
        stability.push_back({{"variant", a.variant},
                             {"tau", st.at("tau")},
                             {"mean", st.at("mean")},
                             {"min", st.at("min")},
                             {"max", st.at("max")},
                             {"pairs", st.at("pairs")}});

        const auto& row = suppression_row(a.intervene);
        json layers = json::array();
        {
            std::vector<int> ls;
            for (const auto& h : row.at("heads")) {
                const auto label = h.get<std::string>();
                ls.push_back(std::stoi(label.substr(1, label.find('.') - 1)));
            }
            std::sort(ls.begin(), ls.end());
            ls.erase(std::unique(ls.begin(), ls.end()), ls.end());
            for (const int l : ls) layers.push_back(l);
        }
        table5.push_back({{"variant", a.variant},
                          {"condition", row.at("condition")},
                          {"layers", layers},
                          {"n_heads", row.at("k")},
                          {"heads", row.at("heads")},
                          {"d", d_of(row)},
                          {"p", p_of(row)}});

        by_layer.push_back({{"variant", a.variant}, {"layers", a.pds.at("by_layer")}});
        const auto& h = a.pds.at("histogram");
        int total = 0;
        for (const auto& c : h.at("counts")) total += c.get<int>();
        hist.push_back({{"variant", a.variant}, {"bin_width", h.at("bin_width")}, {"upper", h.at("upper")},
                        {"counts", h.at("counts")}, {"total", total}});
        heatmap.push_back({{"variant", a.variant},
                           {"n_layers", a.pds.at("n_layers")},
                           {"n_heads", a.pds.at("n_heads")},
                           {"values", a.pds.at("heatmap")}});
        curves.push_back({{"variant", a.variant},
                          {"selection", a.intervene.at("selection")},
                          {"curves", a.intervene.at("gate_curves")}});
        sps.push_back({{"variant", a.variant},
                       {"condition", row.at("condition")},
                       {"baseline", a.intervene.at("baseline").at("sps")},
                       {"baseline_sem", a.intervene.at("baseline").at("sem")},
                       {"suppressed", row.at("sps")},
                       {"suppressed_sem", row.at("sem")}});
    }
    std::stable_sort(table5.begin(), table5.end(), [](const json& a, const json& b) {
        if (a.at("d").is_null() != b.at("d").is_null()) return b.at("d").is_null();
        if (a.at("d").is_null()) return false;
        return std::abs(a.at("d").get<double>()) > std::abs(b.at("d").get<double>());
    });

    // Directional checks; null when a variant is absent or d is undefined.
    std::map<std::string, const VariantArtifacts*> by_name;
    for (const auto& a : tree) by_name[a.variant] = &a;
    json max_late = json::object(), topk_d = json::object();
    for (const auto& a : tree) {
        max_late[a.variant] = max_late_pds(a.pds);
        const auto* top = control(a.intervene, "top-k");
        topk_d[a.variant] = top ? d_of(*top) : json(nullptr);
    }
    json late_check = nullptr, d_check = nullptr, param_check = nullptr;
    if (by_name.count("lfa") && by_name.count("std-t")) {
        late_check = max_late["lfa"].get<double>() > max_late["std-t"].get<double>();
    }
    if (by_name.count("lfa") && by_name.count("cfm") && !topk_d["lfa"].is_null() && !topk_d["cfm"].is_null()) {
        d_check = std::abs(topk_d["lfa"].get<double>()) < std::abs(topk_d["cfm"].get<double>());
    }
    {
        std::vector<std::int64_t> counts;
        for (const char* v : {"cfm", "lfa", "d-cas", "std-t"}) {
            if (by_name.count(v)) counts.push_back(by_name[v]->train.at("model").at("parameters").get<std::int64_t>());
        }
        if (counts.size() >= 2) {
            param_check = std::adjacent_find(counts.begin(), counts.end(),
                                             [](auto a, auto b) { return a >= b; }) == counts.end();
        }
    }

    return {{"format", "latefuse-report"},
            {"version", kReportVersion},
            {"variants", variants},
            {"table1_training", table1},
            {"table2_coreference", {{"reference_variant", ref.variant}, {"heads", table2_heads}, {"best_top1", best}}},
            {"table3_pds", table3},
            {"stability", stability},
            {"table5_effects", table5},
            {"figures",
             {{"pds_by_layer", by_layer},
              {"pds_histogram", hist},
              {"gate_curves", curves},
              {"pds_heatmap", heatmap},
              {"sps", sps}}},
            {"directional",
             {{"max_late_pds", max_late},
              {"topk_d", topk_d},
              {"lfa_late_pds_above_std_t", late_check},
              {"lfa_abs_d_below_cfm", d_check},
              {"parameter_order_cfm_lfa_dcas_stdt", param_check}}}};
}

std::string cell(const json& v) {
    if (v.is_null()) return "n/a";
    if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
    if (v.is_number_float()) return num(v.get<double>());
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

std::string pad(std::string s, std::size_t w) {
    s.append(s.size() < w ? w - s.size() : 1, ' ');
    return s;
}

// Plain-text rendering; every value printed here is read from the report JSON.
std::string summary_text(const json& r) {
    std::ostringstream o;
    o << "Training\n";
    o << pad("model", 8) << pad("attn", 13) << pad("ffn", 13) << pad("params", 10) << pad("val loss", 14) << "initial\n";
    for (const auto& t : r.at("table1_training")) {
        o << pad(cell(t.at("variant")), 8) << pad(cell(t.at("attention")), 13) << pad(cell(t.at("ffn")), 13)
          << pad(cell(t.at("parameters")), 10) << pad(cell(t.at("final_val_loss")), 14) << cell(t.at("initial_val_loss"))
          << "\n";
    }

    const auto& t2 = r.at("table2_coreference");
    o << "\nCoreference heads (top heads of " << cell(t2.at("reference_variant")) << " by mean attention)\n";
    o << pad("head", 8);
    for (const auto& v : r.at("variants")) o << pad(cell(v) + " attn", 14) << pad(cell(v) + " top1", 14);
    o << "\n";
    for (const auto& h : t2.at("heads")) {
        o << pad(cell(h.at("head")), 8);
        for (const auto& v : r.at("variants")) {
            const auto& x = h.at("values").at(v.get<std::string>());
            o << pad(x.is_null() ? "n/a" : cell(x.at("mean_attn")), 14) << pad(x.is_null() ? "n/a" : cell(x.at("top1")), 14);
        }
        o << "\n";
    }
    for (const auto& [v, b] : t2.at("best_top1").items()) {
        o << "best Top1 " << v << ": " << cell(b.at("head")) << " " << cell(b.at("top1")) << "%\n";
    }

    o << "\nToken-position dependence\n";
    o << pad("model", 8) << pad("above", 7) << pad("late", 12) << pad("max last", 22) << "average\n";
    for (const auto& t : r.at("table3_pds")) {
        o << pad(cell(t.at("variant")), 8) << pad(cell(t.at("total_above")), 7)
          << pad(cell(t.at("late_above")) + " (" + cell(t.at("late_label")) + ")", 12)
          << pad(cell(t.at("max_last_layer")) + " " + cell(t.at("argmax_last_layer")), 22) << cell(t.at("average")) << "\n";
    }

    o << "\nStability\n";
    for (const auto& s : r.at("stability")) {
        o << pad(cell(s.at("variant")), 8) << "mean " << cell(s.at("mean")) << "  min " << cell(s.at("min")) << "  max "
          << cell(s.at("max")) << "\n";
    }

    o << "\nSuppression effects (largest |d| first)\n";
    o << pad("model", 8) << pad("condition", 11) << pad("layers", 10) << pad("heads", 7) << pad("d", 14) << "p\n";
    for (const auto& t : r.at("table5_effects")) {
        std::string layers;
        for (const auto& l : t.at("layers")) layers += (layers.empty() ? "L" : " L") + cell(l);
        o << pad(cell(t.at("variant")), 8) << pad(cell(t.at("condition")), 11) << pad(layers, 10)
          << pad(cell(t.at("n_heads")), 7) << pad(cell(t.at("d")), 14) << cell(t.at("p")) << "\n";
    }

    const auto& d = r.at("directional");
    o << "\nDirectional checks\n";
    o << "LFA late-layer max PDS above Std-T: " << cell(d.at("lfa_late_pds_above_std_t")) << "\n";
    o << "LFA |d| below CFM (top-k): " << cell(d.at("lfa_abs_d_below_cfm")) << "\n";
    o << "parameter order CFM < LFA < D-Cas < Std-T: " << cell(d.at("parameter_order_cfm_lfa_dcas_stdt")) << "\n";
    return o.str();
}

}  // namespace

void cmd_report(const std::string& dir, const fs::path& out, std::ostream& log) {
    const fs::path root = resolve_input(dir, out);
    const auto tree = load_tree(root);
    const json report = build_report(tree);
    const std::string summary = summary_text(report);

    ArtifactWriter writer(out);
    writer.write_json("report.json", report);
    writer.write_text("summary.txt", summary);

    RunManifest m;
    m.command = "report";
    m.config = {{"dir", dir}};
    for (const auto& a : tree) {
        for (const auto& f : report_inputs()) {
            const std::string rel = a.variant + "/" + f;
            m.inputs.push_back({rel, (fs::path(dir) / rel).string(), sha256_file(root / rel)});
        }
    }
    writer.commit(std::move(m));
    log << summary;
}

}  // namespace latefuse
