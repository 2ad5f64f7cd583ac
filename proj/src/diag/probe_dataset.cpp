#include "latefuse/diag/probe_dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "latefuse/core/errors.hpp"
#include "latefuse/train/corpus.hpp"
#include "latefuse/train/tokenizer.hpp"

namespace latefuse {

std::string_view to_string(Phenomenon p) {
    switch (p) {
        case Phenomenon::competing_nouns: return "competing-nouns";
        case Phenomenon::gender: return "gender";
        case Phenomenon::plurality: return "plurality";
    }
    return "?";
}

std::string_view to_string(Order o) { return o == Order::target_first ? "target-first" : "target-last"; }

Phenomenon parse_phenomenon(std::string_view text) {
    if (text == "competing-nouns") return Phenomenon::competing_nouns;
    if (text == "gender") return Phenomenon::gender;
    if (text == "plurality") return Phenomenon::plurality;
    throw DataError("unknown phenomenon '" + std::string(text) + "'");
}

Order parse_order(std::string_view text) {
    if (text == "target-first") return Order::target_first;
    if (text == "target-last") return Order::target_last;
    throw DataError("unknown order tag '" + std::string(text) + "'");
}

std::string CoreferenceInstance::text(const CharSpan& span) const {
    const std::size_t b = codepoint_to_byte(prompt, span.begin);
    const std::size_t e = codepoint_to_byte(prompt, span.end);
    return prompt.substr(b, e - b);
}

std::size_t ProbeDataset::prompt_count() const {
    std::set<std::string> ids;
    for (const auto& i : instances) ids.insert(i.prompt_id);
    return ids.size();
}

std::vector<MinimalPair> ProbeDataset::pairs() const {
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        if (!instances[i].pair_id) continue;
        const auto& id = *instances[i].pair_id;
        if (!members.contains(id)) order.push_back(id);
        members[id].push_back(i);
    }
    std::vector<MinimalPair> out;
    for (const auto& id : order) {
        const auto& m = members[id];
        if (m.size() != 2 || instances[m[0]].order == instances[m[1]].order) {
            throw DataError("pair '" + id + "' is incomplete: needs one target-first and one target-last instance, has " +
                            std::to_string(m.size()) + " member(s)");
        }
        const bool first_is_first = instances[m[0]].order == Order::target_first;
        out.push_back({id, first_is_first ? m[0] : m[1], first_is_first ? m[1] : m[0]});
    }
    return out;
}

std::vector<std::size_t> ProbeDataset::indices_where(Phenomenon p) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        if (instances[i].phenomenon == p) out.push_back(i);
    }
    return out;
}

void validate_instance(const CoreferenceInstance& inst) {
    auto fail = [&](const std::string& msg) { throw DataError("instance '" + inst.id + "': " + msg); };
    if (inst.id.empty()) throw DataError("instance with empty id");
    if (!is_valid_utf8(inst.prompt)) fail("prompt is not valid UTF-8");
    const std::size_t len = codepoint_count(inst.prompt);
    std::vector<std::pair<CharSpan, std::string>> spans = {{inst.query, "query"}, {inst.target, "target"}};
    for (std::size_t i = 0; i < inst.distractors.size(); ++i) {
        spans.push_back({inst.distractors[i], "distractor " + std::to_string(i)});
    }
    for (const auto& [s, name] : spans) {
        if (s.begin >= s.end || s.end > len) {
            fail(name + " span [" + std::to_string(s.begin) + ", " + std::to_string(s.end) +
                 ") is empty or outside the prompt");
        }
    }
    for (std::size_t i = 0; i < spans.size(); ++i) {
        for (std::size_t j = i + 1; j < spans.size(); ++j) {
            if (spans[i].first.begin < spans[j].first.end && spans[j].first.begin < spans[i].first.end) {
                fail(spans[i].second + " and " + spans[j].second + " spans overlap");
            }
        }
    }
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i].first.end > inst.query.begin) fail(spans[i].second + " does not precede the query");
    }
    if (inst.distractors.empty()) fail("needs at least one distractor");
}

void validate_dataset(const ProbeDataset& ds) {
    std::set<std::string> ids;
    for (const auto& inst : ds.instances) {
        validate_instance(inst);
        if (!ids.insert(inst.id).second) throw DataError("duplicate instance id '" + inst.id + "'");
        if (inst.phenomenon == Phenomenon::competing_nouns && !inst.pair_id) {
            throw DataError("competing-nouns instance '" + inst.id + "' has no pair id");
        }
    }
    for (const auto& pair : ds.pairs()) {
        const auto& a = ds.instances[pair.target_first];
        const auto& b = ds.instances[pair.target_last];
        auto words = [](const CoreferenceInstance& i) {
            std::multiset<std::string> w;
            for (const auto& d : i.distractors) w.insert(i.text(d));
            return std::make_pair(i.text(i.target), w);
        };
        if (words(a) != words(b)) {
            throw DataError("pair '" + pair.pair_id + "': members differ in target or distractor words");
        }
    }
}

namespace {

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Code-point span of the nth (0-based) whole-word occurrence of word.
CharSpan find_word(const std::string& text, const std::string& word, int nth) {
    std::size_t from = 0;
    int seen = 0;
    while (true) {
        const std::size_t at = text.find(word, from);
        if (at == std::string::npos) {
            throw DataError("generation error: '" + word + "' occurrence " + std::to_string(nth) + " not in '" + text +
                            "'");
        }
        const std::size_t end = at + word.size();
        const bool whole = (at == 0 || !word_char(text[at - 1])) && (end == text.size() || !word_char(text[end]));
        if (whole && seen++ == nth) {
            const std::size_t b = codepoint_count(std::string_view(text).substr(0, at));
            return {b, b + codepoint_count(word)};
        }
        from = at + 1;
    }
}

struct Mark {
    std::string word;
    int nth = 0;
};

Order order_of(const CharSpan& target, const std::vector<CharSpan>& distractors) {
    for (const auto& d : distractors) {
        if (d.begin < target.begin) return Order::target_last;
    }
    return Order::target_first;
}

class DatasetBuilder {
public:
    void prompt(std::string id, std::string text) {
        prompt_id_ = std::move(id);
        prompt_ = std::move(text);
        count_ = 0;
    }

    void add(Mark query, Mark target, std::vector<Mark> distractors, Phenomenon p,
             std::optional<std::string> pair_id = std::nullopt, std::string category = "") {
        CoreferenceInstance inst;
        inst.id = prompt_id_ + "." + std::to_string(++count_);
        inst.prompt_id = prompt_id_;
        inst.prompt = prompt_;
        inst.query = find_word(prompt_, query.word, query.nth);
        inst.target = find_word(prompt_, target.word, target.nth);
        for (const auto& d : distractors) inst.distractors.push_back(find_word(prompt_, d.word, d.nth));
        inst.phenomenon = p;
        inst.pair_id = std::move(pair_id);
        inst.order = order_of(inst.target, inst.distractors);
        inst.category = std::move(category);
        validate_instance(inst);
        ds_.instances.push_back(std::move(inst));
    }

    ProbeDataset finish() {
        validate_dataset(ds_);
        return std::move(ds_);
    }

private:
    ProbeDataset ds_;
    std::string prompt_id_;
    std::string prompt_;
    int count_ = 0;
};

const auto CN = Phenomenon::competing_nouns;
const auto GEN = Phenomenon::gender;
const auto PLU = Phenomenon::plurality;

void tool_prompt(DatasetBuilder& b, const std::string& id, const std::string& name, const std::string& pron,
                 const std::string& verb, const std::string& first, const std::string& second, const std::string& tool,
                 const std::string& box, const std::string& pair) {
    b.prompt(id, name + " " + verb + " a " + first + " and a " + second + ". " + pron + " used it.");
    b.add({"it"}, {tool}, {{box}}, CN, pair, "tool-container");
    b.add({pron}, {name}, {{first}, {second}}, GEN, std::nullopt, "animate-inanimate");
}

}  // namespace

ProbeDataset diagnostic_set() {
    DatasetBuilder b;
    tool_prompt(b, "d01", "Tim", "He", "saw", "key", "box", "key", "box", "cn-key-box");
    tool_prompt(b, "d02", "Tim", "He", "saw", "box", "key", "key", "box", "cn-key-box");

    b.prompt("d03", "Sarah and Tom went to the park. She played.");
    b.add({"She"}, {"Sarah"}, {{"Tom"}}, GEN, "gen-sarah-tom");
    b.prompt("d04", "The dogs and the cat ran. They stopped.");
    b.add({"They"}, {"dogs"}, {{"cat"}}, PLU, "plu-dogs-cat");
    b.prompt("d05", "Tom and Sarah went to the park. She played.");
    b.add({"She"}, {"Sarah"}, {{"Tom"}}, GEN, "gen-sarah-tom");
    b.prompt("d06", "The cat and the dogs ran. They stopped.");
    b.add({"They"}, {"dogs"}, {{"cat"}}, PLU, "plu-dogs-cat");

    tool_prompt(b, "d07", "Sue", "She", "saw", "spoon", "cup", "spoon", "cup", "cn-spoon-cup");
    tool_prompt(b, "d08", "Sue", "She", "saw", "cup", "spoon", "spoon", "cup", "cn-spoon-cup");
    tool_prompt(b, "d09", "Max", "He", "had", "pen", "bag", "pen", "bag", "cn-pen-bag");
    tool_prompt(b, "d10", "Max", "He", "had", "bag", "pen", "pen", "bag", "cn-pen-bag");

    b.prompt("d11", "Lily and Ben found a dog and some cats. She fed the cats and he fed the dog. It barked and they purred.");
    b.add({"She"}, {"Lily"}, {{"Ben"}}, GEN);
    b.add({"he"}, {"Ben"}, {{"Lily"}}, GEN);
    b.add({"It"}, {"dog"}, {{"cats"}}, PLU);
    b.add({"they"}, {"cats"}, {{"dog"}}, PLU);

    b.prompt("d12", "Anna told Sam that she was tired. He smiled at her and she smiled at him.");
    b.add({"she", 0}, {"Anna"}, {{"Sam"}}, GEN);
    b.add({"He"}, {"Sam"}, {{"Anna"}}, GEN);
    b.add({"her"}, {"Anna"}, {{"Sam"}}, GEN);
    b.add({"she", 1}, {"Anna"}, {{"Sam"}}, GEN);
    b.add({"him"}, {"Sam"}, {{"Anna"}}, GEN);

    b.prompt("d13", "The birds saw the frog. It jumped and they sang. Then it hid and they flew.");
    b.add({"It"}, {"frog"}, {{"birds"}}, PLU);
    b.add({"they", 0}, {"birds"}, {{"frog"}}, PLU);
    b.add({"it"}, {"frog"}, {{"birds"}}, PLU);
    b.add({"they", 1}, {"birds"}, {{"frog"}}, PLU);
    return b.finish();
}

CompetingNounGrid default_grid() {
    return {
        {
            "{N} saw a {A} and a {B}. {P} used {it}.",
            "{N} found a {A} and a {B}. {P} used {it}.",
            "{N} had a {A} and a {B}. {P} used {it}.",
            "{N} looked at a {A} and a {B}. {P} used {it}.",
            "There was a {A} and a {B} on the table. {N} used {it}.",
        },
        {{"key", "box"}, {"spoon", "cup"}, {"pen", "bag"}, {"brush", "jar"}, {"hammer", "basket"}, {"rope", "bowl"}},
    };
}

namespace {

struct Filled {
    std::string text;
    std::map<std::string, CharSpan> spans;
};

Filled fill_template(const std::string& tmpl, const std::map<std::string, std::string>& values) {
    Filled out;
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            const std::size_t close = tmpl.find('}', i);
            if (close == std::string::npos) throw DataError("generation error: unterminated placeholder in '" + tmpl + "'");
            const std::string key = tmpl.substr(i + 1, close - i - 1);
            const auto it = values.find(key);
            if (it == values.end()) throw DataError("generation error: unknown placeholder {" + key + "}");
            const std::size_t b = codepoint_count(out.text);
            out.text += it->second;
            if (out.spans.contains(key)) throw DataError("generation error: placeholder {" + key + "} used twice");
            out.spans[key] = {b, codepoint_count(out.text)};
            i = close + 1;
        } else {
            out.text += tmpl[i++];
        }
    }
    return out;
}

bool is_female(const std::string& name) {
    const auto& f = default_lexicon().female_names;
    return std::find(f.begin(), f.end(), name) != f.end();
}

}  // namespace

ProbeDataset build_competing_noun_grid(const CompetingNounGrid& grid) {
    static const std::vector<std::string> agents = {"Tim", "Sue", "Max", "Lily", "Ben", "Mia"};
    ProbeDataset ds;
    for (std::size_t t = 0; t < grid.templates.size(); ++t) {
        for (std::size_t p = 0; p < grid.noun_pairs.size(); ++p) {
            const auto& [semantic, distractor] = grid.noun_pairs[p];
            const std::string& agent = agents[(t + p) % agents.size()];
            const std::string pair_id = "cn.t" + std::to_string(t + 1) + "." + semantic + "-" + distractor;
            for (const bool target_first : {true, false}) {
                const Filled f = fill_template(grid.templates[t], {{"N", agent},
                                                                   {"P", is_female(agent) ? "She" : "He"},
                                                                   {"A", target_first ? semantic : distractor},
                                                                   {"B", target_first ? distractor : semantic},
                                                                   {"it", "it"}});
                for (const char* key : {"A", "B", "it"}) {
                    if (!f.spans.contains(key)) {
                        throw DataError("generation error: template " + std::to_string(t + 1) + " lacks {" + key + "}");
                    }
                }
                CoreferenceInstance inst;
                inst.id = pair_id + (target_first ? ".first" : ".last");
                inst.prompt_id = inst.id;
                inst.prompt = f.text;
                inst.query = f.spans.at("it");
                inst.target = f.spans.at(target_first ? "A" : "B");
                inst.distractors = {f.spans.at(target_first ? "B" : "A")};
                inst.phenomenon = Phenomenon::competing_nouns;
                inst.pair_id = pair_id;
                inst.order = target_first ? Order::target_first : Order::target_last;
                inst.category = "tool-container";
                try {
                    validate_instance(inst);
                } catch (const DataError& e) {
                    throw DataError(std::string("generation error: ") + e.what());
                }
                ds.instances.push_back(std::move(inst));
            }
        }
    }
    validate_dataset(ds);
    return ds;
}

nlohmann::json to_json(const CoreferenceInstance& inst) {
    auto span = [](const CharSpan& s) { return nlohmann::json::array({s.begin, s.end}); };
    nlohmann::json d = nlohmann::json::array();
    for (const auto& s : inst.distractors) d.push_back(span(s));
    nlohmann::json j = {
        {"id", inst.id},
        {"prompt_id", inst.prompt_id},
        {"prompt", inst.prompt},
        {"query", span(inst.query)},
        {"target", span(inst.target)},
        {"distractors", d},
        {"phenomenon", to_string(inst.phenomenon)},
        {"pair_id", inst.pair_id ? nlohmann::json(*inst.pair_id) : nlohmann::json(nullptr)},
        {"order", to_string(inst.order)},
        {"category", inst.category},
    };
    return j;
}

CoreferenceInstance instance_from_json(const nlohmann::json& j) {
    try {
        auto span = [](const nlohmann::json& s) {
            if (!s.is_array() || s.size() != 2) throw DataError("span must be a [begin, end] pair");
            return CharSpan{s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()};
        };
        CoreferenceInstance inst;
        inst.id = j.at("id").get<std::string>();
        inst.prompt_id = j.value("prompt_id", inst.id);
        inst.prompt = j.at("prompt").get<std::string>();
        inst.query = span(j.at("query"));
        inst.target = span(j.at("target"));
        for (const auto& d : j.at("distractors")) inst.distractors.push_back(span(d));
        inst.phenomenon = parse_phenomenon(j.at("phenomenon").get<std::string>());
        if (j.contains("pair_id") && !j["pair_id"].is_null()) inst.pair_id = j["pair_id"].get<std::string>();
        inst.order = j.contains("order") ? parse_order(j["order"].get<std::string>())
                                         : order_of(inst.target, inst.distractors);
        inst.category = j.value("category", "");
        return inst;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed instance: ") + e.what());
    }
}

void write_dataset(const std::filesystem::path& path, const ProbeDataset& ds) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write dataset '" + path.string() + "'");
    for (const auto& inst : ds.instances) f << to_json(inst).dump() << '\n';
}

ProbeDataset parse_dataset(std::string_view jsonl) {
    ProbeDataset ds;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            ds.instances.push_back(instance_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("dataset line " + std::to_string(lineno) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("dataset line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (ds.instances.empty()) throw DataError("dataset has no instances");
    validate_dataset(ds);
    return ds;
}

ProbeDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read dataset '" + path.string() + "'");
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_dataset(buf.str());
}

}  // namespace latefuse
