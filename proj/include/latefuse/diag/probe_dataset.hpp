#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace latefuse {

enum class Phenomenon { competing_nouns, gender, plurality };
enum class Order { target_first, target_last };

std::string_view to_string(Phenomenon p);
std::string_view to_string(Order o);
Phenomenon parse_phenomenon(std::string_view text);
Order parse_order(std::string_view text);

// Half-open range of character (code point) offsets into a prompt.
struct CharSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

// One pronoun to resolve. For competing-noun instances the target is the
// semantically appropriate noun and the single distractor is the other one.
struct CoreferenceInstance {
    std::string id;
    std::string prompt_id;
    std::string prompt;
    CharSpan query;
    CharSpan target;
    std::vector<CharSpan> distractors;
    Phenomenon phenomenon = Phenomenon::competing_nouns;
    std::optional<std::string> pair_id;
    Order order = Order::target_first;
    std::string category;  // free-form tag, e.g. "tool-container"

    std::string text(const CharSpan& span) const;

    friend bool operator==(const CoreferenceInstance&, const CoreferenceInstance&) = default;
};

// Indices into a dataset's instance list.
struct MinimalPair {
    std::string pair_id;
    std::size_t target_first = 0;
    std::size_t target_last = 0;
};

struct ProbeDataset {
    std::vector<CoreferenceInstance> instances;

    std::size_t prompt_count() const;
    // Pairs in order of first appearance. Throws DataError if a pair id has
    // other than one target-first and one target-last member.
    std::vector<MinimalPair> pairs() const;
    std::vector<std::size_t> indices_where(Phenomenon p) const;
};

// Span sanity for one instance: inside the prompt, non-empty, mutually
// non-overlapping, query after target and every distractor.
void validate_instance(const CoreferenceInstance& inst);
// All instances plus: unique ids, complete pairs sharing the same
// target/distractor words, every competing-nouns instance paired.
void validate_dataset(const ProbeDataset& ds);

// The fixed 13-prompt / 29-instance diagnostic set.
ProbeDataset diagnostic_set();

struct CompetingNounGrid {
    // Placeholders: {N} agent name, {P} agent pronoun, {A} first noun,
    // {B} second noun, {it} the query pronoun.
    std::vector<std::string> templates;
    // (semantic target, positional distractor) noun pairs.
    std::vector<std::pair<std::string, std::string>> noun_pairs;
};

// 5 templates x 6 tool/container pairs.
CompetingNounGrid default_grid();

// Two instances (target first / target last) per template and noun pair.
// Throws DataError on a template whose spans overlap or misorder.
ProbeDataset build_competing_noun_grid(const CompetingNounGrid& grid);

nlohmann::json to_json(const CoreferenceInstance& inst);
CoreferenceInstance instance_from_json(const nlohmann::json& j);

// JSON lines, one instance per line. The reader validates the result.
void write_dataset(const std::filesystem::path& path, const ProbeDataset& ds);
ProbeDataset read_dataset(const std::filesystem::path& path);
ProbeDataset parse_dataset(std::string_view jsonl);

}  // namespace latefuse
