#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace latefuse {

struct Corpus {
    std::vector<std::string> documents;
    std::string source;

    std::size_t bytes() const;
};

// Documents are blank-line-separated blocks; each is trimmed of surrounding
// whitespace and empty blocks are dropped. Throws DataError on invalid UTF-8
// or when nothing remains.
Corpus parse_corpus(std::string_view text, std::string source);
Corpus load_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);

// Train/validation split: the last ceil(fraction * n) documents, in file
// order, are held out. Requires at least two documents.
std::pair<Corpus, Corpus> split_validation(const Corpus& corpus, double fraction = 0.05);

// Word lists shared by the story generator and the probe-set builder.
struct Lexicon {
    std::vector<std::string> male_names;
    std::vector<std::string> female_names;
    std::vector<std::string> tools;       // things one uses
    std::vector<std::string> containers;  // things one puts things in
    std::vector<std::string> animals;     // singular; plural adds "s"
    std::vector<std::string> places;
    std::vector<std::string> adjectives;
};

const Lexicon& default_lexicon();

struct StoryOptions {
    std::uint64_t seed = 1;
    std::size_t target_bytes = 1 << 20;
    // Share of sentences drawn from the pronoun-resolution templates; the rest
    // are plain narrative sentences.
    double coref_share = 0.5;
};

// Short children's-story documents built from templates. Every pronoun in a
// resolution template has a unique antecedent by gender, number or by what
// the verb implies (one uses a tool, one puts things in a container), and
// noun orders are balanced so that position alone never predicts it.
Corpus generate_story_corpus(const StoryOptions& options);

}  // namespace latefuse
