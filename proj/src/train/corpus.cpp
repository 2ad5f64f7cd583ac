#include "latefuse/train/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "latefuse/core/errors.hpp"
#include "latefuse/train/tokenizer.hpp"

namespace latefuse {

std::size_t Corpus::bytes() const {
    std::size_t n = 0;
    for (const auto& d : documents) n += d.size();
    return n;
}

namespace {

std::string_view trim(std::string_view s) {
    const auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_ws(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_ws(s.back())) s.remove_suffix(1);
    return s;
}

bool blank(std::string_view line) { return trim(line).empty(); }

}  // namespace

Corpus parse_corpus(std::string_view text, std::string source) {
    if (!is_valid_utf8(text)) throw DataError("corpus '" + source + "' is not valid UTF-8");
    Corpus c;
    c.source = std::move(source);
    std::string current;
    auto flush = [&] {
        const auto doc = trim(current);
        if (!doc.empty()) c.documents.emplace_back(doc);
        current.clear();
    };
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = std::min(text.find('\n', pos), text.size());
        const std::string_view line = text.substr(pos, nl - pos);
        if (blank(line)) {
            flush();
        } else {
            if (!current.empty()) current += '\n';
            current += line;
        }
        pos = nl + 1;
    }
    flush();
    if (c.documents.empty()) throw DataError("corpus '" + c.source + "' contains no documents");
    return c;
}

Corpus load_corpus(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read corpus '" + path.string() + "'");
    const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_corpus(text, path.filename().string());
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write corpus '" + path.string() + "'");
    for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
        if (i) f << "\n\n";
        f << corpus.documents[i];
    }
    f << "\n";
}

std::pair<Corpus, Corpus> split_validation(const Corpus& corpus, double fraction) {
    const std::size_t n = corpus.documents.size();
    if (n < 2) throw DataError("need at least two documents to hold out a validation split");
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must lie in (0, 1)");
    std::size_t held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    held = std::clamp<std::size_t>(held, 1, n - 1);
    Corpus train{{corpus.documents.begin(), corpus.documents.end() - static_cast<std::ptrdiff_t>(held)},
                 corpus.source + ":train"};
    Corpus val{{corpus.documents.end() - static_cast<std::ptrdiff_t>(held), corpus.documents.end()},
               corpus.source + ":val"};
    return {std::move(train), std::move(val)};
}

const Lexicon& default_lexicon() {
    static const Lexicon lex{
        {"Tim", "Tom", "Max", "Ben", "Sam", "Leo", "Jack", "Noah", "Finn", "Jake"},
        {"Sarah", "Lily", "Sue", "Mia", "Anna", "Emma", "Zoe", "Kate", "Rose", "Ella"},
        {"key", "spoon", "pen", "brush", "hammer", "stick", "crayon", "rope", "comb", "fork"},
        {"box", "cup", "bag", "jar", "basket", "bowl", "pot", "drawer", "tub", "sack"},
        {"dog", "cat", "bird", "frog", "duck", "rabbit", "fox", "pig", "bear", "mouse"},
        {"park", "garden", "forest", "beach", "school", "kitchen", "farm", "lake", "hill", "yard"},
        {"red", "big", "little", "shiny", "old", "blue", "happy", "soft", "green", "small"},
    };
    return lex;
}

namespace {

struct Person {
    std::string name;
    bool female;

    std::string subj(bool cap) const { return female ? (cap ? "She" : "she") : (cap ? "He" : "he"); }
    std::string obj() const { return female ? "her" : "him"; }
    std::string poss(bool cap) const { return female ? (cap ? "Her" : "her") : (cap ? "His" : "his"); }
};

class StoryWriter {
public:
    explicit StoryWriter(std::uint64_t seed) : rng_(seed) {}

    std::string document(double coref_share) {
        const Person hero = person();
        std::ostringstream out;
        out << opening(hero);
        const int body = uniform(3, 7);
        for (int i = 0; i < body; ++i) {
            out << ' ' << (chance(coref_share) ? coref(hero) : narrative(hero));
        }
        out << ' ' << closing(hero);
        return out.str();
    }

private:
    int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }

    template <typename V>
    const auto& pick(const V& v) {
        return v[static_cast<std::size_t>(uniform(0, static_cast<int>(v.size()) - 1))];
    }

    Person person() {
        const bool female = chance(0.5);
        const auto& lex = default_lexicon();
        return {pick(female ? lex.female_names : lex.male_names), female};
    }

    Person other(const Person& p, bool opposite) {
        const bool female = opposite ? !p.female : p.female;
        const auto& names = female ? default_lexicon().female_names : default_lexicon().male_names;
        std::string name;
        do {
            name = pick(names);
        } while (name == p.name);
        return {name, female};
    }

    std::string opening(const Person& hero) {
        const auto& lex = default_lexicon();
        switch (uniform(0, 2)) {
            case 0: {
                static const std::vector<std::string> kinds = {"little", "kind", "happy", "brave"};
                const auto& adj = pick(kinds);
                return "Once upon a time, there was a " + adj + " " + (hero.female ? "girl" : "boy") + " named " +
                       hero.name + ".";
            }
            case 1: return "One day, " + hero.name + " went to the " + pick(lex.places) + ".";
            default: {
                const auto& adj = pick(lex.adjectives);
                const auto& pet = pick(lex.animals);
                return hero.name + " had a " + adj + " " + pet + ". " + hero.subj(true) + " loved it very much.";
            }
        }
    }

    std::string closing(const Person& hero) {
        switch (uniform(0, 2)) {
            case 0: return hero.subj(true) + " was very happy.";
            case 1: return "At the end of the day, " + hero.name + " went home.";
            default: return hero.name + " smiled and said, \"What a good day!\"";
        }
    }

    std::string narrative(const Person& hero) {
        const auto& lex = default_lexicon();
        switch (uniform(0, 5)) {
            case 0: return hero.subj(true) + " liked to play in the " + pick(lex.places) + ".";
            case 1: return "The sun was warm and the sky was blue.";
            case 2: {
                const auto& adj = pick(lex.adjectives);
                return hero.subj(true) + " saw a " + adj + " " + pick(lex.animals) + ".";
            }
            case 3: return hero.poss(true) + " mom said, \"Be careful!\"";
            case 4: return hero.name + " ran to the " + pick(lex.places) + " with a big smile.";
            default: {
                const auto& animal = pick(lex.animals);
                return "The " + animal + " was " + pick(lex.adjectives) + " and fast.";
            }
        }
    }

    // Tool and container in random order.
    std::pair<std::string, std::string> tool_and_container(std::string& tool, std::string& box) {
        tool = pick(default_lexicon().tools);
        box = pick(default_lexicon().containers);
        return chance(0.5) ? std::make_pair(tool, box) : std::make_pair(box, tool);
    }

    std::string coref(const Person& hero) {
        const auto& lex = default_lexicon();
        std::string tool, box;
        switch (uniform(0, 6)) {
            case 0: {
                auto [a, b] = tool_and_container(tool, box);
                static const char* verbs[] = {"saw", "found", "had", "looked at"};
                return hero.name + " " + verbs[uniform(0, 3)] + " a " + a + " and a " + b + ". " + hero.subj(true) +
                       " used it.";
            }
            case 1: {
                auto [a, b] = tool_and_container(tool, box);
                return hero.name + " found a " + a + " and a " + b + ". " + hero.subj(true) + " put the " +
                       pick(lex.adjectives) + " ball in it.";
            }
            case 2: {
                auto [a, b] = tool_and_container(tool, box);
                return "There was a " + a + " and a " + b + " on the table. " + hero.name + " used it.";
            }
            case 3: {
                const Person friend_ = other(hero, true);
                const bool hero_first = chance(0.5);
                const Person& first = hero_first ? hero : friend_;
                const Person& second = hero_first ? friend_ : hero;
                const Person& actor = chance(0.5) ? first : second;
                static const char* acts[] = {"played", "laughed", "ran", "sang", "jumped"};
                const auto& place = pick(lex.places);
                return first.name + " and " + second.name + " went to the " + place + ". " + actor.subj(true) + " " +
                       acts[uniform(0, 4)] + ".";
            }
            case 4: {
                std::string many = pick(lex.animals), one;
                do {
                    one = pick(lex.animals);
                } while (one == many);
                const bool plural_first = chance(0.5);
                const std::string group = "the " + many + "s";
                const std::string single = "the " + one;
                std::string subject = plural_first ? group + " and " + single : single + " and " + group;
                subject[0] = 'T';
                const char* pronoun = chance(0.5) ? "They" : "It";
                return subject + " ran. " + pronoun + " stopped.";
            }
            case 5: {
                const Person friend_ = other(hero, true);
                tool = pick(lex.tools);
                return hero.name + " had a " + tool + ". " + hero.subj(true) + " gave it to " + friend_.name + ". " +
                       friend_.subj(true) + " said thank you.";
            }
            default: {
                const Person friend_ = other(hero, true);
                tool = pick(lex.tools);
                return hero.name + " told " + friend_.name + " that " + hero.subj(false) + " had a " + tool + ". " +
                       friend_.subj(true) + " asked for it.";
            }
        }
    }

    std::mt19937_64 rng_;
};

}  // namespace

Corpus generate_story_corpus(const StoryOptions& options) {
    if (options.target_bytes == 0) throw ConfigError("story corpus target size must be positive");
    if (!(options.coref_share >= 0.0 && options.coref_share <= 1.0)) {
        throw ConfigError("coref_share must lie in [0, 1]");
    }
    StoryWriter writer(options.seed);
    Corpus c;
    c.source = "stories(seed=" + std::to_string(options.seed) + ")";
    std::size_t bytes = 0;
    while (bytes < options.target_bytes) {
        c.documents.push_back(writer.document(options.coref_share));
        bytes += c.documents.back().size() + 2;
    }
    return c;
}

}  // namespace latefuse
