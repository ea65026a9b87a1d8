#include "babyit/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>

namespace babyit::fixtures {

namespace {

const std::vector<std::string> kNouns = {"dog",   "cat",   "ball",  "book",  "cup",    "baby",  "bird",  "car",  "truck", "apple",
                                         "cookie", "duck", "frog",  "hat",   "shoe",   "spoon", "bed",   "chair", "door", "tree",
                                         "box",   "bear",  "bunny", "horse", "cow",    "pig",   "boat",  "train", "block", "toy",
                                         "sock",  "coat",  "flower", "star", "house",  "banana", "puppy", "kitty", "bottle", "blanket"};

const std::vector<std::pair<std::string, std::string>> kTransitive = {
    {"sees", "see"},   {"likes", "like"},   {"wants", "want"}, {"has", "have"},       {"finds", "find"},   {"takes", "take"},
    {"holds", "hold"}, {"pushes", "push"},  {"throws", "throw"}, {"eats", "eat"},     {"drops", "drop"},   {"opens", "open"},
    {"needs", "need"}, {"gets", "get"},     {"makes", "make"}, {"loves", "love"},     {"washes", "wash"},  {"carries", "carry"}};

const std::vector<std::pair<std::string, std::string>> kIntransitive = {
    {"sleeps", "sleep"}, {"runs", "run"},   {"jumps", "jump"}, {"sits", "sit"},
    {"plays", "play"},   {"laughs", "laugh"}, {"cries", "cry"}, {"swims", "swim"}};

const std::vector<std::string> kAdjectives = {"big", "little", "red", "blue", "green", "yellow", "happy", "soft",
                                              "new", "old",    "funny", "nice", "hot",  "cold",   "wet",   "sleepy"};

const std::vector<std::string> kNames = {"mommy", "daddy", "grandma", "emma", "jack", "lily", "sam", "max", "nana"};

const std::vector<std::string> kPlaces = {"on the table", "in the box", "under the bed", "in the garden", "on the floor",
                                          "by the door",  "in the car", "at the park"};

const std::vector<std::string> kTails = {"today", "now", "again", "please", "too"};

const std::vector<std::string> kBackchannels = {"yeah", "uh huh", "right", "okay", "mhm", "oh really"};

std::string plural(const std::string& noun) {
    if (noun.ends_with("x") || noun.ends_with("s") || noun.ends_with("sh") || noun.ends_with("ch")) {
        return noun + "es";
    }
    if (noun.ends_with("y") && noun.size() > 1 && std::string("aeiou").find(noun[noun.size() - 2]) == std::string::npos) {
        return noun.substr(0, noun.size() - 1) + "ies";
    }
    return noun + "s";
}

// Zipfian index in [0, n): weight 1 / (rank + 1).
std::size_t zipf(Rng& rng, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += 1.0 / static_cast<double>(i + 1);
    }
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < n; ++i) {
        u -= 1.0 / static_cast<double>(i + 1);
        if (u < 0.0) {
            return i;
        }
    }
    return n - 1;
}

template <class T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    return v[zipf(rng, v.size())];
}

template <class T>
const T& pick_uniform(Rng& rng, const std::vector<T>& v) {
    return v[rng.below(v.size())];
}

std::string noun_phrase(Rng& rng, bool plural_form) {
    std::string np = plural_form || rng.below(3) != 0 ? "the" : "a";
    if (rng.below(3) == 0) {
        np += " " + pick(rng, kAdjectives);
    }
    const auto& n = pick(rng, kNouns);
    return np + " " + (plural_form ? plural(n) : n);
}

std::string subject(Rng& rng, bool& plural_form) {
    plural_form = rng.below(3) == 0;
    if (!plural_form && rng.below(3) == 0) {
        return pick(rng, kNames);
    }
    return noun_phrase(rng, plural_form);
}

std::string capitalized(std::string s) {
    if (!s.empty()) {
        s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    }
    return s;
}

// Strings of consonant-vowel syllables.
std::string invented_word(Rng& rng, std::size_t syllables) {
    static const std::string consonants = "bdfgklmnprstvwz";
    static const std::string vowels = "aeiou";
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
        w += consonants[rng.below(consonants.size())];
        w += vowels[rng.below(vowels.size())];
        if (rng.below(4) == 0) {
            w += consonants[rng.below(consonants.size())];
        }
    }
    return w;
}

}  // namespace

std::string sentence(Rng& rng) {
    bool pl = false;
    switch (rng.below(10)) {
        case 0:
        case 1:
        case 2: {
            auto s = subject(rng, pl);
            const auto& v = pick(rng, kTransitive);
            auto out = s + " " + (pl ? v.second : v.first) + " " + noun_phrase(rng, rng.below(4) == 0);
            if (rng.below(3) == 0) {
                out += " " + pick(rng, kPlaces);
            }
            return out + " .";
        }
        case 3: {
            auto s = subject(rng, pl);
            const auto& v = pick(rng, kIntransitive);
            auto out = s + " " + (pl ? v.second : v.first);
            if (rng.below(2) == 0) {
                out += " " + pick(rng, kPlaces);
            } else if (rng.below(2) == 0) {
                out += " " + pick(rng, kTails);
            }
            return out + " .";
        }
        case 4:
            return "look at the " + pick(rng, kAdjectives) + " " + pick(rng, kNouns) + " !";
        case 5:
            return "do you want the " + pick(rng, kNouns) + " ?";
        case 6:
            return rng.below(2) == 0 ? "where is the " + pick(rng, kNouns) + " ?" : "where are the " + plural(pick(rng, kNouns)) + " ?";
        case 7:
            return "can you " + pick(rng, kTransitive).second + " " + noun_phrase(rng, false) + " ?";
        case 8:
            return "that is a " + pick(rng, kAdjectives) + " " + pick(rng, kNouns) + " .";
        default: {
            auto s = subject(rng, pl);
            return s + (pl ? " are " : " is ") + pick(rng, kAdjectives) + " .";
        }
    }
}

std::vector<std::string> child_directed_corpus(std::size_t target_words, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::string> docs;
    std::size_t words = 0;
    while (words < target_words) {
        const auto n = 3 + rng.below(8);
        std::vector<std::string> sentences;
        for (std::size_t i = 0; i < n; ++i) {
            sentences.push_back(sentence(rng));
        }
        auto doc = join(sentences, " ");
        words += split_whitespace(doc).size();
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::vector<std::string> pseudo_word_corpus(std::size_t distinct_words, std::size_t total_words, std::uint64_t seed) {
    Rng rng(seed);
    std::set<std::string> seen;
    std::vector<std::string> lexicon;
    while (lexicon.size() < distinct_words) {
        auto w = invented_word(rng, 2 + rng.below(3));
        if (seen.insert(w).second) {
            lexicon.push_back(std::move(w));
        }
    }
    std::vector<double> cdf;
    double total = 0.0;
    for (std::size_t i = 0; i < lexicon.size(); ++i) {
        total += 1.0 / static_cast<double>(i + 1);
        cdf.push_back(total);
    }
    std::vector<std::string> stream = lexicon;
    while (stream.size() < total_words) {
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), rng.uniform() * total);
        stream.push_back(lexicon[std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), lexicon.size() - 1)]);
    }
    rng.shuffle(stream);
    std::vector<std::string> docs;
    for (std::size_t i = 0; i < stream.size(); i += 50) {
        std::vector<std::string> part(stream.begin() + static_cast<std::ptrdiff_t>(i),
                                      stream.begin() + static_cast<std::ptrdiff_t>(std::min(stream.size(), i + 50)));
        docs.push_back(join(part, " "));
    }
    return docs;
}

std::vector<corpus::Dialogue> dialogues(std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<corpus::Dialogue> out;
    for (std::size_t d = 0; d < count; ++d) {
        corpus::Dialogue dlg;
        dlg.id = fmt::format("sw{:04}", d);
        const auto n = 4 + rng.below(10);
        auto speaker = corpus::Speaker::A;
        for (std::size_t t = 0; t < n; ++t) {
            std::string text;
            if (rng.below(5) == 0) {
                text = pick_uniform(rng, kBackchannels);
            } else {
                text = sentence(rng);
                if (rng.below(3) == 0) {
                    text += " " + sentence(rng);
                }
            }
            dlg.turns.push_back(corpus::DialogueTurn{speaker, text, t});
            if (rng.below(6) != 0) {
                speaker = speaker == corpus::Speaker::A ? corpus::Speaker::B : corpus::Speaker::A;
            }
        }
        out.push_back(std::move(dlg));
    }
    return out;
}

std::vector<corpus::Document> wiki_articles(std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<corpus::Document> out;
    for (std::size_t a = 0; a < count; ++a) {
        const auto& topic = kNouns[a % kNouns.size()];
        const auto topic_pl = plural(topic);
        std::vector<std::string> s;
        s.push_back(fmt::format("A {} is a thing that many children know.", topic));
        s.push_back(fmt::format("{} can be {} or {}.", capitalized(topic_pl), pick_uniform(rng, kAdjectives), pick_uniform(rng, kAdjectives)));
        const auto extra = 2 + rng.below(5);
        for (std::size_t i = 0; i < extra; ++i) {
            switch (rng.below(4)) {
                case 0:
                    s.push_back(fmt::format("People often keep a {} {}.", topic, pick_uniform(rng, kPlaces)));
                    break;
                case 1:
                    s.push_back(fmt::format("A child {} a {} every day.", pick_uniform(rng, kTransitive).first, topic));
                    break;
                case 2:
                    s.push_back(fmt::format("Some {} are {} and some are {}.", topic_pl, pick_uniform(rng, kAdjectives),
                                            pick_uniform(rng, kAdjectives)));
                    break;
                default:
                    s.push_back(fmt::format("You can find a {} {}.", topic, pick_uniform(rng, kPlaces)));
                    break;
            }
        }
        auto text = join(s, " ");
        const auto words = split_whitespace(text).size();
        out.push_back(corpus::Document{fmt::format("wiki{:04}", a), corpus::Source::simplewiki, std::move(text), words});
    }
    return out;
}

std::vector<eval::EvalItem> eval_items(std::size_t per_task, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<eval::EvalItem> items;
    auto add = [&](const std::string& task, std::optional<std::string> context, std::string good, std::string bad) {
        eval::EvalItem item;
        item.task = task;
        item.id = fmt::format("{}/{:04}", task, items.size());
        item.context = std::move(context);
        if (rng.below(2) == 0) {
            item.candidates = {good, bad};
            item.correct_index = 0;
        } else {
            item.candidates = {bad, good};
            item.correct_index = 1;
        }
        items.push_back(std::move(item));
    };
    for (std::size_t i = 0; i < per_task; ++i) {
        const bool pl = rng.below(2) == 0;
        const auto np = noun_phrase(rng, pl);
        const auto& v = pick_uniform(rng, kTransitive);
        const auto obj = noun_phrase(rng, false);
        add("agreement", std::nullopt, fmt::format("{} {} {} .", np, pl ? v.second : v.first, obj),
            fmt::format("{} {} {} .", np, pl ? v.first : v.second, obj));
    }
    for (std::size_t i = 0; i < per_task; ++i) {
        const auto& n = pick_uniform(rng, kNouns);
        if (rng.below(2) == 0) {
            add("determiner", std::nullopt, fmt::format("where is the {} ?", n), fmt::format("where are the {} ?", n));
        } else {
            add("determiner", std::nullopt, fmt::format("where are the {} ?", plural(n)), fmt::format("where is the {} ?", plural(n)));
        }
    }
    std::set<std::string> wugs;
    for (std::size_t i = 0; i < per_task; ++i) {
        std::string w;
        do {
            w = invented_word(rng, 2);
        } while (!wugs.insert(w).second);
        add("wug", fmt::format("this is a {} . now there are two", w), w + "s", w);
    }
    for (std::size_t i = 0; i < per_task; ++i) {
        const auto& a = pick_uniform(rng, kNouns);
        std::string b;
        do {
            b = pick_uniform(rng, kNouns);
        } while (b == a);
        const auto& pa = pick_uniform(rng, kPlaces);
        std::string pb;
        do {
            pb = pick_uniform(rng, kPlaces);
        } while (pb == pa);
        add("entity_tracking", fmt::format("the {} is {} . the {} is {} . the {} is", a, pa, b, pb, a), pa, pb);
    }
    return items;
}

std::vector<eval::EvalItem> random_pair_items(std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<eval::EvalItem> items;
    for (std::size_t i = 0; i < count; ++i) {
        eval::EvalItem item;
        item.task = "random";
        item.id = fmt::format("random/{:04}", i);
        auto a = sentence(rng);
        auto b = sentence(rng);
        while (b == a) {
            b = sentence(rng);
        }
        item.candidates = {a, b};
        item.correct_index = rng.below(2);
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<eval::ReadingTimeRow> reading_times(std::size_t words, std::uint64_t seed) {
    Rng rng(seed);
    std::map<std::string, double> freq;
    for (const auto& doc : child_directed_corpus(20000, derive_seed(seed, 1))) {
        for (auto w : split_whitespace(doc)) {
            freq[std::string(w)] += 1.0;
        }
    }
    std::vector<eval::ReadingTimeRow> rows;
    while (rows.size() < words) {
        const auto s = sentence(rng);
        for (auto w : split_whitespace(s)) {
            if (rows.size() == words) {
                break;
            }
            eval::ReadingTimeRow r;
            r.word = std::string(w);
            r.word_length = static_cast<double>(w.size());
            r.log_frequency = std::log(freq[r.word] + 1.0);
            r.reading_time = std::max(50.0, 200.0 + 12.0 * r.word_length - 6.0 * r.log_frequency + rng.normal(0.0, 20.0));
            r.reading_time = std::round(r.reading_time * 10.0) / 10.0;
            r.log_frequency = std::round(r.log_frequency * 1e6) / 1e6;
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

std::vector<eval::LabeledText> marker_classification(std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<eval::LabeledText> out;
    while (out.size() < count) {
        auto s = sentence(rng);
        if (s.find("please") != std::string::npos) {
            continue;
        }
        const int label = rng.below(2) == 0 ? 1 : 0;
        if (label == 1) {
            auto words = split_whitespace(s);
            std::vector<std::string> w(words.begin(), words.end());
            w.insert(w.begin() + static_cast<std::ptrdiff_t>(rng.below(w.size())), "please");
            s = join(w, " ");
        }
        out.push_back(eval::LabeledText{std::move(s), label});
    }
    return out;
}

FixturePaths write_fixture_tree(const std::filesystem::path& dir, const FixtureSizes& sizes, std::uint64_t seed) {
    FixturePaths p;
    const std::vector<std::string> sources = {"childes", "gutenberg", "bnc", "opensubtitles"};
    const auto docs = child_directed_corpus(sizes.pretrain_words, derive_seed(seed, 1));
    std::vector<std::string> per_source(sources.size());
    Rng noise(derive_seed(seed, 2));
    for (std::size_t i = 0; i < docs.size(); ++i) {
        auto doc = docs[i];
        // Occasional markup characters and near-empty blocks for the cleaner.
        switch (noise.below(12)) {
            case 0:
                doc = "§ " + doc;
                break;
            case 1:
                doc += " *";
                break;
            case 2:
                per_source[i % sources.size()] += "ok then\n\n";
                break;
            default:
                break;
        }
        per_source[i % sources.size()] += doc + "\n\n";
    }
    for (std::size_t s = 0; s < sources.size(); ++s) {
        const auto path = dir / "raw" / (sources[s] + ".txt");
        write_file(path, per_source[s]);
        p.pretrain_text.push_back(path);
        p.pretrain_sources.push_back(sources[s]);
    }

    std::vector<Json> turns;
    for (const auto& d : dialogues(sizes.dialogues, derive_seed(seed, 3))) {
        for (const auto& t : d.turns) {
            turns.push_back(Json{{"dialogue_id", d.id}, {"speaker", t.speaker == corpus::Speaker::A ? "A" : "B"}, {"text", t.text}});
        }
    }
    p.dialogues = dir / "raw" / "switchboard.jsonl";
    write_file(p.dialogues, to_jsonl(turns));

    std::string articles;
    for (const auto& a : wiki_articles(sizes.articles, derive_seed(seed, 4))) {
        articles += a.text + "\n\n";
    }
    p.articles = dir / "raw" / "simplewiki.txt";
    write_file(p.articles, articles);

    std::vector<Json> items;
    for (const auto& item : eval_items(sizes.eval_items_per_task, derive_seed(seed, 5))) {
        items.push_back(eval::to_json(item));
    }
    p.eval_items = dir / "eval" / "minimal_pairs.jsonl";
    write_file(p.eval_items, to_jsonl(items));

    std::string rt = "word,reading_time,word_length,log_frequency\n";
    for (const auto& r : reading_times(sizes.reading_time_words, derive_seed(seed, 6))) {
        rt += fmt::format("{},{},{},{}\n", csv_field(r.word), fixed(r.reading_time, 1), fixed(r.word_length, 0), fixed(r.log_frequency, 6));
    }
    p.reading_times = dir / "eval" / "reading_times.csv";
    write_file(p.reading_times, rt);

    auto labeled_jsonl = [](const std::vector<eval::LabeledText>& xs) {
        std::vector<Json> out;
        for (const auto& x : xs) {
            out.push_back(Json{{"text", x.text}, {"label", x.label}});
        }
        return to_jsonl(out);
    };
    p.classification_train = dir / "eval" / "classification_train.jsonl";
    p.classification_test = dir / "eval" / "classification_test.jsonl";
    write_file(p.classification_train, labeled_jsonl(marker_classification(sizes.classification_train, derive_seed(seed, 7))));
    write_file(p.classification_test, labeled_jsonl(marker_classification(sizes.classification_test, derive_seed(seed, 8))));
    return p;
}

}  // namespace babyit::fixtures
