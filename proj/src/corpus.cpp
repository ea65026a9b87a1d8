#include "babyit/corpus.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>

namespace babyit::corpus {

namespace {

constexpr std::string_view kSourceNames[] = {"childes", "gutenberg", "bnc", "opensubtitles", "switchboard", "simplewiki", "other"};

bool is_control(char32_t cp) {
    if (cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\f' || cp == U'\v') {
        return false;
    }
    return cp < 0x20 || (cp >= 0x7F && cp <= 0x9F);
}

}  // namespace

std::string_view to_string(Source source) {
    return kSourceNames[static_cast<std::size_t>(source)];
}

Source parse_source(std::string_view name) {
    for (std::size_t i = 0; i < std::size(kSourceNames); ++i) {
        if (kSourceNames[i] == name) {
            return static_cast<Source>(i);
        }
    }
    throw Error(fmt::format("unknown corpus source '{}'", name));
}

bool StripSet::contains(char32_t cp) const {
    if (strip_controls && is_control(cp)) {
        return true;
    }
    return chars.count(cp) > 0;
}

StripSet StripSet::defaults() {
    return from_utf8("§¶•†‡©®™~^|*#_<>{}[]\\@`\xEF\xBF\xBD");
}

StripSet StripSet::from_utf8(std::string_view chars, bool strip_controls) {
    StripSet s;
    s.strip_controls = strip_controls;
    for (char32_t cp : utf8_decode(chars)) {
        s.chars.insert(cp);
    }
    return s;
}

std::size_t count_words(std::string_view text) {
    return split_whitespace(text).size();
}

std::optional<Document> clean_document(std::string_view raw, const StripSet& strip, std::size_t min_words) {
    std::string kept;
    kept.reserve(raw.size());
    for (char32_t cp : utf8_decode(raw)) {
        if (!strip.contains(cp)) {
            utf8_append(kept, cp);
        }
    }
    const auto words = split_whitespace(kept);
    if (words.size() <= min_words) {
        return std::nullopt;
    }
    Document doc;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) {
            doc.text += ' ';
        }
        doc.text += words[i];
    }
    doc.word_count = words.size();
    return doc;
}

std::vector<DialogueTurn> merge_speaker_turns(const std::vector<DialogueTurn>& turns) {
    std::vector<DialogueTurn> out;
    for (const auto& turn : turns) {
        if (!out.empty() && out.back().speaker == turn.speaker) {
            out.back().text += ' ';
            out.back().text += turn.text;
        } else {
            out.push_back(DialogueTurn{turn.speaker, turn.text, out.size()});
        }
    }
    return out;
}

std::vector<PromptReplyPair> extract_prompt_reply_pairs(const std::vector<DialogueTurn>& turns, std::string_view dialogue_id) {
    std::vector<PromptReplyPair> pairs;
    if (turns.size() < 2) {
        return pairs;
    }
    pairs.reserve(turns.size() - 1);
    for (std::size_t k = 0; k + 1 < turns.size(); ++k) {
        if (turns[k].speaker == turns[k + 1].speaker) {
            throw Error(fmt::format("dialogue '{}': turns {} and {} share a speaker; merge turns first", dialogue_id, k, k + 1));
        }
        pairs.push_back(PromptReplyPair{turns[k].text, turns[k + 1].text, std::string(dialogue_id), k});
    }
    return pairs;
}

WordBudgetLedger::WordBudgetLedger(std::uint64_t cap, bool enforce) : cap_(cap), enforce_(enforce) {
    if (cap == 0) {
        throw Error("word budget cap must be positive");
    }
}

void WordBudgetLedger::preload(Source source, std::uint64_t words, BudgetKind kind) {
    std::lock_guard lock(mutex_);
    per_source_[source] += words;
    (kind == BudgetKind::pretrain ? pretrain_total_ : instruction_total_) += words;
}

BudgetDecision WordBudgetLedger::enforce_budget(const Document& incoming, BudgetKind kind) {
    std::lock_guard lock(mutex_);
    const std::uint64_t total = pretrain_total_ + instruction_total_;
    if (enforce_ && total + incoming.word_count > cap_) {
        return BudgetDecision::reject;
    }
    per_source_[incoming.source] += incoming.word_count;
    (kind == BudgetKind::pretrain ? pretrain_total_ : instruction_total_) += incoming.word_count;
    return BudgetDecision::accept;
}

std::uint64_t WordBudgetLedger::pretrain_total() const {
    std::lock_guard lock(mutex_);
    return pretrain_total_;
}

std::uint64_t WordBudgetLedger::instruction_total() const {
    std::lock_guard lock(mutex_);
    return instruction_total_;
}

std::uint64_t WordBudgetLedger::total() const {
    std::lock_guard lock(mutex_);
    return pretrain_total_ + instruction_total_;
}

std::map<Source, std::uint64_t> WordBudgetLedger::per_source() const {
    std::lock_guard lock(mutex_);
    return per_source_;
}

std::string WordBudgetLedger::to_csv() const {
    std::lock_guard lock(mutex_);
    std::string out = "source,words\n";
    for (const auto& [source, words] : per_source_) {
        out += fmt::format("{},{}\n", to_string(source), words);
    }
    out += fmt::format("pretrain_total,{}\n", pretrain_total_);
    out += fmt::format("instruction_total,{}\n", instruction_total_);
    out += fmt::format("cap,{}\n", cap_);
    return out;
}

std::size_t train_count(std::size_t n, double fraction) {
    auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
    return std::clamp<std::size_t>(n_train, 1, n - 1);
}

std::uint64_t accounting_report(std::uint64_t corpus_words, std::uint64_t epochs) {
    if (corpus_words == 0 || epochs == 0) {
        throw Error("accounting_report: corpus_words and epochs must be positive");
    }
    return corpus_words * epochs;
}

double effective_words(std::uint64_t words_processed, double train_share) {
    return static_cast<double>(words_processed) * train_share;
}

PairWordCounts count_pair_words(const std::vector<PromptReplyPair>& pairs) {
    PairWordCounts c;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& p : pairs) {
        const std::uint64_t w = count_words(p.prompt) + count_words(p.reply);
        ++c.items;
        c.words += w;
        c.reply_words += count_words(p.reply);
        if (seen.emplace(p.prompt, p.reply).second) {
            ++c.unique_items;
            c.words_deduplicated += w;
        }
    }
    return c;
}

std::vector<PromptReplyPair> deduplicate_pairs(const std::vector<PromptReplyPair>& pairs) {
    std::vector<PromptReplyPair> out;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& p : pairs) {
        if (seen.emplace(p.prompt, p.reply).second) {
            out.push_back(p);
        }
    }
    return out;
}

void canonicalize(std::vector<Document>& docs) {
    std::stable_sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) {
        if (a.source != b.source) {
            return a.source < b.source;
        }
        return a.id < b.id;
    });
}

std::vector<std::string> read_text_blocks(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::vector<std::string> blocks;
    std::string line;
    std::string current;
    while (std::getline(in, line)) {
        if (trim(line).empty()) {
            if (!current.empty()) {
                blocks.push_back(std::move(current));
                current.clear();
            }
            continue;
        }
        if (!current.empty()) {
            current += '\n';
        }
        current += line;
    }
    if (!current.empty()) {
        blocks.push_back(std::move(current));
    }
    return blocks;
}

std::vector<Dialogue> read_dialogues(const std::filesystem::path& path) {
    std::vector<Dialogue> dialogues;
    std::map<std::string, std::size_t> index;
    for (const auto& rec : read_jsonl(path)) {
        const auto id = rec.at("dialogue_id").get<std::string>();
        const auto speaker = rec.at("speaker").get<std::string>();
        if (speaker != "A" && speaker != "B") {
            throw Error(fmt::format("{}: dialogue '{}' has speaker '{}' (expected A or B)", path.string(), id, speaker));
        }
        auto [it, inserted] = index.try_emplace(id, dialogues.size());
        if (inserted) {
            dialogues.push_back(Dialogue{id, {}});
        }
        auto& turns = dialogues[it->second].turns;
        turns.push_back(DialogueTurn{speaker == "A" ? Speaker::A : Speaker::B, rec.at("text").get<std::string>(), turns.size()});
    }
    return dialogues;
}

Json to_json(const Document& doc) {
    return Json{{"id", doc.id}, {"source", std::string(to_string(doc.source))}, {"text", doc.text}};
}

Document document_from_json(const Json& j) {
    Document d;
    d.id = j.at("id").get<std::string>();
    d.source = parse_source(j.at("source").get<std::string>());
    d.text = j.at("text").get<std::string>();
    d.word_count = count_words(d.text);
    return d;
}

Json to_json(const PromptReplyPair& pair) {
    return Json{{"prompt", pair.prompt}, {"reply", pair.reply}, {"dialogue_id", pair.dialogue_id}, {"window_index", pair.window_index}};
}

PromptReplyPair pair_from_json(const Json& j) {
    return PromptReplyPair{j.at("prompt").get<std::string>(), j.at("reply").get<std::string>(), j.at("dialogue_id").get<std::string>(),
                           j.at("window_index").get<std::size_t>()};
}

}  // namespace babyit::corpus
