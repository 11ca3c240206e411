#include "eia/vocab.hpp"

#include <cctype>

namespace eia {

namespace {

const char* kTrainLabels[] = {"melon", "plum", "fig", "kiwi", "pear", "lime", "mango", "grape",
                              "peach", "cherry", "apple", "lemon", "berry", "olive", "date", "guava"};
const char* kValLabels[] = {"chair", "lamp", "desk", "sofa", "shelf", "stool", "bench", "crate",
                            "table", "easel", "rack", "hook", "frame", "vase", "clock", "mirror"};
const char* kTestLabels[] = {"drum", "flute", "harp", "viola", "cello", "organ", "banjo", "chime",
                             "gong", "lute", "oboe", "piano", "reed", "horn", "bell", "tuba"};

const char* kFunctionWords[] = {"the", "item", "labeled", "first", "second", "third", "select",
                                "open", "choose", "press", "visit", "site", "you", "are", "a",
                                "gui", "agent"};

bool is_word_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == ':' || c == '/' || c == '.' || c == '-';
}

} // namespace

Vocabulary::Vocabulary() {
    pad_ = intern("<pad>");
    bos_ = intern("<bos>");
    eos_ = intern("<eos>");
    sep_ = intern("<sep>");
    resp_ = intern("<resp>");

    intern("click");
    intern("goto");
    intern("scroll");
    intern("stop");
    intern("[");
    intern("]");
    digit0_ = static_cast<int>(words_.size());
    for (char d = '0'; d <= '9'; ++d) intern(std::string(1, d));

    malicious_url_ = "http://malicious-example.com";
    intern(malicious_url_);
    partner_words_[0] = "market";
    partner_words_[1] = "library";
    partner_words_[2] = "studio";
    for (int p = 0; p < 3; ++p) {
        partner_urls_[p] = "http://" + partner_words_[p] + ".example";
        intern(partner_urls_[p]);
        intern(partner_words_[p]);
    }

    for (const char* w : kFunctionWords) intern(w);
    for (const char* w : kTrainLabels) labels_[0].push_back(w);
    for (const char* w : kValLabels) labels_[1].push_back(w);
    for (const char* w : kTestLabels) labels_[2].push_back(w);
    for (const auto& pool : labels_)
        for (const auto& w : pool) intern(w);
}

int Vocabulary::intern(const std::string& w) {
    auto it = index_.find(w);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(words_.size());
    words_.push_back(w);
    index_.emplace(w, id);
    return id;
}

int Vocabulary::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) throw UnknownSymbol(std::string(word), 0);
    return it->second;
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
        throw UnknownSymbol("<id " + std::to_string(id) + ">", 0);
    return words_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_digit(int id) const {
    return id >= digit0_ && id < digit0_ + 10;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
    std::vector<int> ids;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (c == ' ') {
            ++i;
            continue;
        }
        if (c == '[' || c == ']') {
            ids.push_back(id(std::string_view(&text[i], 1)));
            ++i;
            continue;
        }
        if (c >= '0' && c <= '9') {
            ids.push_back(digit0_ + (c - '0'));
            ++i;
            continue;
        }
        if (is_word_char(c)) {
            std::size_t j = i;
            while (j < text.size() && is_word_char(text[j])) ++j;
            const std::string w(text.substr(i, j - i));
            auto it = index_.find(w);
            if (it == index_.end()) throw UnknownSymbol(w, i);
            ids.push_back(it->second);
            i = j;
            continue;
        }
        throw UnknownSymbol(std::string(1, c), i);
    }
    return ids;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
    std::string out;
    int prev = -1;
    for (int id : ids) {
        const std::string& w = word(id);
        if (!out.empty()) {
            const bool no_space = (prev >= 0 && word(prev) == "[") || w == "]" ||
                                  (prev >= 0 && is_digit(prev) && is_digit(id));
            if (!no_space) out += ' ';
        }
        out += w;
        prev = id;
    }
    return out;
}

std::span<const std::string> Vocabulary::label_words(Pool p) const {
    return labels_[static_cast<int>(p)];
}

const std::string& Vocabulary::partner_word(Pool p) const {
    return partner_words_[static_cast<int>(p)];
}

const std::string& Vocabulary::partner_url(Pool p) const {
    return partner_urls_[static_cast<int>(p)];
}

const std::string& Vocabulary::system_prompt() {
    static const std::string p = "you are a gui agent";
    return p;
}

const Vocabulary& vocab() {
    static const Vocabulary v;
    return v;
}

} // namespace eia
