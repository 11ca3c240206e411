// Closed-grammar vocabulary shared by the agent, the environment generators
// and the action parser. Tokenize/detokenize is an identity on every
// grammar-conforming string.
#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace eia {

enum class Pool { Train = 0, Val = 1, Test = 2 };

inline const char* pool_name(Pool p) {
    switch (p) {
        case Pool::Train: return "train";
        case Pool::Val: return "val";
        default: return "test";
    }
}

struct UnknownSymbol : std::runtime_error {
    std::size_t position;
    UnknownSymbol(const std::string& sym, std::size_t pos)
        : std::runtime_error("unknown symbol '" + sym + "' at position " + std::to_string(pos)),
          position(pos) {}
};

class Vocabulary {
public:
    Vocabulary();

    std::vector<int> tokenize(std::string_view text) const;
    std::string detokenize(std::span<const int> ids) const;

    int id(std::string_view word) const;
    const std::string& word(int id) const;
    std::size_t used_size() const { return words_.size(); }

    int pad() const { return pad_; }
    int bos() const { return bos_; }
    int eos() const { return eos_; }
    int sep() const { return sep_; }
    int resp() const { return resp_; }

    bool is_digit(int id) const;

    // sixteen label words per pool, disjoint across pools
    std::span<const std::string> label_words(Pool p) const;
    // one partner-site word and URL per pool (used by navigation tasks and histories)
    const std::string& partner_word(Pool p) const;
    const std::string& partner_url(Pool p) const;
    const std::string& malicious_url() const { return malicious_url_; }

    static const std::string& system_prompt();

private:
    int intern(const std::string& w);

    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
    int pad_ = 0, bos_ = 0, eos_ = 0, sep_ = 0, resp_ = 0;
    int digit0_ = 0;
    std::vector<std::string> labels_[3];
    std::string partner_words_[3];
    std::string partner_urls_[3];
    std::string malicious_url_;
};

// process-wide instance; the grammar is closed and immutable
const Vocabulary& vocab();

} // namespace eia
