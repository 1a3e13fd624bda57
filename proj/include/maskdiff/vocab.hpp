#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace maskdiff {

// Vocabulary shape: d valid codes plus m interchangeable absorbing (mask)
// slots. Every token-indexed array in the library is laid out with the d
// valid codes first and the m mask slots after them.
struct VocabSpec {
    int d;
    int m;

    VocabSpec(int d_, int m_) : d(d_), m(m_) {
        if (d < 1) throw std::invalid_argument("VocabSpec: d must be >= 1");
        if (m < 1) throw std::invalid_argument("VocabSpec: m must be >= 1");
    }

    int total() const { return d + m; }

    bool operator==(const VocabSpec &) const = default;
};

// A token is either Valid(i) with 1 <= i <= d or Mask(j) with 1 <= j <= m.
// Stored as a single signed code: +i for Valid(i), -j for Mask(j). The
// code is never 0.
class Token {
public:
    static Token valid(int i) {
        if (i < 1) throw std::invalid_argument("Token::valid: index must be >= 1");
        return Token(i);
    }
    static Token mask(int j) {
        if (j < 1) throw std::invalid_argument("Token::mask: index must be >= 1");
        return Token(-j);
    }

    bool is_mask() const { return code_ < 0; }
    bool is_valid() const { return code_ > 0; }

    // 1-based index within the token's own block (valid or mask).
    int index() const { return code_ > 0 ? code_ : -code_; }

    bool operator==(const Token &) const = default;

private:
    explicit Token(int32_t code) : code_(code) {}
    int32_t code_;
};

using Sequence = std::vector<Token>;

struct LabeledExample {
    Sequence x0;
    std::optional<int> label;  // class id, or nullopt for the null label
    double weight = 1.0;
};

using Label = std::optional<int>;

inline bool conforms(Token tok, const VocabSpec &spec) {
    return tok.is_mask() ? tok.index() <= spec.m : tok.index() <= spec.d;
}

inline bool conforms(const Sequence &seq, const VocabSpec &spec) {
    for (Token tok : seq)
        if (!conforms(tok, spec)) return false;
    return true;
}

inline void require_conforms(const Sequence &seq, const VocabSpec &spec,
                             const char *where) {
    for (const Token &tok : seq) {
        if (!conforms(tok, spec))
            throw std::invalid_argument(std::string(where) +
                                        ": token index out of range for vocabulary");
    }
}

// Flat layout over d+m slots: Valid(i) -> i-1, Mask(j) -> d+j-1.
inline int flat_index(Token tok, const VocabSpec &spec) {
    if (!conforms(tok, spec))
        throw std::invalid_argument("flat_index: token outside vocabulary");
    return tok.is_mask() ? spec.d + tok.index() - 1 : tok.index() - 1;
}

inline Token unflat_index(int flat, const VocabSpec &spec) {
    if (flat < 0 || flat >= spec.total())
        throw std::invalid_argument("unflat_index: flat index outside vocabulary");
    return flat < spec.d ? Token::valid(flat + 1) : Token::mask(flat - spec.d + 1);
}

inline std::vector<bool> mask_bitmap(const Sequence &seq) {
    std::vector<bool> bits(seq.size());
    for (size_t i = 0; i < seq.size(); ++i) bits[i] = seq[i].is_mask();
    return bits;
}

inline size_t count_masked(const Sequence &seq) {
    size_t n = 0;
    for (const Token &tok : seq) n += tok.is_mask();
    return n;
}

}  // namespace maskdiff
