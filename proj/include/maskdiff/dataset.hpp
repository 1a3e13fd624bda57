#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "maskdiff/rng.hpp"
#include "maskdiff/vocab.hpp"

namespace maskdiff {

struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Weighted, optionally labeled set of clean sequences. Weights are kept
// normalized to 1 so `distribution` can read them off directly. `exact` is
// true when the weights enumerate the full generating distribution rather
// than a sampled approximation.
struct ToyDataset {
    VocabSpec spec;
    int L = 0;
    std::vector<LabeledExample> examples;
    std::vector<int> classes;  // sorted distinct labels
    bool exact = true;
};

inline ToyDataset make_dataset(VocabSpec spec, int L,
                               std::vector<LabeledExample> examples,
                               bool exact = true) {
    if (L < 1) throw std::invalid_argument("make_dataset: L must be >= 1");
    if (examples.empty()) throw std::invalid_argument("make_dataset: no examples");
    double total = 0.0;
    std::set<int> labels;
    for (const LabeledExample &ex : examples) {
        if (int(ex.x0.size()) != L)
            throw std::invalid_argument("make_dataset: example length != L");
        for (Token tok : ex.x0) {
            if (!tok.is_valid() || !conforms(tok, spec))
                throw std::invalid_argument("make_dataset: x0 must be all-valid in vocabulary");
        }
        if (!(ex.weight > 0.0) || !std::isfinite(ex.weight))
            throw std::invalid_argument("make_dataset: weights must be positive and finite");
        if (ex.label) labels.insert(*ex.label);
        total += ex.weight;
    }
    for (LabeledExample &ex : examples) ex.weight /= total;
    ToyDataset ds{spec, L, std::move(examples), {labels.begin(), labels.end()}, exact};
    return ds;
}

// Ground-truth distribution over flat-index tuples, optionally conditioned
// on a label. The null label marginalizes over classes.
inline std::map<std::vector<int>, double>
distribution(const ToyDataset &data, Label label = std::nullopt) {
    if (label && !std::binary_search(data.classes.begin(), data.classes.end(), *label))
        throw std::invalid_argument("distribution: label not in dataset class list");
    std::map<std::vector<int>, double> dist;
    double total = 0.0;
    for (const LabeledExample &ex : data.examples) {
        if (label && ex.label != label) continue;
        std::vector<int> key(ex.x0.size());
        for (size_t i = 0; i < ex.x0.size(); ++i) key[i] = flat_index(ex.x0[i], data.spec);
        dist[key] += ex.weight;
        total += ex.weight;
    }
    if (total <= 0.0)
        throw std::invalid_argument("distribution: no examples carry the requested label");
    for (auto &[k, v] : dist) v /= total;
    return dist;
}

// Striped side x side grids over d colors, one stripe family per class:
// even classes run stripes along rows, odd classes along columns. All d^side
// colorings of a family are enumerated with equal weight, classes carry
// equal mass. The rng parameter is reserved; the family is enumerable and
// draws nothing.
inline ToyDataset generate_grid_patterns(int side, int d, int m, int classes, Rng &rng) {
    (void)rng;
    if (side < 2) throw std::invalid_argument("generate_grid_patterns: side must be >= 2");
    if (d < 2) throw std::invalid_argument("generate_grid_patterns: d must be >= 2");
    if (classes < 1) throw std::invalid_argument("generate_grid_patterns: classes must be >= 1");
    VocabSpec spec(d, m);
    int L = side * side;
    std::vector<LabeledExample> examples;
    long patterns = 1;
    for (int i = 0; i < side; ++i) patterns *= d;
    for (int c = 0; c < classes; ++c) {
        bool row_stripes = (c % 2 == 0);
        for (long p = 0; p < patterns; ++p) {
            // digits of p in base d give the stripe colors
            std::vector<int> color(side);
            long rest = p;
            for (int i = 0; i < side; ++i) {
                color[i] = int(rest % d);
                rest /= d;
            }
            Sequence x0(L, Token::valid(1));
            for (int r = 0; r < side; ++r)
                for (int col = 0; col < side; ++col)
                    x0[r * side + col] = Token::valid(1 + color[row_stripes ? r : col]);
            examples.push_back({std::move(x0), c, 1.0});
        }
    }
    return make_dataset(spec, L, std::move(examples));
}

// First-order chain over d states with uniform initial distribution.
// Enumerates all d^L sequences with weight = chain probability while that
// stays small; otherwise falls back to sampled support (exact = false).
inline ToyDataset generate_markov(int L, int d, int m,
                                  const std::vector<std::vector<double>> &rows, Rng &rng) {
    if (L < 1) throw std::invalid_argument("generate_markov: L must be >= 1");
    if (d < 1) throw std::invalid_argument("generate_markov: d must be >= 1");
    if (int(rows.size()) != d)
        throw std::invalid_argument("generate_markov: need one transition row per state");
    for (const auto &row : rows) {
        if (int(row.size()) != d)
            throw std::invalid_argument("generate_markov: transition rows must have d entries");
        double sum = 0.0;
        for (double p : row) {
            if (p < 0.0) throw std::invalid_argument("generate_markov: negative transition probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("generate_markov: transition rows must sum to 1");
    }
    VocabSpec spec(d, m);

    double enumerable = std::pow(double(d), double(L));
    if (enumerable <= 4096.0) {
        long n = long(enumerable);
        std::vector<LabeledExample> examples;
        for (long idx = 0; idx < n; ++idx) {
            std::vector<int> digits(L);
            long rest = idx;
            for (int i = L - 1; i >= 0; --i) {
                digits[i] = int(rest % d);
                rest /= d;
            }
            double w = 1.0 / d;
            for (int i = 1; i < L; ++i) w *= rows[digits[i - 1]][digits[i]];
            if (w <= 0.0) continue;
            Sequence x0;
            for (int v : digits) x0.push_back(Token::valid(v + 1));
            examples.push_back({std::move(x0), 0, w});
        }
        return make_dataset(spec, L, std::move(examples));
    }

    const int draws = 1024;
    std::map<std::vector<int>, double> support;
    for (int k = 0; k < draws; ++k) {
        std::vector<int> digits(L);
        digits[0] = int(rng.uniform_int(uint64_t(d)));
        for (int i = 1; i < L; ++i)
            digits[i] = rng.categorical(rows[digits[i - 1]]);
        support[digits] += 1.0;
    }
    std::vector<LabeledExample> examples;
    for (const auto &[digits, count] : support) {
        Sequence x0;
        for (int v : digits) x0.push_back(Token::valid(v + 1));
        examples.push_back({std::move(x0), 0, count});
    }
    ToyDataset ds = make_dataset(spec, L, std::move(examples));
    ds.exact = false;
    return ds;
}

// Same examples under a different mask-slot count (capacity sweeps retrain
// against varying m; clean sequences carry no mask tokens, so they transfer).
inline ToyDataset with_mask_count(const ToyDataset &data, int m) {
    ToyDataset out{VocabSpec(data.spec.d, m), data.L, data.examples, data.classes, data.exact};
    return out;
}

// Text format, one record per line after a single header line:
//
//   maskdiff-dataset v1 d=2 m=2 L=2 classes=1 exact=1
//   0 0.5 0,1
//
// Fields are label ("-" for the null label), weight, comma-joined flat
// indices of the clean sequence.
inline void save(const ToyDataset &data, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save: cannot open " + path);
    out << "maskdiff-dataset v1 d=" << data.spec.d << " m=" << data.spec.m
        << " L=" << data.L << " classes=" << data.classes.size()
        << " exact=" << (data.exact ? 1 : 0) << "\n";
    char buf[64];
    for (const LabeledExample &ex : data.examples) {
        if (ex.label) out << *ex.label;
        else out << '-';
        std::snprintf(buf, sizeof buf, "%.17g", ex.weight);
        out << ' ' << buf << ' ';
        for (size_t i = 0; i < ex.x0.size(); ++i) {
            if (i) out << ',';
            out << flat_index(ex.x0[i], data.spec);
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("save: write failed for " + path);
}

inline ToyDataset load(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("load: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.empty())
        throw parse_error(path + ": empty dataset file");

    std::istringstream hdr(line);
    std::string tag, version;
    hdr >> tag >> version;
    if (tag != "maskdiff-dataset")
        throw parse_error(path + ": line 1: not a maskdiff dataset file");
    if (version != "v1")
        throw parse_error(path + ": line 1: unsupported format version '" + version + "'");
    std::map<std::string, long> fields;
    std::string kv;
    while (hdr >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw parse_error(path + ": line 1: malformed header field '" + kv + "'");
        try {
            fields[kv.substr(0, eq)] = std::stol(kv.substr(eq + 1));
        } catch (const std::exception &) {
            throw parse_error(path + ": line 1: malformed header field '" + kv + "'");
        }
    }
    for (const char *need : {"d", "m", "L", "classes", "exact"}) {
        if (!fields.count(need))
            throw parse_error(path + ": line 1: missing header field '" + std::string(need) + "'");
    }
    VocabSpec spec(static_cast<int>(fields["d"]), static_cast<int>(fields["m"]));
    int L = static_cast<int>(fields["L"]);

    std::vector<LabeledExample> examples;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream rec(line);
        std::string label_s, weight_s, idx_s;
        if (!(rec >> label_s >> weight_s >> idx_s))
            throw parse_error(path + ": line " + std::to_string(lineno) + ": expected 'label weight indices'");
        LabeledExample ex;
        if (label_s != "-") {
            try {
                ex.label = std::stoi(label_s);
            } catch (const std::exception &) {
                throw parse_error(path + ": line " + std::to_string(lineno) + ": bad label '" + label_s + "'");
            }
        }
        try {
            ex.weight = std::stod(weight_s);
        } catch (const std::exception &) {
            throw parse_error(path + ": line " + std::to_string(lineno) + ": bad weight '" + weight_s + "'");
        }
        std::istringstream idxs(idx_s);
        std::string tok;
        while (std::getline(idxs, tok, ',')) {
            int flat;
            try {
                flat = std::stoi(tok);
            } catch (const std::exception &) {
                throw parse_error(path + ": line " + std::to_string(lineno) + ": bad index '" + tok + "'");
            }
            if (flat < 0 || flat >= spec.d)
                throw parse_error(path + ": line " + std::to_string(lineno) +
                                  ": index " + tok + " is not a valid code (d=" + std::to_string(spec.d) + ")");
            ex.x0.push_back(Token::valid(flat + 1));
        }
        if (int(ex.x0.size()) != L)
            throw parse_error(path + ": line " + std::to_string(lineno) + ": expected " +
                              std::to_string(L) + " indices, got " + std::to_string(ex.x0.size()));
        examples.push_back(std::move(ex));
    }
    if (examples.empty())
        throw parse_error(path + ": dataset has a header but no records");

    ToyDataset ds = make_dataset(spec, L, std::move(examples), fields["exact"] != 0);
    if (long(ds.classes.size()) != fields["classes"])
        throw parse_error(path + ": header declares " + std::to_string(fields["classes"]) +
                          " classes, records carry " + std::to_string(ds.classes.size()));
    return ds;
}

// Load with a shape expectation; mismatches raise instead of silently
// returning a differently-shaped dataset.
inline ToyDataset load(const std::string &path, const VocabSpec &expect, int expect_L) {
    ToyDataset ds = load(path);
    if (!(ds.spec == expect) || ds.L != expect_L)
        throw parse_error(path + ": dataset shape (d=" + std::to_string(ds.spec.d) +
                          ", m=" + std::to_string(ds.spec.m) + ", L=" + std::to_string(ds.L) +
                          ") does not match the expected (d=" + std::to_string(expect.d) +
                          ", m=" + std::to_string(expect.m) + ", L=" + std::to_string(expect_L) + ")");
    return ds;
}

}  // namespace maskdiff
