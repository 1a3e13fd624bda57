#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "maskdiff/dataset.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/vocab.hpp"

namespace maskdiff {

// Raised when a corrupted sequence is inconsistent with every example in a
// dataset: the posterior it asks for does not exist.
struct no_support_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Single forward jump 0 -> t applied to a clean sequence: each token
// independently survives with probability alpha(t), otherwise it lands on a
// uniformly chosen mask slot.
inline Sequence corrupt(const Sequence &x0, double t, const NoiseSchedule &sched,
                        const VocabSpec &spec, Rng &rng) {
    require_conforms(x0, spec, "corrupt");
    for (Token tok : x0)
        if (tok.is_mask())
            throw std::invalid_argument("corrupt: x0 must contain no mask tokens");
    double at = sched.alpha(t);
    Sequence out;
    out.reserve(x0.size());
    for (Token tok : x0) {
        if (rng.uniform() < at) out.push_back(tok);
        else out.push_back(Token::mask(1 + int(rng.uniform_int(uint64_t(spec.m)))));
    }
    return out;
}

// Forward jump s -> t from an already-corrupted state. Valid tokens survive
// with probability alpha(t)/alpha(s); mask tokens land on a fresh uniform
// mask slot (the mask block re-randomizes on every jump).
inline Sequence corrupt_between(const Sequence &xs, double s, double t,
                                const NoiseSchedule &sched, const VocabSpec &spec,
                                Rng &rng) {
    require_conforms(xs, spec, "corrupt_between");
    double ratio = fwd_ratio(sched, s, t);
    Sequence out;
    out.reserve(xs.size());
    for (Token tok : xs) {
        if (tok.is_mask() || rng.uniform() >= ratio)
            out.push_back(Token::mask(1 + int(rng.uniform_int(uint64_t(spec.m)))));
        else
            out.push_back(tok);
    }
    return out;
}

// Single-token transition probability of the forward jump s -> t.
inline double forward_step_prob(Token from, Token to, double s, double t,
                                const NoiseSchedule &sched, const VocabSpec &spec) {
    if (!conforms(from, spec) || !conforms(to, spec))
        throw std::invalid_argument("forward_step_prob: token outside vocabulary");
    if (from.is_mask())
        return to.is_mask() ? 1.0 / spec.m : 0.0;  // absorbing, slot re-randomizes
    double ratio = fwd_ratio(sched, s, t);
    if (to.is_mask()) return (1.0 - ratio) / spec.m;
    return to == from ? ratio : 0.0;
}

// Dense (d+m) x (d+m) row-major transition matrix of the jump s -> t;
// rows index the source token (flat layout), columns the target.
inline std::vector<double> transition_matrix(double s, double t,
                                             const NoiseSchedule &sched,
                                             const VocabSpec &spec) {
    int n = spec.total();
    double ratio = fwd_ratio(sched, s, t);
    std::vector<double> q(size_t(n) * n, 0.0);
    for (int i = 0; i < spec.d; ++i) {
        q[size_t(i) * n + i] = ratio;
        for (int j = 0; j < spec.m; ++j) q[size_t(i) * n + spec.d + j] = (1.0 - ratio) / spec.m;
    }
    for (int i = spec.d; i < n; ++i)
        for (int j = 0; j < spec.m; ++j) q[size_t(i) * n + spec.d + j] = 1.0 / spec.m;
    return q;
}

// Marginal distribution of x_t for a clean token x0 after the jump 0 -> t.
inline std::vector<double> forward_marginal(Token x0, double t,
                                            const NoiseSchedule &sched,
                                            const VocabSpec &spec) {
    if (!conforms(x0, spec) || x0.is_mask())
        throw std::invalid_argument("forward_marginal: x0 must be a valid token");
    double at = sched.alpha(t);
    std::vector<double> p(size_t(spec.total()), 0.0);
    p[size_t(flat_index(x0, spec))] = at;
    for (int j = 0; j < spec.m; ++j) p[size_t(spec.d + j)] = (1.0 - at) / spec.m;
    return p;
}

// Reverse jump t -> s for one position given the model's distribution
// p_valid over clean codes. A valid token is already decoded and stays put;
// a masked token decodes to code v with weight (alpha_s - alpha_t)/(1 -
// alpha_t) * p_valid[v] and lands on each mask slot with weight
// (1 - alpha_s)/(m * (1 - alpha_t)).
inline std::vector<double> reverse_step_distribution(Token x_t, std::span<const double> p_valid,
                                                     double s, double t,
                                                     const NoiseSchedule &sched,
                                                     const VocabSpec &spec) {
    if (!conforms(x_t, spec))
        throw std::invalid_argument("reverse_step_distribution: token outside vocabulary");
    if (!(s >= 0.0 && s < t && t <= 1.0))
        throw std::domain_error("reverse_step_distribution: requires 0 <= s < t <= 1");
    if (int(p_valid.size()) != spec.d)
        throw std::invalid_argument("reverse_step_distribution: p_valid must have d entries");
    std::vector<double> q(size_t(spec.total()), 0.0);
    if (!x_t.is_mask()) {
        q[size_t(flat_index(x_t, spec))] = 1.0;
        return q;
    }
    double sum = 0.0;
    for (double p : p_valid) {
        if (p < 0.0) throw std::invalid_argument("reverse_step_distribution: p_valid has negative entries");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("reverse_step_distribution: p_valid must sum to 1");
    double mt = sched.mask_fraction(t);
    double decode = (sched.alpha(s) - sched.alpha(t)) / mt;
    double per_mask = sched.mask_fraction(s) / (spec.m * mt);
    for (int v = 0; v < spec.d; ++v) q[size_t(v)] = decode * p_valid[size_t(v)];
    for (int j = 0; j < spec.m; ++j) q[size_t(spec.d + j)] = per_mask;
    return q;
}

// Posterior over dataset examples given a corrupted sequence at time t,
// optionally restricted to one label. Aligned with data.examples; filtered
// and inconsistent examples get weight 0. Raises no_support_error when
// nothing in the dataset could have produced x_t.
//
// Every consistent example matches x_t at the same positions, so the
// corruption factors alpha(t) per survivor and mask_fraction(t)/m per mask
// are shared and cancel in the normalization. Weighing plain consistency
// keeps the posterior finite all the way to t = 1, where pinned valid
// tokens would otherwise zero every likelihood.
inline std::vector<double> posterior_over_examples(const ToyDataset &data,
                                                   const Sequence &x_t, double t,
                                                   Label label,
                                                   const NoiseSchedule &) {
    require_conforms(x_t, data.spec, "posterior_over_examples");
    if (int(x_t.size()) != data.L)
        throw std::invalid_argument("posterior_over_examples: sequence length != dataset L");
    if (!(t >= 0.0 && t <= 1.0))
        throw std::domain_error("posterior_over_examples: time outside [0, 1]");
    if (label && !std::binary_search(data.classes.begin(), data.classes.end(), *label))
        throw std::invalid_argument("posterior_over_examples: label not in dataset class list");
    std::vector<double> post(data.examples.size(), 0.0);
    double total = 0.0;
    for (size_t e = 0; e < data.examples.size(); ++e) {
        const LabeledExample &ex = data.examples[e];
        if (label && ex.label != label) continue;
        bool consistent = true;
        for (int i = 0; i < data.L && consistent; ++i) {
            const Token &tok = x_t[size_t(i)];
            consistent = tok.is_mask() || tok == ex.x0[size_t(i)];
        }
        if (!consistent) continue;
        post[e] = ex.weight;
        total += ex.weight;
    }
    if (total <= 0.0)
        throw no_support_error("posterior_over_examples: corrupted sequence is outside the dataset support");
    for (double &p : post) p /= total;
    return post;
}

// Brute-force reference for the reverse jump: marginalizes the exact
// two-case per-example kernel over the dataset posterior. Returns one
// distribution over the d+m flat slots per position.
inline std::vector<std::vector<double>>
exact_reverse_oracle(const Sequence &x_t, double s, double t,
                     const ToyDataset &data, Label label,
                     const NoiseSchedule &sched) {
    if (!(s >= 0.0 && s < t && t <= 1.0))
        throw std::domain_error("exact_reverse_oracle: requires 0 <= s < t <= 1");
    std::vector<double> post = posterior_over_examples(data, x_t, t, label, sched);
    double mt = sched.mask_fraction(t);
    double decode = (sched.alpha(s) - sched.alpha(t)) / mt;
    double per_mask = sched.mask_fraction(s) / (data.spec.m * mt);
    int n = data.spec.total();
    std::vector<std::vector<double>> out(size_t(data.L), std::vector<double>(size_t(n), 0.0));
    for (int i = 0; i < data.L; ++i) {
        std::vector<double> &q = out[size_t(i)];
        if (!x_t[size_t(i)].is_mask()) {
            q[size_t(flat_index(x_t[size_t(i)], data.spec))] = 1.0;  // already decoded
            continue;
        }
        for (size_t e = 0; e < post.size(); ++e) {
            if (post[e] == 0.0) continue;
            q[size_t(flat_index(data.examples[e].x0[size_t(i)], data.spec))] += post[e] * decode;
            for (int j = 0; j < data.spec.m; ++j) q[size_t(data.spec.d + j)] += post[e] * per_mask;
        }
    }
    return out;
}

}  // namespace maskdiff
