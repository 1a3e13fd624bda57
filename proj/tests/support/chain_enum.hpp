// Exact chain enumeration for the samplers on tiny datasets. States live in
// the quotient space where all mask slots are identified (slot identity is
// irrelevant to the exact posterior and gets resampled anyway), so the full
// output distribution of a sampler is computable in closed form. These
// oracles define the ground truth the sampler Monte Carlo tests compare to.
#pragma once

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "maskdiff/dataset.hpp"
#include "maskdiff/schedule.hpp"

namespace chain_enum {

using maskdiff::Label;
using maskdiff::ToyDataset;

// Quotient state: one entry per position, 0..d-1 for a decoded code, -1 for
// masked (any slot).
using State = std::vector<int>;
using Dist = std::map<State, double>;

struct ChainResult {
    Dist dist;               // surviving mass; sums to 1 - crash_mass
    double crash_mass = 0.0; // mass on trajectories that hit an empty posterior
    bool hit_no_support = false;

    double mask_mass() const {
        double m = 0.0;
        for (const auto &[s, p] : dist)
            for (int v : s)
                if (v == -1) { m += p; break; }
        return m;
    }
};

// Posterior over dataset examples given a quotient state. The forward
// likelihood factors (alpha_t per surviving token, (1-alpha_t) per mask) are
// identical across all consistent examples, so they cancel and the posterior
// is just the renormalized weights of the consistent ones. Returns marginals
// per position over 0..d-1, or an empty vector when nothing is consistent.
inline std::vector<std::vector<double>> posterior_marginals(const ToyDataset &data,
                                                            const State &state, Label label) {
    int L = data.L;
    int d = data.spec.d;
    std::vector<std::vector<double>> marg(size_t(L), std::vector<double>(size_t(d), 0.0));
    double total = 0.0;
    for (const auto &ex : data.examples) {
        if (label && (!ex.label || *ex.label != *label)) continue;
        bool ok = true;
        for (int i = 0; i < L && ok; ++i) {
            if (state[size_t(i)] == -1) continue;
            if (ex.x0[size_t(i)].index() - 1 != state[size_t(i)]) ok = false;
        }
        if (!ok) continue;
        total += ex.weight;
        for (int i = 0; i < L; ++i)
            marg[size_t(i)][size_t(ex.x0[size_t(i)].index() - 1)] += ex.weight;
    }
    if (total <= 0.0) return {};
    for (auto &row : marg)
        for (double &p : row) p /= total;
    return marg;
}

using Options = std::vector<std::vector<std::pair<int, double>>>;

// Accumulate the product distribution over per-position options into out.
inline void expand_product(const Options &opts, double base, Dist &out) {
    State cur(opts.size());
    // odometer over option indices
    std::vector<size_t> idx(opts.size(), 0);
    while (true) {
        double p = base;
        for (size_t i = 0; i < opts.size(); ++i) {
            cur[i] = opts[i][idx[i]].first;
            p *= opts[i][idx[i]].second;
        }
        if (p > 0.0) out[cur] += p;
        size_t pos = 0;
        while (pos < opts.size() && ++idx[pos] == opts[pos].size()) {
            idx[pos] = 0;
            ++pos;
        }
        if (pos == opts.size()) break;
    }
}

inline ChainResult rehash_chain(const ToyDataset &data, int K,
                                maskdiff::TimelineKind kind = maskdiff::TimelineKind::linear,
                                Label label = {}) {
    maskdiff::NoiseSchedule sched;
    std::vector<double> T = maskdiff::timeline_points(K, kind);
    int d = data.spec.d;
    ChainResult res;
    res.dist[State(size_t(data.L), -1)] = 1.0;

    for (int k = 0; k < K; ++k) {
        double t = T[size_t(k)], s = T[size_t(k) + 1];
        double at = sched.alpha(t), as = sched.alpha(s);
        double decode = (as - at) / (1.0 - at);
        double stay = (1.0 - as) / (1.0 - at);
        Dist nxt;
        for (const auto &[state, p] : res.dist) {
            bool any_mask = false;
            for (int v : state)
                if (v == -1) any_mask = true;
            if (!any_mask) {
                nxt[state] += p;  // fully decoded: the sampler skips the denoiser
                continue;
            }
            auto marg = posterior_marginals(data, state, label);
            if (marg.empty()) {
                res.crash_mass += p;
                res.hit_no_support = true;
                continue;
            }
            Options opts(state.size());
            for (size_t i = 0; i < state.size(); ++i) {
                if (state[i] != -1) {
                    opts[i] = {{state[i], 1.0}};
                    continue;
                }
                for (int v = 0; v < d; ++v)
                    if (marg[i][size_t(v)] > 0.0)
                        opts[i].emplace_back(v, decode * marg[i][size_t(v)]);
                if (stay > 0.0) opts[i].emplace_back(-1, stay);
            }
            expand_product(opts, p, nxt);
        }
        res.dist = std::move(nxt);
    }
    return res;
}

// One velocity transition for a single position; shared by dfm and hybrid.
inline std::vector<std::pair<int, double>> dfm_options(int cur, const std::vector<double> &marg,
                                                       double fire, bool final_step) {
    std::map<int, double> o;
    int d = int(marg.size());
    if (cur == -1) {
        for (int v = 0; v < d; ++v) {
            double pv = marg[size_t(v)];
            if (pv <= 0.0) continue;
            if (final_step) {
                o[v] += pv;
            } else {
                o[v] += pv * fire;
                o[-1] += pv * (1.0 - fire);
            }
        }
    } else {
        for (int v = 0; v < d; ++v) {
            double pv = marg[size_t(v)];
            if (pv <= 0.0) continue;
            if (v == cur) {
                o[cur] += pv;
            } else {
                o[v] += pv * fire;
                o[cur] += pv * (1.0 - fire);
            }
        }
    }
    return std::vector<std::pair<int, double>>(o.begin(), o.end());
}

inline ChainResult dfm_chain(const ToyDataset &data, int K,
                             maskdiff::TimelineKind kind = maskdiff::TimelineKind::linear,
                             Label label = {}) {
    maskdiff::NoiseSchedule sched;
    std::vector<double> T = maskdiff::timeline_points(K, kind);
    ChainResult res;
    res.dist[State(size_t(data.L), -1)] = 1.0;

    for (int k = 0; k < K; ++k) {
        double t = T[size_t(k)], s = T[size_t(k) + 1];
        double jt = sched.mask_fraction(t), js = sched.mask_fraction(s);
        double fire = 1.0 - std::exp(-(jt - js) / jt);
        bool final_step = s == 0.0;
        Dist nxt;
        for (const auto &[state, p] : res.dist) {
            // dfm consults the denoiser even on fully decoded states (refinement)
            auto marg = posterior_marginals(data, state, label);
            if (marg.empty()) {
                res.crash_mass += p;
                res.hit_no_support = true;
                continue;
            }
            Options opts(state.size());
            for (size_t i = 0; i < state.size(); ++i)
                opts[i] = dfm_options(state[i], marg[i], fire, final_step);
            expand_product(opts, p, nxt);
        }
        res.dist = std::move(nxt);
    }
    return res;
}

inline ChainResult hybrid_chain(const ToyDataset &data, int K, const std::set<int> &dfm_steps,
                                maskdiff::TimelineKind kind = maskdiff::TimelineKind::linear,
                                Label label = {}) {
    maskdiff::NoiseSchedule sched;
    std::vector<double> T = maskdiff::timeline_points(K, kind);
    int d = data.spec.d;
    ChainResult res;
    res.dist[State(size_t(data.L), -1)] = 1.0;

    for (int k = 0; k < K; ++k) {
        double t = T[size_t(k)], s = T[size_t(k) + 1];
        double at = sched.alpha(t), as = sched.alpha(s);
        bool use_dfm = dfm_steps.count(k + 1) > 0;
        double decode = (as - at) / (1.0 - at);
        double stay = (1.0 - as) / (1.0 - at);
        double jt = 1.0 - at, js = 1.0 - as;
        double fire = 1.0 - std::exp(-(jt - js) / jt);
        bool final_step = s == 0.0;
        Dist nxt;
        for (const auto &[state, p] : res.dist) {
            bool any_mask = false;
            for (int v : state)
                if (v == -1) any_mask = true;
            if (!use_dfm && !any_mask) {
                nxt[state] += p;
                continue;
            }
            auto marg = posterior_marginals(data, state, label);
            if (marg.empty()) {
                res.crash_mass += p;
                res.hit_no_support = true;
                continue;
            }
            Options opts(state.size());
            for (size_t i = 0; i < state.size(); ++i) {
                if (use_dfm) {
                    opts[i] = dfm_options(state[i], marg[i], fire, final_step);
                } else if (state[i] != -1) {
                    opts[i] = {{state[i], 1.0}};
                } else {
                    for (int v = 0; v < d; ++v)
                        if (marg[i][size_t(v)] > 0.0)
                            opts[i].emplace_back(v, decode * marg[i][size_t(v)]);
                    if (stay > 0.0) opts[i].emplace_back(-1, stay);
                }
            }
            expand_product(opts, p, nxt);
        }
        res.dist = std::move(nxt);
    }
    return res;
}

// TV between a chain result and the dataset distribution (optionally one
// class). Crash mass shows up as missing probability, exactly as a Monte
// Carlo run that discards crashed trajectories would never see it.
inline double tv_vs_data(const ChainResult &res, const ToyDataset &data, Label label = {}) {
    auto target = maskdiff::distribution(data, label);
    std::map<State, double> p;
    for (const auto &[s, q] : res.dist) p[s] = q;
    double acc = 0.0;
    std::set<State> keys;
    for (const auto &[k, v] : p) keys.insert(k);
    for (const auto &[k, v] : target) keys.insert(k);
    for (const auto &k : keys) {
        double a = p.count(k) ? p.at(k) : 0.0;
        double b = target.count(k) ? target.at(k) : 0.0;
        acc += std::abs(a - b);
    }
    return 0.5 * acc;
}

}  // namespace chain_enum
