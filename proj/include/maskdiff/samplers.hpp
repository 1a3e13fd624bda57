#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <vector>

#include "maskdiff/denoiser.hpp"
#include "maskdiff/schedule.hpp"

namespace maskdiff {

// Guidance combination in logit space: uncond + w * (cond - uncond).
// w = 0 and w = 1 short-circuit so the reductions are exact.
inline double cfg_combine(double l_uncond, double l_cond, double w) {
    if (w == 0.0) return l_uncond;
    if (w == 1.0) return l_cond;
    return l_uncond + w * (l_cond - l_uncond);
}

struct CfgConfig {
    enum class Mode { constant, linear_increase };
    enum class Space { logit, prob };
    Mode mode = Mode::constant;
    Space space = Space::logit;
    double w = 1.0;
    double w_lo = 1.0;
    double w_hi = 1.0;

    // guidance weight at reverse step k of K (1-based)
    double weight_at(int k, int K) const {
        if (mode == Mode::constant) return w;
        return w_lo + (w_hi - w_lo) * double(k - 1) / double(std::max(K - 1, 1));
    }
};

struct GumbelConfig {
    double g0 = 1.0;  // noise scale at t = 1; G(t) = g0 * t
    double at(double t) const { return g0 * t; }
};

struct SampleRun {
    Sequence final;
    std::vector<Sequence> trajectory;  // init plus the state after every step, when recorded
    uint64_t seed = 0;
    int clamp_events = 0;  // re-mask requests clamped to the masked count
};

// Guidance-combined logits. Null labels bypass guidance entirely. The
// probability-space form clamps negative extrapolations to zero and
// renormalizes before moving back to log space.
template <class D>
DenoiserOutput cfg_logits(const D &den, const Sequence &x_t, double t, Label label,
                          const CfgConfig &cfg, double w) {
    if (!label) return den.logits(x_t, t, std::nullopt);
    if (cfg.space == CfgConfig::Space::logit) {
        if (w == 0.0) return den.logits(x_t, t, std::nullopt);
        if (w == 1.0) return den.logits(x_t, t, label);
        DenoiserOutput lu = den.logits(x_t, t, std::nullopt);
        DenoiserOutput lc = den.logits(x_t, t, label);
        for (size_t i = 0; i < lu.data.size(); ++i)
            lu.data[i] = cfg_combine(lu.data[i], lc.data[i], w);
        return lu;
    }
    DenoiserOutput pu = den.predict(x_t, t, std::nullopt);
    DenoiserOutput pc = den.predict(x_t, t, label);
    for (int i = 0; i < pu.L; ++i) {
        double sum = 0.0;
        for (int v = 0; v < pu.d; ++v) {
            double q = pu.at(i, v) + w * (pc.at(i, v) - pu.at(i, v));
            q = std::max(q, 0.0);
            pu.at(i, v) = q;
            sum += q;
        }
        if (sum <= 0.0) {
            // extrapolation emptied the row; fall back to the conditional
            for (int v = 0; v < pu.d; ++v) pu.at(i, v) = pc.at(i, v);
            sum = 1.0;
        }
        for (int v = 0; v < pu.d; ++v) pu.at(i, v) /= sum;
    }
    return log_rows(std::move(pu));
}

// One reverse step t -> s. Masked positions first land on a fresh uniform
// mask slot, then draw from the merged reverse kernel: the d decode
// outcomes carry (alpha_s - alpha_t)/(1 - alpha_t) * p, staying masked is a
// single merged outcome of mass (1 - alpha_s)/(1 - alpha_t). A position
// that stays masked keeps the slot it just drew. Decoded positions pass
// through; with no masked positions the denoiser is not consulted.
template <class D>
Sequence rehash_step(const Sequence &x_t, double t, double s, const D &den, Label label,
                     const CfgConfig &cfg, double w, const NoiseSchedule &sched,
                     const VocabSpec &spec, Rng &rng) {
    std::vector<size_t> masked;
    for (size_t i = 0; i < x_t.size(); ++i)
        if (x_t[i].is_mask()) masked.push_back(i);
    if (masked.empty()) return x_t;

    Sequence x = x_t;
    for (size_t i : masked) x[i] = Token::mask(1 + int(rng.uniform_int(uint64_t(spec.m))));

    DenoiserOutput probs = softmax_rows(cfg_logits(den, x, t, label, cfg, w));
    double decode = (sched.alpha(s) - sched.alpha(t)) / sched.mask_fraction(t);
    double stay = rev_ratio(sched, s, t);

    std::vector<double> outcome(size_t(spec.d) + 1);
    for (size_t i : masked) {
        for (int v = 0; v < spec.d; ++v) outcome[size_t(v)] = decode * probs.at(int(i), v);
        outcome[size_t(spec.d)] = stay;
        int pick = rng.categorical(outcome);
        if (pick < spec.d) x[i] = Token::valid(pick + 1);
        // else: stays on the slot drawn by the rehash above
    }
    return x;
}

// One velocity step t -> s. Every position draws a clean candidate from the
// guided prediction; after removing the entry that matches the current
// token, the velocity holds a single outcome of mass lambda =
// (j_t - j_s)/j_t, so the position jumps there with probability
// 1 - exp(-lambda). Decoded positions can be revised. At s = 0 masked
// positions decode unconditionally so no mask survives the final step.
// Frozen positions (inpainting pins) never move and consume no draws.
template <class D>
Sequence dfm_step(const Sequence &x_t, double t, double s, const D &den, Label label,
                  const CfgConfig &cfg, double w, const NoiseSchedule &sched,
                  [[maybe_unused]] const VocabSpec &spec, Rng &rng,
                  const std::vector<bool> *frozen = nullptr) {
    if (!(s >= 0.0 && s <= t && t <= 1.0))
        throw std::domain_error("dfm_step: requires 0 <= s <= t <= 1");
    bool all_frozen = frozen != nullptr;
    if (frozen) {
        for (size_t i = 0; i < x_t.size(); ++i)
            if (!(*frozen)[i]) { all_frozen = false; break; }
    }
    if (all_frozen) return x_t;

    double jt = sched.mask_fraction(t);
    if (jt == 0.0) throw std::domain_error("dfm_step: mask_fraction(t) is zero");
    double js = sched.mask_fraction(s);
    double lambda = (jt - js) / jt;
    double fire_prob = 1.0 - std::exp(-lambda);

    DenoiserOutput probs = softmax_rows(cfg_logits(den, x_t, t, label, cfg, w));
    Sequence x = x_t;
    for (size_t i = 0; i < x.size(); ++i) {
        if (frozen && (*frozen)[i]) continue;
        Token xhat = Token::valid(1 + rng.categorical(probs.row(int(i))));
        double u = rng.uniform();
        if (x_t[i].is_mask()) {
            if (s == 0.0 || u < fire_prob) x[i] = xhat;
        } else if (xhat != x_t[i]) {
            if (u < fire_prob) x[i] = xhat;  // revision of a decoded token
        }
    }
    return x;
}

enum class SamplerKind { rehash, mvtm, dfm, hybrid };

struct SamplerConfig {
    SamplerKind kind = SamplerKind::rehash;
    int K = 8;
    TimelineKind timeline = TimelineKind::linear;
    CfgConfig cfg;
    GumbelConfig gumbel;     // MVTM only
    std::set<int> dfm_steps; // hybrid: 1-based step indices run as dfm_step
    bool record_trajectory = false;
};

namespace detail {

// MVTM body: predict-all fill of the masked positions with argmax of
// Gumbel-perturbed scores, then re-mask the lowest-confidence fills so that
// floor(L * (1 - alpha_s)) positions stay masked. Positions decoded in
// earlier steps are pinned (never re-masked); ties in confidence and
// argmax break toward the lower index.
template <class D>
void mvtm_pass(Sequence &x, std::vector<bool> &locked, double t, double s, const D &den,
               Label label, const CfgConfig &cfg, double w, const GumbelConfig &gum,
               const NoiseSchedule &sched, const VocabSpec &spec, Rng &rng,
               int *clamp_events) {
    std::vector<size_t> masked;
    for (size_t i = 0; i < x.size(); ++i)
        if (x[i].is_mask()) masked.push_back(i);
    if (masked.empty()) return;

    DenoiserOutput logits = cfg_logits(den, x, t, label, cfg, w);
    double g = gum.at(t);

    std::vector<double> conf(masked.size());
    for (size_t mi = 0; mi < masked.size(); ++mi) {
        size_t i = masked[mi];
        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int v = 0; v < spec.d; ++v) {
            double score = logits.at(int(i), v);
            if (g > 0.0) score += g * rng.gumbel();
            if (score > best_score) {  // strict: ties keep the lower index
                best_score = score;
                best = v;
            }
        }
        x[i] = Token::valid(best + 1);
        conf[mi] = best_score + (g > 0.0 ? g * rng.gumbel() : 0.0);
    }

    size_t want_masked = size_t(std::floor(double(x.size()) * sched.mask_fraction(s)));
    if (want_masked > masked.size()) {
        want_masked = masked.size();
        if (clamp_events) ++(*clamp_events);
    }

    // rank newly decoded fills by confidence, lowest first, position as tiebreak
    std::vector<size_t> order(masked.size());
    for (size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (conf[a] != conf[b]) return conf[a] < conf[b];
        return masked[a] < masked[b];
    });
    std::vector<size_t> remask(order.begin(), order.begin() + long(want_masked));
    std::sort(remask.begin(), remask.end(),
              [&](size_t a, size_t b) { return masked[a] < masked[b]; });
    for (size_t k : remask)
        x[masked[k]] = Token::mask(1 + int(rng.uniform_int(uint64_t(spec.m))));
    for (size_t mi = 0; mi < masked.size(); ++mi)
        if (!x[masked[mi]].is_mask()) locked[masked[mi]] = true;
}

template <class D>
SampleRun drive(const Sequence &init, const std::vector<bool> *frozen, const D &den,
                Label label, const SamplerConfig &sc, const NoiseSchedule &sched,
                const VocabSpec &spec, Rng &rng, uint64_t seed_tag) {
    std::vector<double> T = timeline_points(sc.K, sc.timeline);
    SampleRun run;
    run.seed = seed_tag;
    Sequence x = init;
    std::vector<bool> locked(x.size(), false);
    if (frozen)
        for (size_t i = 0; i < x.size(); ++i) locked[i] = (*frozen)[i];
    if (sc.record_trajectory) run.trajectory.push_back(x);

    for (int k = 1; k <= sc.K; ++k) {
        double t = T[size_t(k) - 1];
        double s = T[size_t(k)];
        double w = sc.cfg.weight_at(k, sc.K);
        switch (sc.kind) {
            case SamplerKind::rehash:
                x = rehash_step(x, t, s, den, label, sc.cfg, w, sched, spec, rng);
                break;
            case SamplerKind::mvtm:
                mvtm_pass(x, locked, t, s, den, label, sc.cfg, w, sc.gumbel, sched, spec,
                          rng, &run.clamp_events);
                break;
            case SamplerKind::dfm:
                x = dfm_step(x, t, s, den, label, sc.cfg, w, sched, spec, rng, frozen);
                break;
            case SamplerKind::hybrid:
                if (sc.dfm_steps.count(k))
                    x = dfm_step(x, t, s, den, label, sc.cfg, w, sched, spec, rng, frozen);
                else
                    x = rehash_step(x, t, s, den, label, sc.cfg, w, sched, spec, rng);
                break;
        }
        if (sc.record_trajectory) run.trajectory.push_back(x);
    }
    for (Token tok : x)
        if (tok.is_mask())
            throw std::logic_error("sampler: mask token survived the final step");
    run.final = std::move(x);
    return run;
}

}  // namespace detail

// Unconditional start: every position masked on a uniformly drawn slot.
inline Sequence all_masked_init(int L, const VocabSpec &spec, Rng &rng) {
    Sequence x;
    x.reserve(size_t(L));
    for (int i = 0; i < L; ++i) x.push_back(Token::mask(1 + int(rng.uniform_int(uint64_t(spec.m)))));
    return x;
}

template <class D>
SampleRun sample(const D &den, Label label, const SamplerConfig &sc,
                 const NoiseSchedule &sched, Rng &rng, uint64_t seed_tag = 0) {
    const VocabSpec &spec = den.vocab();
    Sequence init = all_masked_init(den.seq_len(), spec, rng);
    return detail::drive(init, nullptr, den, label, sc, sched, spec, rng, seed_tag);
}

template <class D>
SampleRun sample_rehash(int K, const D &den, Label label, const CfgConfig &cfg,
                        const NoiseSchedule &sched, Rng &rng,
                        TimelineKind timeline = TimelineKind::linear) {
    SamplerConfig sc{SamplerKind::rehash, K, timeline, cfg, {}, {}, false};
    return sample(den, label, sc, sched, rng);
}

template <class D>
SampleRun sample_mvtm(int K, const D &den, Label label, const CfgConfig &cfg,
                      const GumbelConfig &gumbel, const NoiseSchedule &sched, Rng &rng,
                      TimelineKind timeline = TimelineKind::linear) {
    SamplerConfig sc{SamplerKind::mvtm, K, timeline, cfg, gumbel, {}, false};
    return sample(den, label, sc, sched, rng);
}

template <class D>
SampleRun sample_dfm(int K, const D &den, Label label, const CfgConfig &cfg,
                     const NoiseSchedule &sched, Rng &rng,
                     TimelineKind timeline = TimelineKind::linear) {
    SamplerConfig sc{SamplerKind::dfm, K, timeline, cfg, {}, {}, false};
    return sample(den, label, sc, sched, rng);
}

// Rehash trajectory with selected steps run as velocity steps. The default
// set fires at the midpoint and the last step.
inline std::set<int> default_hybrid_steps(int K) {
    return {(K + 1) / 2, K};
}

template <class D>
SampleRun sample_hybrid(int K, const std::set<int> &dfm_steps, const D &den, Label label,
                        const CfgConfig &cfg, const NoiseSchedule &sched, Rng &rng,
                        TimelineKind timeline = TimelineKind::linear) {
    SamplerConfig sc{SamplerKind::hybrid, K, timeline, cfg, {}, dfm_steps, false};
    return sample(den, label, sc, sched, rng);
}

// Conditional infill: valid tokens in x_partial are pinned for the whole
// trajectory, masked positions are re-drawn onto uniform slots and decoded
// by the chosen sampler. An all-masked x_partial reproduces unconditional
// sampling draw for draw; an all-valid one is the identity.
template <class D>
SampleRun sample_inpaint(const Sequence &x_partial, const D &den, Label label,
                         const SamplerConfig &sc, const NoiseSchedule &sched, Rng &rng,
                         uint64_t seed_tag = 0) {
    const VocabSpec &spec = den.vocab();
    require_conforms(x_partial, spec, "sample_inpaint");
    if (int(x_partial.size()) != den.seq_len())
        throw std::invalid_argument("sample_inpaint: x_partial length mismatch");
    std::vector<bool> frozen(x_partial.size());
    Sequence init = x_partial;
    for (size_t i = 0; i < init.size(); ++i) {
        frozen[i] = x_partial[i].is_valid();
        if (!frozen[i]) init[i] = Token::mask(1 + int(rng.uniform_int(uint64_t(spec.m))));
    }
    return detail::drive(init, &frozen, den, label, sc, sched, spec, rng, seed_tag);
}

}  // namespace maskdiff
