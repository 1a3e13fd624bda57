#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "maskdiff/denoiser.hpp"

namespace maskdiff {

struct CorruptedExample {
    Sequence x0;
    Sequence xt;
    double t = 0.0;
    Label label;
};

using CorruptedBatch = std::vector<CorruptedExample>;

// Weighted draw of a training batch from the dataset.
inline std::vector<LabeledExample> select_batch(const ToyDataset &data, int batch_size,
                                                Rng &rng) {
    if (batch_size < 1) throw std::invalid_argument("select_batch: batch_size must be >= 1");
    std::vector<double> weights;
    weights.reserve(data.examples.size());
    for (const LabeledExample &ex : data.examples) weights.push_back(ex.weight);
    std::vector<LabeledExample> batch;
    batch.reserve(size_t(batch_size));
    for (int b = 0; b < batch_size; ++b)
        batch.push_back(data.examples[size_t(rng.categorical(weights))]);
    return batch;
}

// Draws a time per example from Uniform(t_min, 1), corrupts, and drops the
// label to null with probability label_drop. Per-example draw order is
// fixed (time, corruption, drop), so two calls from equal rng states make
// identical batches.
inline CorruptedBatch corrupt_examples(std::span<const LabeledExample> batch,
                                       double t_min, double label_drop,
                                       const NoiseSchedule &sched, const VocabSpec &spec,
                                       Rng &rng) {
    if (!(t_min > 0.0 && t_min < 1.0))
        throw std::invalid_argument("corrupt_examples: t_min must lie in (0, 1)");
    CorruptedBatch out;
    out.reserve(batch.size());
    for (const LabeledExample &ex : batch) {
        CorruptedExample ce;
        ce.x0 = ex.x0;
        ce.t = t_min + (1.0 - t_min) * rng.uniform();
        ce.xt = corrupt(ex.x0, ce.t, sched, spec, rng);
        ce.label = (rng.uniform() < label_drop) ? Label{} : ex.label;
        out.push_back(std::move(ce));
    }
    return out;
}

enum class LossKind { ddm_linear, ddm_general, mvtm };

// Per-example time weight. The general form -alpha'(t)/(1 - alpha(t))
// reduces to exactly 1/t for the linear schedule because mask_fraction is
// the analytic 1 - alpha(t).
inline double loss_weight(LossKind kind, double t, const NoiseSchedule &sched) {
    switch (kind) {
        case LossKind::ddm_linear: return 1.0 / t;
        case LossKind::ddm_general: return -sched.alpha_prime(t) / sched.mask_fraction(t);
        case LossKind::mvtm: return 1.0;
    }
    throw std::logic_error("loss_weight: unknown kind");
}

struct LossReport {
    double loss = 0.0;
    std::vector<double> grad;
    size_t masked_positions = 0;
};

// Weighted cross-entropy over masked positions, averaged over the batch.
// Value-only form, works with any denoiser exposing predict().
template <class D>
double loss_value_on_batch(const D &den, const CorruptedBatch &batch, LossKind kind,
                           const NoiseSchedule &sched) {
    if (batch.empty()) throw std::invalid_argument("loss_value_on_batch: empty batch");
    double loss = 0.0;
    for (const CorruptedExample &ce : batch) {
        DenoiserOutput p = den.predict(ce.xt, ce.t, ce.label);
        double w = loss_weight(kind, ce.t, sched);
        for (size_t i = 0; i < ce.xt.size(); ++i) {
            if (!ce.xt[i].is_mask()) continue;
            loss -= w * std::log(std::max(p.at(int(i), ce.x0[i].index() - 1), 1e-300));
        }
    }
    return loss / double(batch.size());
}

// Loss plus the parameter gradient for the trainable denoiser.
inline LossReport loss_and_grad_on_batch(const LinearSoftmaxDenoiser &den,
                                         const CorruptedBatch &batch, LossKind kind,
                                         const NoiseSchedule &sched) {
    if (batch.empty()) throw std::invalid_argument("loss_and_grad_on_batch: empty batch");
    const VocabSpec &spec = den.vocab();
    LossReport rep;
    rep.grad.assign(den.param_count(), 0.0);
    double inv_b = 1.0 / double(batch.size());
    for (const CorruptedExample &ce : batch) {
        DenoiserOutput logits = den.predict_logits(ce.xt, ce.t, ce.label);
        DenoiserOutput probs = softmax_rows(logits);
        double w = loss_weight(kind, ce.t, sched) * inv_b;
        int crow = den.class_row(ce.label);
        for (size_t i = 0; i < ce.xt.size(); ++i) {
            if (!ce.xt[i].is_mask()) continue;
            ++rep.masked_positions;
            int target = ce.x0[i].index() - 1;
            rep.loss -= w * std::log(std::max(probs.at(int(i), target), 1e-300));
            // d(-w log p_target)/d logit_v = w (p_v - [v == target])
            for (int v = 0; v < spec.d; ++v) {
                double g = w * (probs.at(int(i), v) - (v == target ? 1.0 : 0.0));
                rep.grad[den.b_off(int(i), v)] += g;
                rep.grad[den.c_off(crow, int(i), v)] += g;
                if (den.has_time_channel()) rep.grad[den.t_off(int(i), v)] += ce.t * g;
                for (size_t j = 0; j < ce.xt.size(); ++j)
                    rep.grad[den.w_off(int(i), int(j), flat_index(ce.xt[j], spec), v)] += g;
            }
        }
    }
    return rep;
}

// Spec'd loss entry points: corrupt the given examples, then score. Equal
// rng states give bitwise-equal draws across the three, so on the linear
// schedule ddm_linear_loss and ddm_general_loss agree bit for bit.
inline LossReport ddm_linear_loss(const LinearSoftmaxDenoiser &den,
                                  std::span<const LabeledExample> batch,
                                  const NoiseSchedule &sched, double t_min,
                                  double label_drop, Rng &rng) {
    return loss_and_grad_on_batch(
        den, corrupt_examples(batch, t_min, label_drop, sched, den.vocab(), rng),
        LossKind::ddm_linear, sched);
}

inline LossReport ddm_general_loss(const LinearSoftmaxDenoiser &den,
                                   std::span<const LabeledExample> batch,
                                   const NoiseSchedule &sched, double t_min,
                                   double label_drop, Rng &rng) {
    return loss_and_grad_on_batch(
        den, corrupt_examples(batch, t_min, label_drop, sched, den.vocab(), rng),
        LossKind::ddm_general, sched);
}

inline LossReport mvtm_loss(const LinearSoftmaxDenoiser &den,
                            std::span<const LabeledExample> batch,
                            const NoiseSchedule &sched, double t_min,
                            double label_drop, Rng &rng) {
    return loss_and_grad_on_batch(
        den, corrupt_examples(batch, t_min, label_drop, sched, den.vocab(), rng),
        LossKind::mvtm, sched);
}

struct TrainConfig {
    LossKind loss = LossKind::ddm_linear;
    int steps = 3000;
    int batch = 32;
    double lr = 1e-2;
    enum class Opt { adam, sgd };
    Opt optimizer = Opt::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double t_min = 1e-3;
    double label_drop = 0.1;
    int log_every = 100;
    uint64_t seed = 0;
    bool time_channel = false;
};

struct MetricsRow {
    int step;
    double loss;
    double wall_ms;
};

struct TrainResult {
    LinearSoftmaxDenoiser final_denoiser;
    LinearSoftmaxDenoiser best_denoiser;
    double final_loss = 0.0;
    double best_loss = 0.0;
    int best_step = 0;
    std::vector<MetricsRow> metrics;
};

inline TrainResult train(const ToyDataset &data, const TrainConfig &cfg) {
    if (cfg.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    for (size_t c = 0; c < data.classes.size(); ++c) {
        if (data.classes[c] != int(c))
            throw std::invalid_argument("train: class labels must be dense 0..C-1");
    }
    NoiseSchedule sched;
    LinearSoftmaxDenoiser den(data.spec, data.L, int(data.classes.size()), cfg.time_channel);
    Rng rng = Rng::stream(cfg.seed, 0);

    std::vector<double> m, v;
    if (cfg.optimizer == TrainConfig::Opt::adam) {
        m.assign(den.param_count(), 0.0);
        v.assign(den.param_count(), 0.0);
    }

    TrainResult res{den, den, 0.0, 0.0, 0, {}};
    double best = std::numeric_limits<double>::infinity();
    auto t0 = std::chrono::steady_clock::now();

    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<LabeledExample> batch = select_batch(data, cfg.batch, rng);
        CorruptedBatch cb = corrupt_examples(batch, cfg.t_min, cfg.label_drop, sched,
                                             data.spec, rng);
        LossReport rep = loss_and_grad_on_batch(den, cb, cfg.loss, sched);
        if (!std::isfinite(rep.loss))
            throw std::runtime_error("train: loss diverged (non-finite) at step " +
                                     std::to_string(step));

        std::vector<double> &p = den.params();
        if (cfg.optimizer == TrainConfig::Opt::adam) {
            double bc1 = 1.0 - std::pow(cfg.beta1, step);
            double bc2 = 1.0 - std::pow(cfg.beta2, step);
            for (size_t k = 0; k < p.size(); ++k) {
                double g = rep.grad[k];
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                p[k] -= cfg.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.eps);
            }
        } else {
            for (size_t k = 0; k < p.size(); ++k) p[k] -= cfg.lr * rep.grad[k];
        }

        if (rep.loss < best) {
            best = rep.loss;
            res.best_denoiser = den;
            res.best_loss = rep.loss;
            res.best_step = step;
        }
        if (step % cfg.log_every == 0 || step == cfg.steps) {
            double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
            res.metrics.push_back({step, rep.loss, ms});
        }
        res.final_loss = rep.loss;
    }
    res.final_denoiser = den;
    return res;
}

// Central-difference check of the analytic gradient on a frozen batch.
// Returns the worst relative error over up to n_params sampled parameters.
inline double grad_check(const LinearSoftmaxDenoiser &den, const CorruptedBatch &batch,
                         LossKind kind, const NoiseSchedule &sched, Rng &rng,
                         int n_params = 200, double h = 1e-5) {
    LossReport rep = loss_and_grad_on_batch(den, batch, kind, sched);
    size_t count = den.param_count();
    std::set<size_t> chosen;
    if (count <= size_t(n_params)) {
        for (size_t k = 0; k < count; ++k) chosen.insert(k);
    } else {
        while (chosen.size() < size_t(n_params)) chosen.insert(rng.uniform_int(count));
    }
    LinearSoftmaxDenoiser probe = den;
    double worst = 0.0;
    for (size_t k : chosen) {
        double orig = probe.params()[k];
        probe.params()[k] = orig + h;
        double lp = loss_value_on_batch(probe, batch, kind, sched);
        probe.params()[k] = orig - h;
        double lm = loss_value_on_batch(probe, batch, kind, sched);
        probe.params()[k] = orig;
        double fd = (lp - lm) / (2.0 * h);
        double g = rep.grad[k];
        double rel = std::abs(fd - g) / std::max({1e-8, std::abs(fd), std::abs(g)});
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace maskdiff
