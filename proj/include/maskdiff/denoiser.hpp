#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "maskdiff/kernels.hpp"

namespace maskdiff {

// Per-position rows over the d valid codes; rows hold probabilities or
// logits depending on which call produced them.
struct DenoiserOutput {
    int L = 0;
    int d = 0;
    std::vector<double> data;  // row-major L x d

    DenoiserOutput() = default;
    DenoiserOutput(int L_, int d_) : L(L_), d(d_), data(size_t(L_) * size_t(d_), 0.0) {}

    double &at(int i, int v) { return data[size_t(i) * d + v]; }
    double at(int i, int v) const { return data[size_t(i) * d + v]; }
    std::span<const double> row(int i) const { return {data.data() + size_t(i) * d, size_t(d)}; }
    std::span<double> row(int i) { return {data.data() + size_t(i) * d, size_t(d)}; }
};

inline void softmax_row(std::span<double> row) {
    double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double &x : row) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double &x : row) x /= sum;
}

inline DenoiserOutput softmax_rows(DenoiserOutput logits) {
    for (int i = 0; i < logits.L; ++i) softmax_row(logits.row(i));
    return logits;
}

// log of a probability row; zero entries are floored so downstream
// arithmetic stays finite.
inline DenoiserOutput log_rows(DenoiserOutput probs) {
    for (double &x : probs.data) x = std::log(std::max(x, 1e-300));
    return probs;
}

// Bayes-exact denoiser: enumerates the dataset posterior. predict() returns
// the true per-position marginal over clean codes given the corrupted
// sequence, the query time and an optional class condition.
class ExactPosteriorDenoiser {
public:
    ExactPosteriorDenoiser(const ToyDataset &data, NoiseSchedule sched)
        : data_(&data), sched_(sched) {}

    int seq_len() const { return data_->L; }
    const VocabSpec &vocab() const { return data_->spec; }

    DenoiserOutput predict(const Sequence &x_t, double t, Label label) const {
        std::vector<double> post = posterior_over_examples(*data_, x_t, t, label, sched_);
        DenoiserOutput out(data_->L, data_->spec.d);
        for (size_t e = 0; e < post.size(); ++e) {
            if (post[e] == 0.0) continue;
            const Sequence &x0 = data_->examples[e].x0;
            for (int i = 0; i < out.L; ++i)
                out.at(i, x0[size_t(i)].index() - 1) += post[e];
        }
        return out;
    }

    DenoiserOutput logits(const Sequence &x_t, double t, Label label) const {
        return log_rows(predict(x_t, t, label));
    }

private:
    const ToyDataset *data_;
    NoiseSchedule sched_;
};

// Trainable denoiser, linear in a one-hot encoding of the corrupted
// sequence. Logit of code v at position i:
//
//   b[i,v] + C[row(label),i,v] + sum_j W[i,j,flat(x_t[j]),v]  (+ t*T[i,v])
//
// Class-bias row 0 belongs to the null label, row 1+c to class c. The time
// block T exists only when time_channel is set. Parameters live in one flat
// vector so optimizers and finite differences can treat them uniformly.
class LinearSoftmaxDenoiser {
public:
    LinearSoftmaxDenoiser(VocabSpec spec, int L, int num_classes, bool time_channel = false)
        : spec_(spec), L_(L), num_classes_(num_classes), time_channel_(time_channel) {
        if (L < 1) throw std::invalid_argument("LinearSoftmaxDenoiser: L must be >= 1");
        if (num_classes < 0) throw std::invalid_argument("LinearSoftmaxDenoiser: num_classes must be >= 0");
        params_.assign(param_count(), 0.0);
    }

    int seq_len() const { return L_; }
    const VocabSpec &vocab() const { return spec_; }
    int num_classes() const { return num_classes_; }
    bool has_time_channel() const { return time_channel_; }

    size_t w_off(int i, int j, int k, int v) const {
        return ((size_t(i) * L_ + j) * spec_.total() + k) * spec_.d + v;
    }
    size_t b_off(int i, int v) const { return w_size() + size_t(i) * spec_.d + v; }
    size_t c_off(int crow, int i, int v) const {
        return w_size() + b_size() + (size_t(crow) * L_ + i) * spec_.d + v;
    }
    size_t t_off(int i, int v) const {
        return w_size() + b_size() + c_size() + size_t(i) * spec_.d + v;
    }
    size_t param_count() const {
        return w_size() + b_size() + c_size() + (time_channel_ ? b_size() : 0);
    }

    std::vector<double> &params() { return params_; }
    const std::vector<double> &params() const { return params_; }

    // row into the class-bias block for a label
    int class_row(Label label) const {
        if (!label) return 0;
        if (*label < 0 || *label >= num_classes_)
            throw std::invalid_argument("LinearSoftmaxDenoiser: unknown class label");
        return 1 + *label;
    }

    DenoiserOutput predict_logits(const Sequence &x_t, double t, Label label) const {
        require_conforms(x_t, spec_, "predict_logits");
        if (int(x_t.size()) != L_)
            throw std::invalid_argument("predict_logits: sequence length mismatch");
        if (!(t >= 0.0 && t <= 1.0))
            throw std::domain_error("predict_logits: time outside [0, 1]");
        int crow = class_row(label);
        DenoiserOutput out(L_, spec_.d);
        for (int i = 0; i < L_; ++i) {
            for (int v = 0; v < spec_.d; ++v) {
                double z = params_[b_off(i, v)] + params_[c_off(crow, i, v)];
                if (time_channel_) z += t * params_[t_off(i, v)];
                out.at(i, v) = z;
            }
            for (int j = 0; j < L_; ++j) {
                int k = flat_index(x_t[size_t(j)], spec_);
                const double *w = params_.data() + w_off(i, j, k, 0);
                for (int v = 0; v < spec_.d; ++v) out.at(i, v) += w[v];
            }
        }
        return out;
    }

    DenoiserOutput logits(const Sequence &x_t, double t, Label label) const {
        return predict_logits(x_t, t, label);
    }

    DenoiserOutput predict(const Sequence &x_t, double t, Label label) const {
        return softmax_rows(predict_logits(x_t, t, label));
    }

    void save(const std::string &path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("LinearSoftmaxDenoiser::save: cannot open " + path);
        const char magic[8] = {'M', 'A', 'S', 'K', 'D', 'N', 'Z', '1'};
        out.write(magic, 8);
        uint32_t hdr[6] = {1u, uint32_t(L_), uint32_t(spec_.d), uint32_t(spec_.m),
                           uint32_t(num_classes_), time_channel_ ? 1u : 0u};
        out.write(reinterpret_cast<const char *>(hdr), sizeof hdr);
        uint64_t count = params_.size();
        out.write(reinterpret_cast<const char *>(&count), sizeof count);
        out.write(reinterpret_cast<const char *>(params_.data()),
                  std::streamsize(params_.size() * sizeof(double)));
        if (!out) throw std::runtime_error("LinearSoftmaxDenoiser::save: write failed for " + path);
    }

    static LinearSoftmaxDenoiser load(const std::string &path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("LinearSoftmaxDenoiser::load: cannot open " + path);
        char magic[8];
        in.read(magic, 8);
        if (!in || std::memcmp(magic, "MASKDNZ1", 8) != 0)
            throw std::runtime_error("LinearSoftmaxDenoiser::load: " + path + " is not a denoiser snapshot");
        uint32_t hdr[6];
        in.read(reinterpret_cast<char *>(hdr), sizeof hdr);
        if (!in) throw std::runtime_error("LinearSoftmaxDenoiser::load: truncated header in " + path);
        if (hdr[0] != 1)
            throw std::runtime_error("LinearSoftmaxDenoiser::load: unsupported snapshot version in " + path);
        LinearSoftmaxDenoiser den(VocabSpec(static_cast<int>(hdr[2]), static_cast<int>(hdr[3])),
                                  static_cast<int>(hdr[1]), static_cast<int>(hdr[4]),
                                  hdr[5] != 0);
        uint64_t count = 0;
        in.read(reinterpret_cast<char *>(&count), sizeof count);
        if (!in || count != den.params_.size())
            throw std::runtime_error("LinearSoftmaxDenoiser::load: parameter count mismatch in " + path);
        in.read(reinterpret_cast<char *>(den.params_.data()),
                std::streamsize(count * sizeof(double)));
        if (!in) throw std::runtime_error("LinearSoftmaxDenoiser::load: truncated parameters in " + path);
        return den;
    }

private:
    size_t w_size() const { return size_t(L_) * L_ * spec_.total() * spec_.d; }
    size_t b_size() const { return size_t(L_) * spec_.d; }
    size_t c_size() const { return size_t(num_classes_ + 1) * L_ * spec_.d; }

    VocabSpec spec_;
    int L_;
    int num_classes_;
    bool time_channel_;
    std::vector<double> params_;
};

}  // namespace maskdiff
